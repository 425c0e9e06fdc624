"""
Scripted harnesses and analyses: collision rollouts for checking surprise timing, the
funnel-state curve of a goal proposer fed with tool bumps, and heavy-object reachability
"""

import numpy as np
import sciris as sc
from . import parameters as tcp
from . import playground as tcpg
from . import world_model as tcwm
from . import goal_proposal as tcgp
from . import control as tcc
from . import orchestrator as tco


__all__ = ['wander_rollout', 'collision_rollout', 'surprise_timing', 'funnel_curve', 'reachability']


def wander_rollout(arena, seed=None, steps=200, smoothing=0.9, stop_on_contact=True):
    """
    Smoothed random forces, as a reference of ordinary agent motion. By default the
    rollout ends just before the agent picks anything up.

    Returns:
        sc.objdict with states (steps+1, n) and actions (steps, 2)
    """
    rng = np.random.default_rng(seed)
    s = arena.reset(seed=rng.integers(2**32))
    force = np.zeros(2)
    states = [s]
    actions = []
    for t in range(steps):
        force = smoothing*force + (1 - smoothing)*rng.uniform(-1, 1, size=2)*arena.pars.max_force*3
        s = arena.step(force)
        if stop_on_contact and s[arena.i_flag].any():
            break
        states.append(s)
        actions.append(np.clip(force, -arena.pars.max_force, arena.pars.max_force))
    return sc.objdict(states=np.array(states), actions=np.array(actions).reshape(-1, 2))


def collision_rollout(arena, seed=None, tool=None, after=20):
    """
    The agent drives to the tool with a PD controller, picks it up, and carries it on
    toward a random point for a few more steps.

    Args:
        arena (Arena): arena with at least one tool
        seed (int): rollout seed
        tool (int): object index of the tool; by default the first tool in the roster
        after (int): steps to keep moving once the tool is held

    Returns:
        sc.objdict with states, actions, and contact (index of the first state in which the tool is held; None if never)
    """
    if tool is None:
        if 'tool' not in arena.kinds:
            errormsg = 'The collision harness needs an arena with a tool'
            raise ValueError(errormsg)
        tool = arena.kinds.index('tool')
    rng = np.random.default_rng(seed)
    s = arena.reset(seed=rng.integers(2**32))
    p = arena.pars
    fetch = tcc.PDController(arena, 0, max_force=p.max_force)
    lim = arena.half - p.goal_margin
    dest = rng.uniform(-lim, lim, size=2)
    states = [s]
    actions = []
    contact = None
    for t in range(p.tmax):
        held = bool(s[arena.i_flag[tool]])
        target = dest if held else s[arena.i_obj[tool]]
        a = fetch.act(s, target)
        s = arena.step(a)
        states.append(s)
        actions.append(a)
        if contact is None and s[arena.i_flag[tool]]:
            contact = len(states) - 1
        if contact is not None and len(states) - 1 >= contact + after:
            break
    return sc.objdict(states=np.array(states), actions=np.array(actions).reshape(-1, 2), contact=contact)


def surprise_timing(pars=None, n_trials=100, n_train=20, seed=1, tolerance=2, verbose=0):
    """
    Offset between the first tool contact and the first tool-task surprise on collision
    rollouts, with a forward model trained on ordinary motion only. The detector statistics
    come from ordinary motion too and stay frozen while the collision trials are scored.

    Args:
        pars (dict): full parameters (default: desk profile)
        n_trials (int): number of scored collision rollouts
        n_train (int): number of training rollouts
        seed (int): master seed
        tolerance (int): steps within which a surprise counts as on time
        verbose (int): print progress

    Returns:
        sc.objdict with offsets (nan where no surprise fired) and hit_rate
    """
    pars = tcp.make_pars() if pars is None else pars
    arena = tcpg.Arena(pars.arena)
    tool_task = arena.task_names.index('tool')
    fm = tcwm.ForwardModel(arena.dim, 2, goal_spaces=arena.goal_spaces, pars=pars.world, seed=seed)
    det = tcwm.SurpriseDetector(arena.n_tasks, theta=pars.surprise.theta, weight=pars.surprise.weight, warmup=pars.surprise.warmup)

    # Train the model on ordinary motion and settle the detector statistics
    for k in range(n_train):
        w = wander_rollout(arena, seed=tco.derive_seed(seed, 1, k))
        S, A = w.states, w.actions.reshape(-1, 2)
        if not len(A):
            continue
        fm.observe(S[:-1], A, S[1:])
        fm.train_buffer()
        _, e = fm.predict_error(S[:-1], A, S[1:])
        det.detect(e, update=True)
        sc.printv(f'Training rollout {k+1}/{n_train}, loss {fm.loss:0.4f}', 1, verbose)
    for k in range(n_train): # Enough ordinary motion for the warm-up
        w = wander_rollout(arena, seed=tco.derive_seed(seed, 3, k))
        if not len(w.actions):
            continue
        _, e = fm.predict_error(w.states[:-1], w.actions, w.states[1:])
        det.detect(e, update=True)

    offsets = np.full(n_trials, np.nan)
    for trial in range(n_trials):
        c = collision_rollout(arena, seed=tco.derive_seed(seed, 4, trial))
        if c.contact is None or not len(c.actions):
            continue
        _, e = fm.predict_error(c.states[:-1], c.actions, c.states[1:])
        flags = det.detect(e, update=False)[:, tool_task]
        fired = np.flatnonzero(flags)
        if len(fired):
            offsets[trial] = fired[np.argmin(np.abs(fired - c.contact))] - c.contact
    hit_rate = np.mean(np.abs(offsets) <= tolerance)
    return sc.objdict(offsets=offsets, hit_rate=hit_rate)


def funnel_curve(pars=None, n_rollouts=30, n_goals=50, seed=1, iterations=None):
    """
    Feed a goal proposer with scripted tool bumps, one rollout at a time, and track how far
    the proposed locomotion goals are from the tool.

    Each rollout contributes the states of the approach, labeled with a surprise of the tool
    task at first contact. After each one the network is trained and goals are proposed from
    freshly scrambled states.

    Returns:
        sc.dataframe with columns n_positive and distance (mean distance of proposed goals from the tool)
    """
    pars = tcp.make_pars() if pars is None else pars
    arena = tcpg.Arena(pars.arena)
    loco = 0
    tool = arena.task_names.index('tool')
    proposer = tcgp.GoalProposer(arena.dim, arena.goal_spaces, bounds=arena.bounds, pars=pars.gnet, seed=seed)
    goal_rng = np.random.default_rng(tco.derive_seed(seed, 5))
    starts = [arena.reset(seed=goal_rng.integers(2**32)) for i in range(n_goals)]

    rows = []
    for k in range(n_rollouts):
        c = collision_rollout(arena, seed=tco.derive_seed(seed, 6, k), after=0)
        if c.contact is None:
            continue
        approach = c.states[:c.contact+1]
        flags = np.zeros(len(approach))
        flags[-1] = 1
        labeled = tcgp.label_rollout(approach, flags)
        proposer.add_samples(tool, loco, labeled)
        proposer.train(iterations=iterations)

        dists = []
        for s in starts:
            g = proposer.propose(s, [loco, tool], 0, rng=goal_rng)
            dists.append(np.linalg.norm(g - s[arena.goal_spaces[tool]]))
        rows.append(dict(n_positive=proposer.n_positive((tool, loco)), distance=np.mean(dists)))
    return sc.dataframe(rows, columns=['n_positive', 'distance'])


def reachability(exp, n_starts=20, grid=5, task='heavy', seed=1):
    """
    Probability of solving a task with goals on a grid, from random starting states, using
    the current components of an experiment.

    Args:
        exp (Experiment): an initialized experiment
        n_starts (int): rollouts per grid cell
        grid (int): cells per side
        task (str/int): task to evaluate
        seed (int): seed

    Returns:
        sc.objdict with x and y (cell centers) and prob (grid×grid, rows are y)
    """
    if not exp.initialized:
        exp.initialize()
    arena = exp.arena
    final = arena.task_index(task)
    lim = arena.half - arena.pars.goal_margin
    edges = np.linspace(-lim, lim, grid+1)
    centers = (edges[:-1] + edges[1:])/2
    snap = exp.snapshot()
    prob = np.zeros((grid, grid))
    for iy,y in enumerate(centers):
        for ix,x in enumerate(centers):
            wins = 0
            for k in range(n_starts):
                rec = tco.run_episode(exp.pars, snap, tco.derive_seed(seed, iy, ix, k), final=final, goal=[x, y], explore=False)
                wins += rec.success
            prob[iy, ix] = wins/n_starts
    return sc.objdict(x=centers, y=centers, prob=prob)
