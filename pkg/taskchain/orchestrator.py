"""
The experiment loop: every epoch, rollout workers run episodes on frozen copies of the
agent; at the barrier the records are merged in worker order and all components are
trained; metrics and snapshots are then written to the output folder.
"""

import numpy as np
import sciris as sc
from . import parameters as tcp
from . import playground as tcpg
from . import world_model as tcwm
from . import curriculum as tccu
from . import task_graph as tctg
from . import goal_proposal as tcgp
from . import control as tcc


__all__ = ['RolloutRecord', 'Experiment', 'run_episode', 'train_phase', 'run_experiment', 'derive_seed']


def derive_seed(*keys):
    """ Reproducible 32-bit seed from a tuple of integers, e.g. (master, epoch, rollout) """
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


class RolloutRecord(sc.prettyobj):

    def __init__(self, seed, final, goal, chain, state_dim, n_tasks, movable=None):
        """
        Everything that happened in one rollout.

        Attributes:
            states (array): T+1 visited states
            actions (array): T actions
            tasks (array): active sub-task at every step
            goals (list): active goal at every step
            errors (array): per-task forward-model errors, shape (T, K)
            surprise (array): per-task surprise flags, filled in at the barrier
            legs (list): one entry per executed chain element: task, predecessor, start, stop, success
            switches (list): successful sub-goal switches: step, from_task, to_task, state
            succ (array): per-task success flags
            success (int): whether the final task was solved
            error (str): traceback if the rollout failed
        """
        self.seed     = seed
        self.final    = final
        self.goal     = goal
        self.chain    = chain
        self.movable  = movable
        self.states   = np.zeros((0, state_dim))
        self.actions  = np.zeros((0, 2))
        self.tasks    = np.zeros(0, dtype=int)
        self.goals    = []
        self.errors   = np.zeros((0, n_tasks))
        self.surprise = np.zeros((0, n_tasks), dtype=int)
        self.legs     = []
        self.switches = []
        self.succ     = np.zeros(n_tasks, dtype=int)
        self.success  = 0
        self.error    = None
        return


    @property
    def n_steps(self):
        return len(self.actions)


    def to_dict(self):
        """ JSON-friendly representation """
        d = dict(
            seed     = self.seed,
            final    = self.final,
            goal     = self.goal,
            chain    = self.chain,
            success  = self.success,
            succ     = self.succ,
            n_steps  = self.n_steps,
            legs     = self.legs,
            switches = self.switches,
            states   = self.states,
            actions  = self.actions,
            tasks    = self.tasks,
            surprise = self.surprise,
            error    = self.error,
        )
        return sc.jsonify(d)


def run_episode(pars, snapshot, seed, final=None, goal=None, explore=True):
    """
    Run one rollout with frozen components.

    The final task comes from the selector, its goal from the arena, and the chain from the
    task graph. Each sub-task's goal is refreshed every few steps from the goal proposer
    (the final task keeps the arena's goal); reaching a sub-goal switches to the next element
    of the chain, and a leg that runs out of its step budget (by default an even share of the
    steps still left, so time saved by early legs carries over) hands over without a switch.
    The rollout ends at T^max or when the final task is solved.

    Args:
        pars (dict): full parameters
        snapshot (dict): frozen components from Experiment.snapshot()
        seed (int): rollout seed
        final (int): fix the final task instead of asking the selector
        goal (array): fix the final goal instead of sampling it
        explore (bool): sample exploratory actions from learned controllers

    Returns:
        RolloutRecord; if a component raised, the record holds what was completed plus the traceback
    """
    rng = np.random.default_rng(seed)
    arena = tcpg.Arena(pars.arena)
    s = arena.reset(seed=derive_seed(seed, 1))
    final = snapshot.selector.sample(rng) if final is None else arena.task_index(final)
    goal = arena.sample_goal(final, rng) if goal is None else np.asarray(goal, dtype=float)
    chain = snapshot.graph.plan_chain(final, rng)
    K = arena.n_tasks
    rec = RolloutRecord(seed=seed, final=final, goal=goal, chain=chain, state_dim=arena.dim, n_tasks=K, movable=arena.movable)

    tmax = int(arena.pars.tmax)
    delta = arena.pars.delta
    refresh = pars.gnet.refresh
    last = len(chain) - 1

    def leg_budget(pos, start):
        """ Steps allowed to the leg at pos; by default an even share of the time still left """
        return pars.run.leg_budget or max(1, (tmax - start)//(len(chain) - pos))

    states = [s]
    actions = []
    tasks = []
    goals = []
    try:
        pos = 0
        start = 0
        t = 0
        prev = None
        budget = leg_budget(pos, start)
        while t < tmax:
            task = chain[pos]
            if pos == last:
                active = goal
            elif (t - start) % refresh == 0:
                active = snapshot.proposer.propose(s, chain, pos, rng=rng)
            a = snapshot.controllers[task].act(s, active, explore=explore, rng=rng)
            s = arena.step(a)
            t += 1
            states.append(s)
            actions.append(a)
            tasks.append(task)
            goals.append(np.array(active))

            reached = tccu.task_success(s, active, arena.goal_spaces[task], delta)
            timeout = (pos < last) and (t - start >= budget)
            if reached or timeout:
                rec.legs.append(dict(task=task, prev=prev, start=start, stop=t, success=int(reached)))
                if reached:
                    rec.succ[task] = 1
                if pos == last:
                    rec.success = int(reached)
                    break
                if reached:
                    rec.switches.append(dict(step=t, from_task=task, to_task=chain[pos+1], state=s.copy()))
                prev = task
                pos += 1
                start = t
                budget = leg_budget(pos, start)

        if not rec.success and t > start: # Leg cut off by T^max
            rec.legs.append(dict(task=chain[pos], prev=prev, start=start, stop=t, success=0))

        rec.states  = np.array(states)
        rec.actions = np.array(actions).reshape(-1, 2)
        rec.tasks   = np.array(tasks, dtype=int)
        rec.goals   = goals
        if rec.n_steps:
            _, rec.errors = snapshot.world.predict_error(rec.states[:-1], rec.actions, rec.states[1:])
        rec.surprise = np.zeros((rec.n_steps, K), dtype=int)

    except Exception:
        rec.error = sc.traceback()
        n = len(actions)
        rec.states  = np.array(states[:n+1])
        rec.actions = np.array(actions).reshape(-1, 2)
        rec.tasks   = np.array(tasks, dtype=int)
        rec.goals   = goals
        rec.errors  = np.zeros((n, K))
        rec.surprise = np.zeros((n, K), dtype=int)
    return rec


def _run_episode(seed, pars, snapshot):
    return run_episode(pars, snapshot, seed)


class Experiment(sc.prettyobj):

    def __init__(self, pars=None, out=None, verbose=1, profile='desk', **kwargs):
        """
        A full learning run: arena, forward model and surprise detector, final-task selector,
        task graph, goal proposer, and one controller per task.

        Args:
            pars (dict): nested parameter overrides (or a full tree from make_pars())
            out (str): output folder for metrics and snapshots; None to keep everything in memory
            verbose (int): 0 silent, 1 per-epoch summary, 2 per-rollout detail
            profile (str): 'desk' or 'large' ('paper' is the same as 'large')
            kwargs (dict): further nested overrides by section, e.g. run=dict(epochs=5)

        **Example**::

            exp = taskchain.Experiment(run=dict(epochs=3, workers=1, oracle='full'), verbose=0)
            exp.run()
            exp.metrics_df()
        """
        self.pars = tcp.make_pars(profile, pars=pars, **kwargs)
        self.out = sc.path(out) if out is not None else None
        self.verbose = verbose
        self.initialized = False
        self.validate()
        return


    def validate(self):
        """ Check that the parameters can be run """
        r = self.pars.run
        if r.epochs < 0:
            errormsg = f'Number of epochs must be non-negative, not {r.epochs}'
            raise ValueError(errormsg)
        if r.rollouts < 1:
            errormsg = f'There must be ≥1 rollouts per epoch, not {r.rollouts}'
            raise ValueError(errormsg)
        return


    @property
    def oracle_graph(self):
        return self.pars.run.oracle in ['graph', 'full']

    @property
    def oracle_goals(self):
        return self.pars.run.oracle in ['goals', 'full']


    def initialize(self):
        """ Create every component in its uninformed state """
        p = self.pars
        seed = p.run.seed
        self.arena = arena = tcpg.Arena(p.arena)
        K = arena.n_tasks
        self.task_names = arena.task_names
        self.world = tcwm.ForwardModel(arena.dim, 2, goal_spaces=arena.goal_spaces, pars=p.world, seed=derive_seed(seed, 101))
        self.detector = tcwm.SurpriseDetector(K, theta=p.surprise.theta, weight=p.surprise.weight, warmup=p.surprise.warmup)
        self.stats = tccu.TaskStats(K, window=p.selector.window)
        sel = p.selector
        self.selector = tccu.TaskSelector(K, lr=sel.lr, beta=sel.beta, eps=sel.eps, floor=sel.floor,
                                          uniform=(p.run.ablation == 'uniform_tasks'))
        if self.oracle_graph:
            self.graph = tctg.oracle_graph(arena.task_names, tmax=arena.pars.tmax)
        else:
            pl = p.planner
            self.graph = tctg.TaskGraph(K, tmax=arena.pars.tmax, beta=pl.beta, window=pl.window, eps=pl.eps, weight=pl.weight, task_names=arena.task_names)
        self.proposer = tcgp.GoalProposer(arena.dim, arena.goal_spaces, bounds=arena.bounds, pars=p.gnet,
                                          seed=derive_seed(seed, 102), oracle=self.oracle_goals)
        self.controllers = tcc.make_controllers(arena, pars=p, seed=derive_seed(seed, 103))
        self.epoch = 0
        self.env_steps = 0
        self.metrics = []
        self.diagnostics = [sc.objdict() for i in range(K)]
        self.records = []
        self.n_failed = 0
        self.initialized = True
        return self


    def snapshot(self):
        """ Frozen copies of everything rollout workers read """
        snap = sc.objdict(
            selector    = sc.dcp(self.selector),
            graph       = sc.dcp(self.graph),
            proposer    = self.proposer.snapshot(),
            controllers = [c.snapshot() for c in self.controllers],
            world       = self.world.snapshot(),
        )
        return snap


    def run_rollouts(self):
        """ Run one epoch's rollouts, in parallel if requested; records come back in rollout order """
        p = self.pars
        snap = self.snapshot()
        seeds = [derive_seed(p.run.seed, self.epoch, r) for r in range(p.run.rollouts)]
        parallel = p.run.parallel and p.run.workers > 1
        records = sc.parallelize(_run_episode, iterkwargs=[dict(seed=s) for s in seeds],
                                 kwargs=dict(pars=p, snapshot=snap), ncpus=p.run.workers, serial=not parallel)
        for rec in records:
            if rec.error is not None:
                self.n_failed += 1
                sc.printv(f'Rollout {rec.seed} failed: {rec.error.splitlines()[-1]}', 1, self.verbose)
            else:
                outcome = 'solved' if rec.success else 'failed'
                names = [self.task_names[i] for i in rec.chain]
                sc.printv(f'  {sc.strjoin(names, sep=" → ")}: {outcome} in {rec.n_steps} steps', 2, self.verbose)
        return records


    def train_phase(self, records):
        """
        Train every component from the new records, in order: forward model, surprise,
        final-task selector, task graph, goal proposer, controllers.
        """
        if not len(records):
            errormsg = 'The training phase needs at least one rollout record'
            raise ValueError(errormsg)
        p = self.pars
        K = self.arena.n_tasks
        no_surprise = (p.run.ablation == 'no_surprise')

        # Forward model
        for rec in records:
            if rec.n_steps:
                self.world.observe(rec.states[:-1], rec.actions, rec.states[1:])
        self.world.train_buffer()

        # Surprise, with the detector statistics updated from the same streams; failed rollouts keep zero surprise
        for rec in records:
            if rec.n_steps and rec.error is None:
                flags = self.detector.detect(rec.errors, update=True)
                rec.surprise = np.zeros_like(flags) if no_surprise else flags

        valid = [rec for rec in records if rec.error is None]

        # Final-task selector
        for rec in valid:
            self.stats.update(rec.final, rec.success)
            sur = rec.surprise[:, rec.final] if rec.n_steps else None
            reward = tccu.bandit_reward(self.stats.rho[rec.final], sur, beta=p.selector.beta)
            self.selector.update(rec.final, reward)

        # Task graph
        if not self.graph.frozen:
            tmax = self.arena.pars.tmax
            for rec in valid:
                for leg in rec.legs:
                    i = leg['task']
                    runtime = leg['stop'] - leg['start'] if leg['success'] else tmax
                    sur = rec.surprise[:, i] if rec.n_steps else 0
                    self.graph.update(i, leg['prev'], runtime, surprise=sur)

        # Goal proposer
        if not self.oracle_goals:
            for rec in valid:
                self._add_goal_samples(rec, K)
            self.proposer.train()

        # Controllers
        for rec in valid:
            for leg in rec.legs:
                a, b = leg['start'], leg['stop']
                g = np.array(rec.goals[a:b])
                self.controllers[leg['task']].observe(rec.states[a:b], rec.actions[a:b], rec.states[a+1:b+1], g)
        for i,ctrl in enumerate(self.controllers):
            diag = ctrl.train()
            if diag:
                self.diagnostics[i] = diag
        return


    def _add_goal_samples(self, rec, K):
        """ Label every leg of task j for every other task i and pass it to the proposer """
        surprise = np.vstack([rec.surprise, np.zeros((1, K), dtype=int)])
        for li,leg in enumerate(rec.legs):
            j = leg['task']
            a, b = leg['start'], leg['stop']
            nxt = rec.legs[li+1] if li + 1 < len(rec.legs) else None
            for i in range(K):
                if i == j:
                    continue
                switched = bool(leg['success'] and nxt is not None and nxt['task'] == i)
                succ = nxt['success'] if switched else 0
                labeled = tcgp.label_rollout(rec.states[a:b+1], surprise[a:b+1, i],
                                             switch_steps=[b-a] if switched else None, succ=succ)
                self.proposer.add_samples(i, j, labeled)
        return


    def record_metrics(self, records):
        """ Append one row of metrics for the epoch """
        self.env_steps += sum(rec.n_steps for rec in records)
        for rec in records:
            if rec.error is None:
                self.selector.counts[rec.final] += 1
        row = sc.objdict(epoch=self.epoch, env_steps=self.env_steps, competence=self.stats.competence)
        for i,name in enumerate(self.task_names):
            row[f'sr_{name}'] = self.stats.sr[i]
            row[f'rho_{name}'] = self.stats.rho[i]
            row[f'q_{name}'] = self.selector.Q[i]
            row[f'selected_{name}'] = self.selector.counts[i]
        row.n_positive = self.proposer.n_positive()
        row.fm_loss = self.world.loss
        for i,name in enumerate(self.task_names):
            row[f'critic_{name}'] = self.diagnostics[i].get('critic_loss', np.nan)
        self.metrics.append(row)
        return row


    def metrics_df(self):
        """ All metrics rows as a dataframe """
        return sc.dataframe(self.metrics)


    def save_epoch(self, records):
        """ Write the metrics table, the task graph, the goal-proposal weights, and optionally the rollouts """
        if self.out is None:
            return
        tag = f'{self.epoch:04d}'
        folder = self.out
        try:
            folder.mkdir(parents=True, exist_ok=True)
            self.metrics_df().to_csv(folder / 'metrics.csv', index=False)
            self.graph.to_df().to_csv(folder / f'B_epoch_{tag}.csv', index=False)
            gdir = folder / f'gnet_epoch_{tag}'
            gdir.mkdir(exist_ok=True)
            labels = self.arena.state_labels()
            for (i,j),net in sorted(self.proposer.nets.items()):
                net.to_df(labels).to_csv(gdir / f'{self.task_names[i]}__{self.task_names[j]}.csv', index=False)
        except OSError as E:
            errormsg = f'Could not write results to {folder}: {E}'
            raise OSError(errormsg) from E
        if self.pars.run.save_rollouts:
            tcpg.save_jsonl(folder / 'rollouts.jsonl', [rec.to_dict() for rec in records], append=(self.epoch > 1))
        return


    def save_config(self):
        """ Echo the resolved parameters """
        if self.out is None:
            return
        self.out.mkdir(parents=True, exist_ok=True)
        filename = self.out / 'config_resolved.json'
        try:
            sc.savejson(filename, self.pars)
        except Exception as E:
            errormsg = f'Could not write the configuration to {filename}: {E}'
            raise OSError(errormsg) from E
        return filename


    def step(self):
        """ One epoch: rollouts, barrier, training, metrics """
        self.epoch += 1
        records = self.run_rollouts()
        self.train_phase(records)
        row = self.record_metrics(records)
        self.save_epoch(records)
        self.records = records
        return row


    def run(self):
        """ Run all epochs (or until the step budget is used up) """
        if not self.initialized:
            self.initialize()
        p = self.pars
        if self.verbose:
            sc.heading(f'Running {p.run.epochs} epochs ({p.profile} profile, ablation={p.run.ablation}, oracle={p.run.oracle})')
        self.save_config()
        T = sc.tic()
        while self.epoch < p.run.epochs:
            row = self.step()
            sc.printv(f'Epoch {self.epoch}: {row.env_steps} steps, competence {row.competence:0.2f} ({sc.toc(T, output=True):0.1f} s)', 1, self.verbose)
            if p.run.max_steps is not None and self.env_steps >= p.run.max_steps:
                break
        return self


def train_phase(exp, records):
    """ Train all components of an experiment on new records; see Experiment.train_phase() """
    exp.train_phase(records)
    return exp


def run_experiment(pars=None, out=None, verbose=1, **kwargs):
    """
    Create and run an experiment

    **Example**::

        exp = taskchain.run_experiment(run=dict(epochs=20, oracle='full'), out='results')
    """
    exp = Experiment(pars=pars, out=out, verbose=verbose, **kwargs)
    exp.run()
    return exp
