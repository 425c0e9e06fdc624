"""
Tests of rewards, replay, hindsight relabeling, and the controllers
"""

import numpy as np
import sciris as sc
import pytest
import taskchain as tc


def test_task_reward():
    """ Negative squared distance in the task's goal space """
    s = np.array([1.0, 2.0, 3.0, 4.0])
    assert tc.task_reward(s, [3.0, 4.0], [2, 3]) == 0
    assert tc.task_reward(s, [1.0, 3.0], [0, 1]) == -1
    rng = np.random.default_rng(1)
    S = rng.normal(size=(50, 4))
    G = rng.normal(size=(50, 2))
    r = tc.task_reward(S, G, [1, 2])
    assert np.allclose(r, -((S[:, [1, 2]] - G)**2).sum(axis=1))
    assert np.all(r <= 0)
    with pytest.raises(ValueError):
        tc.task_reward(s, [1.0, 2.0, 3.0], [0, 1])
    return r


def test_replay_buffer():
    """ Capacity is respected and sampling draws stored rows """
    buf = tc.ReplayBuffer(100, fields=dict(s=3, r=1))
    for k in range(5):
        buf.add(s=np.full((30, 3), k), r=np.full(30, k))
    assert len(buf) == 100
    data = buf.get()
    assert set(np.unique(data.s)) == {1, 2, 3, 4} # The oldest rows were overwritten
    batch = buf.sample(64, rng=1)
    assert batch.s.shape == (64, 3) and batch.r.shape == (64, 1)
    assert np.allclose(batch.s[:, 0], batch.r[:, 0])
    with pytest.raises(ValueError):
        buf.add(s=np.zeros((2, 3)))
    with pytest.raises(ValueError):
        tc.ReplayBuffer(10, fields=dict(s=1)).sample(5)
    return buf


def test_her_relabel():
    """ Relabeling keeps (s, a, s') and only changes goals to achieved future states """
    rng = np.random.default_rng(1)
    T = 20
    s = rng.normal(size=(T, 4))
    a = rng.normal(size=(T, 2))
    s2 = rng.normal(size=(T, 4))
    episode = dict(s=s, a=a, s2=s2, g=np.zeros((T, 2)))
    indices = [2, 3]
    rel = tc.her_relabel(episode, indices, k=4, rng=2)
    assert len(rel.s) == 4*T
    t = np.repeat(np.arange(T), 4)
    assert np.array_equal(rel.s, s[t]) and np.array_equal(rel.a, a[t]) and np.array_equal(rel.s2, s2[t])
    achieved = s2[:, indices]
    for g,step in zip(rel.g, t):
        assert any(np.array_equal(g, achieved[u]) for u in range(step, T))

    last = rel.s2[-4:]
    assert np.all(tc.task_reward(last, rel.g[-4:], indices) == 0) # The final step can only relabel to itself

    empty = tc.her_relabel(episode, indices, k=0)
    assert len(empty.s) == 0
    final = tc.her_relabel(episode, indices, k=2, strategy='final')
    assert np.all(final.g == achieved[-1])
    return rel


def test_pd_controller():
    """ Zero force at rest on the goal; the locomotion controller reaches random goals """
    arena = tc.Arena()
    s = arena.reset(seed=1)
    pd = tc.PDController(arena, 0)
    assert np.allclose(pd.act(s, s[arena.i_agent]), 0)
    assert np.allclose(tc.pd_oracle_act(s, s[arena.i_agent], 0, arena), 0)

    tool = tc.PDController(arena, 1)
    assert np.allclose(tool.target(s, [0, 0]), s[arena.i_obj[0]]) # Fetch first

    n_trials = 200
    wins = 0
    rng = np.random.default_rng(2)
    for trial in range(n_trials):
        s = arena.reset(seed=trial)
        goal = arena.sample_goal(0, rng)
        for t in range(arena.pars.tmax):
            s = arena.step(pd.act(s, goal))
            if tc.task_success(s, goal, arena.i_agent, arena.pars.delta):
                wins += 1
                break
    assert wins/n_trials >= 0.99
    return wins


def test_actor_critic_act():
    """ Actions stay within bounds, are reproducible, and collapse to the mean without noise """
    ac = tc.ActorCritic(6, action_dim=2, max_force=5.0, seed=1)
    rng = np.random.default_rng(1)
    obs = rng.normal(0, 3, size=(10_000, 6))
    acts = tc.ac_act(ac, obs, explore=True, rng=rng)
    assert acts.shape == (10_000, 2)
    assert np.all(np.abs(acts) <= 5.0)

    a1 = [ac.act(obs[i], explore=True, rng=np.random.default_rng(7)) for i in range(5)]
    a2 = [ac.act(obs[i], explore=True, rng=np.random.default_rng(7)) for i in range(5)]
    assert np.array_equal(a1, a2)

    ac.actor.weights[-1][:, 2:] = 0
    ac.actor.biases[-1][2:] = -1e3 # log-std far below the clamp
    for x in obs[:20]:
        assert np.allclose(ac.act(x, explore=True, rng=rng), ac.act(x, explore=False), atol=1e-6)
    return acts


def test_actor_critic_train():
    """ Critic loss on a fixed batch of terminal transitions falls; targets track the critics """
    rng = np.random.default_rng(1)
    n = 64
    batch = sc.objdict(
        obs  = rng.normal(size=(n, 4)),
        a    = rng.uniform(-1, 1, size=(n, 2)),
        r    = -rng.uniform(0, 1, size=n),
        obs2 = rng.normal(size=(n, 4)),
        done = np.ones(n),
    )
    ac = tc.ActorCritic(4, action_dim=2, max_force=1.0, seed=2, width=32, lr=3e-3)
    loss0 = ac.critic_loss(batch)
    target_before = [p.copy() for p in ac.q1_target.params]
    diag = ac.update(batch)
    for b,t,o in zip(target_before, ac.q1_target.params, ac.q1.params):
        assert np.linalg.norm(t - b) <= ac.pars.tau*np.linalg.norm(o - b) + 1e-12
    for it in range(99):
        diag = ac.update(batch)
    assert ac.critic_loss(batch) < 0.5*loss0
    assert set(diag.keys()) == {'critic_loss', 'actor_loss', 'q_mean', 'entropy'}

    buf = tc.ReplayBuffer(1000, fields=dict(obs=4, a=2, r=1, obs2=4, done=1))
    buf.add(**batch)
    diag = tc.ac_train(ac, buf, iterations=5, batch_size=32)
    assert np.isfinite(diag.critic_loss)
    with pytest.raises(ValueError):
        tc.ac_train(ac, tc.ReplayBuffer(10, fields=dict(obs=4, a=2, r=1, obs2=4, done=1)), batch_size=32)
    return diag


def test_learned_controller():
    """ Per-task controllers share no parameters and store hindsight copies when enabled """
    arena = tc.Arena()
    pars = tc.make_pars(policy=dict(her=True, her_k=2, batch_size=8, iterations=3, width=16))
    ctrls = tc.make_controllers(arena, pars=pars, seed=1)
    assert len(ctrls) == arena.n_tasks
    assert ctrls[0].policy.actor is not ctrls[1].policy.actor
    assert not np.allclose(ctrls[0].policy.actor.weights[0], ctrls[1].policy.actor.weights[0])

    s = arena.reset(seed=1)
    states = [s]
    actions = []
    for t in range(10):
        a = ctrls[0].act(s, np.zeros(2), explore=True, rng=np.random.default_rng(t))
        assert np.all(np.abs(a) <= arena.pars.max_force)
        s = arena.step(a)
        states.append(s)
        actions.append(a)
    S = np.array(states)
    ctrls[0].observe(S[:-1], np.array(actions), S[1:], np.zeros((10, 2)))
    assert len(ctrls[0].buffer) == 10 + 2*10
    diag = ctrls[0].train()
    assert np.isfinite(diag.critic_loss)
    assert not ctrls[1].train() # Nothing stored yet

    snap = ctrls[0].snapshot()
    assert snap.buffer is None and len(ctrls[0].buffer) == 30

    pd = tc.make_controllers(arena, pars=tc.make_pars(policy=dict(controller='pd')))
    assert isinstance(pd[2], tc.PDController)
    return diag


def reach_rate(arena, ctrl, seeds, explore=False):
    """ Fraction of locomotion goals reached within T^max """
    wins = 0
    for seed in seeds:
        s = arena.reset(seed=seed)
        goal = arena.sample_goal(0, seed)
        for t in range(arena.pars.tmax):
            s = arena.step(ctrl.act(s, goal, explore=explore))
            if tc.task_success(s, goal, arena.i_agent, arena.pars.delta):
                wins += 1
                break
    return wins/len(seeds)


def test_learned_locomotion(n_episodes=200):
    """ A learned controller trained with the default schedule reaches locomotion goals """
    pars = tc.make_pars(arena=dict(objects=[], size=6, tmax=40),
                        policy=dict(width=32, iterations=0, update_ratio=1, discount=0.95, her=True))
    arena = tc.Arena(pars.arena)
    ctrl = tc.make_controllers(arena, pars=pars, seed=1)[0]
    evals = range(10_000, 10_050)
    before = reach_rate(arena, ctrl, evals)

    rng = np.random.default_rng(1)
    for ep in range(n_episodes):
        s = arena.reset(seed=ep)
        goal = arena.sample_goal(0, ep)
        S, A = [s], []
        for t in range(arena.pars.tmax):
            a = ctrl.act(s, goal, explore=True, rng=rng)
            s = arena.step(a)
            S.append(s)
            A.append(a)
            if tc.task_success(s, goal, arena.i_agent, arena.pars.delta):
                break
        S = np.array(S)
        ctrl.observe(S[:-1], np.array(A), S[1:], np.tile(goal, (len(A), 1)))
        ctrl.train()
        assert ctrl.new == 0 or len(ctrl.buffer) < pars.policy.batch_size

    after = reach_rate(arena, ctrl, evals)
    assert after >= 0.7
    assert after > before + 0.3
    return after


if __name__ == '__main__':
    T = sc.timer()
    r = test_task_reward()
    buf = test_replay_buffer()
    rel = test_her_relabel()
    wins = test_pd_controller()
    acts = test_actor_critic_act()
    diag = test_actor_critic_train()
    diag2 = test_learned_controller()
    rate = test_learned_locomotion()
    T.toc()
