"""
Tests of rollouts, the training barrier, and the experiment loop
"""

import numpy as np
import pandas as pd
import sciris as sc
import pytest
import taskchain as tc

small = dict(
    run    = dict(epochs=2, workers=1, rollouts=3, oracle='full'),
    world  = dict(width=16, layers=1, iterations=5),
    gnet   = dict(iterations=5),
    policy = dict(width=16, iterations=2, batch_size=16),
)


def make_exp(**kwargs):
    """ A small experiment; keyword arguments are nested overrides """
    pars = sc.mergenested(sc.dcp(small), kwargs)
    return tc.Experiment(pars=pars, verbose=0)


def test_empty_episode():
    """ With T^max = 0 nothing happens and nothing is solved """
    exp = make_exp().initialize()
    snap = exp.snapshot()
    pars = tc.make_pars(arena=dict(tmax=0), run=dict(oracle='full'))
    rec = tc.run_episode(pars, snap, seed=1)
    assert rec.n_steps == 0 and len(rec.states) == 1
    assert rec.success == 0
    assert not rec.legs and not rec.switches
    assert rec.error is None
    return rec


def test_locomotion_episode():
    """ A single-task chain with the scripted controller solves the task early """
    exp = make_exp().initialize()
    snap = exp.snapshot()
    tmax = exp.pars.arena.tmax
    for seed in range(5):
        rec = tc.run_episode(exp.pars, snap, seed=seed, final='locomotion')
        assert rec.chain == [0]
        assert rec.success == 1 and rec.succ[0] == 1
        assert 0 < rec.n_steps < tmax
        assert len(rec.legs) == 1 and rec.legs[0]['stop'] == rec.n_steps
        assert not rec.switches
        assert np.all(rec.tasks == 0)
    return rec


def test_heavy_chain(n_seeds=40):
    """ In full-oracle mode the heavy object is reached through the tool, in that order """
    exp = make_exp().initialize()
    snap = exp.snapshot()
    expected = [(0, 1), (1, 2)]
    wins = 0
    for seed in range(n_seeds):
        rec = tc.run_episode(exp.pars, snap, seed=seed, final='heavy')
        assert rec.chain == [0, 1, 2]
        order = [(sw['from_task'], sw['to_task']) for sw in rec.switches]
        assert all(pair in expected for pair in order)
        assert order == sorted(order)
        steps = [sw['step'] for sw in rec.switches]
        assert steps == sorted(steps)
        for sw in rec.switches:
            assert np.array_equal(sw['state'], rec.states[sw['step']])
        if rec.success:
            assert order == expected
            wins += 1
        assert rec.n_steps <= exp.pars.arena.tmax
        assert len(rec.tasks) == rec.n_steps == len(rec.goals)
    assert wins/n_seeds >= 0.95
    return wins


def test_failed_rollout():
    """ A controller that raises produces a record with the traceback instead of an exception """
    exp = make_exp().initialize()
    snap = exp.snapshot()
    snap.controllers[0] = tc.PolicyInterface()
    rec = tc.run_episode(exp.pars, snap, seed=1, final='locomotion')
    assert rec.error is not None and 'NotImplementedError' in rec.error
    assert rec.n_steps == 0 and len(rec.states) == 1
    exp.train_phase([rec]) # Failed records only reach the forward model
    assert exp.stats.attempts.sum() == 0
    return rec


class FailingController(tc.PolicyInterface):
    """ Pushes right for a few steps, then raises """

    def __init__(self, n_ok=10):
        self.n_ok = n_ok
        self.calls = 0

    def act(self, state, goal, explore=False, rng=None):
        self.calls += 1
        if self.calls > self.n_ok:
            raise RuntimeError('Controller failure')
        return np.array([1.0, 0.0])


def test_failed_detector():
    """ A rollout that fails partway reaches the forward model but not the surprise statistics """
    exp = make_exp(surprise=dict(warmup=0, theta=0.01)).initialize()
    snap = exp.snapshot()
    snap.controllers[0] = FailingController()
    rec = tc.run_episode(exp.pars, snap, seed=1, final='locomotion')
    assert rec.error is not None and 'RuntimeError' in rec.error
    assert rec.n_steps == 10
    exp.train_phase([rec])
    assert all(st.count == 0 for st in exp.detector.stats)
    assert rec.surprise.sum() == 0
    assert len(exp.world.buffer) == 10
    return rec


def test_random_unsolvable(n_rollouts=200):
    """ With the oracle components the random object is still never brought to its goal """
    exp = make_exp(arena=dict(tmax=100)).initialize()
    snap = exp.snapshot()
    wins = [tc.run_episode(exp.pars, snap, seed=seed, final='random').success for seed in range(n_rollouts)]
    assert np.mean(wins) <= 0.02
    return wins


class IdleController(tc.PolicyInterface):
    """ Never pushes """

    def act(self, state, goal, explore=False, rng=None):
        return np.zeros(2)


def test_leg_budget(tmax=90):
    """ Steps left over by an early leg are shared among the legs after it """
    exp = make_exp(arena=dict(tmax=tmax)).initialize()
    snap = exp.snapshot()
    snap.controllers[1] = IdleController()
    n_early = 0
    for seed in range(10):
        rec = tc.run_episode(exp.pars, snap, seed=seed, final='heavy')
        first, second = rec.legs[:2]
        if not second['success']:
            assert second['stop'] - second['start'] == (tmax - first['stop'])//2
        n_early += first['success'] and first['stop'] < tmax//3
    assert n_early > 0
    return n_early


def test_snapshot_invariance():
    """ Rollouts leave every learned component untouched """
    exp = make_exp(run=dict(oracle='none'), policy=dict(controller='learned')).initialize()

    def fingerprint():
        arrays = [exp.selector.Q, exp.graph.QB] + exp.world.net.params
        for ctrl in exp.controllers:
            arrays += ctrl.policy.actor.params + ctrl.policy.q1.params
        return [a.copy() for a in arrays]

    before = fingerprint()
    records = exp.run_rollouts()
    after = fingerprint()
    assert len(records) == exp.pars.run.rollouts
    assert all(np.array_equal(a, b) for a,b in zip(before, after))
    assert len(exp.world.buffer) == 0
    return records


def test_selector_decay():
    """ Records without success or surprise drive the final task's action value toward zero """
    exp = make_exp().initialize()
    exp.selector.Q[:] = 0.5
    K = exp.arena.n_tasks
    for t in range(100):
        rec = tc.RolloutRecord(seed=t, final=2, goal=np.zeros(2), chain=[0, 1, 2], state_dim=exp.arena.dim, n_tasks=K)
        exp.train_phase([rec])
    assert exp.selector.Q[2] < 1e-3
    assert np.allclose(np.delete(exp.selector.Q, 2), 0.5)
    with pytest.raises(ValueError):
        exp.train_phase([])
    return exp.selector.Q


def test_collision_samples():
    """ A scripted tool collision adds positives to the tool-after-locomotion pool only """
    exp = make_exp(run=dict(oracle='none'), policy=dict(controller='pd')).initialize()
    arena = exp.arena
    K = arena.n_tasks
    tool = arena.task_names.index('tool')
    c = tc.collision_rollout(arena, seed=3, after=10)
    assert c.contact is not None

    T = len(c.actions)
    rec = tc.RolloutRecord(seed=3, final=tool, goal=np.zeros(2), chain=[0, tool], state_dim=arena.dim, n_tasks=K)
    rec.states = c.states
    rec.actions = c.actions
    rec.surprise = np.zeros((T, K), dtype=int)
    rec.surprise[c.contact, tool] = 1
    rec.legs = [dict(task=0, prev=None, start=0, stop=T, success=0)]
    exp._add_goal_samples(rec, K)

    assert exp.proposer.n_positive((tool, 0)) == 1
    assert exp.proposer.n_positive() == 1
    assert list(exp.proposer.nets.keys()) == [(tool, 0)]
    for i in range(1, K):
        assert len(exp.proposer.negatives[(i, 0)]) > 0
    return exp.proposer


def test_no_surprise():
    """ The ablation zeroes every surprise flag but leaves training otherwise unchanged """
    exp = make_exp(run=dict(ablation='no_surprise'), surprise=dict(warmup=0, theta=0.01))
    exp.initialize()
    exp.step()
    for rec in exp.records:
        assert rec.surprise.sum() == 0
    assert exp.detector.stats[0].count > 0
    return exp


def test_artifacts(tmp_path):
    """ Every epoch writes metrics with the documented columns, the task graph, and the rollouts if asked """
    out = tmp_path/'run'
    exp = make_exp(run=dict(save_rollouts=True))
    exp.out = sc.path(out)
    exp.run()
    names = exp.task_names
    expected = ['epoch', 'env_steps', 'competence']
    for name in names:
        expected += [f'sr_{name}', f'rho_{name}', f'q_{name}', f'selected_{name}']
    expected += ['n_positive', 'fm_loss'] + [f'critic_{name}' for name in names]
    df = pd.read_csv(out/'metrics.csv')
    assert list(df.columns) == expected
    assert len(df) == 2
    assert list(df['epoch']) == [1, 2]
    for epoch in [1, 2]:
        assert (out/f'B_epoch_{epoch:04d}.csv').exists()
        assert (out/f'gnet_epoch_{epoch:04d}').is_dir()
    assert (out/'config_resolved.json').exists()
    lines = (out/'rollouts.jsonl').read_text().splitlines()
    assert len(lines) == 2*exp.pars.run.rollouts
    return df


def test_determinism(tmp_path):
    """ Two runs with the same seed and worker count write identical metrics """
    texts = []
    for label in ['a', 'b']:
        exp = tc.run_experiment(pars=sc.dcp(small), out=tmp_path/label, verbose=0)
        texts.append((tmp_path/label/'metrics.csv').read_text())
    assert texts[0] == texts[1]
    other = tc.run_experiment(pars=sc.mergenested(sc.dcp(small), dict(run=dict(seed=2))), verbose=0)
    assert not other.metrics_df().equals(exp.metrics_df())
    return texts


def test_learned_smoke():
    """ The full learning system runs end to end on a tiny budget """
    exp = make_exp(run=dict(oracle='none', max_steps=150), arena=dict(tmax=50), policy=dict(controller='learned', her=True))
    exp.run()
    df = exp.metrics_df()
    assert 1 <= len(df) <= 2
    assert df['env_steps'].iloc[-1] > 0
    assert np.isfinite(df['fm_loss'].iloc[-1])
    assert exp.n_failed == 0
    return df


if __name__ == '__main__':
    T = sc.timer()
    rec = test_empty_episode()
    rec2 = test_locomotion_episode()
    wins = test_heavy_chain()
    rec3 = test_failed_rollout()
    rec4 = test_failed_detector()
    wins2 = test_random_unsolvable()
    n_early = test_leg_budget()
    records = test_snapshot_invariance()
    Q = test_selector_decay()
    gp = test_collision_samples()
    exp = test_no_surprise()
    df = test_artifacts(sc.path(sc.thisdir()) / 'temp_artifacts')
    texts = test_determinism(sc.path(sc.thisdir()) / 'temp_determinism')
    df2 = test_learned_smoke()
    T.toc()
