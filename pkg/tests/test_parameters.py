"""
Tests of the parameter profiles and overrides
"""

import sciris as sc
import pytest
import taskchain as tc


def test_profiles():
    """ The two profiles differ in scale, and every section is present """
    desk = tc.make_pars()
    large = tc.make_pars('large')
    for key in ['arena', 'world', 'surprise', 'selector', 'planner', 'gnet', 'policy', 'run']:
        assert key in desk and key in large
    assert desk.arena.size == 10 and desk.arena.tmax == 400
    assert large.arena.size == 20 and large.arena.tmax == 1600
    paper = tc.make_pars('paper')
    assert paper.profile == 'large' and paper.arena.tmax == 1600
    assert paper.policy.discount == large.policy.discount
    assert large.world.layers > desk.world.layers
    assert desk.run.rollouts == desk.run.workers
    with pytest.raises(ValueError):
        tc.make_pars('laptop')
    return desk


def test_overrides():
    """ Nested overrides merge into the defaults; unknown keys and bad choices are errors """
    pars = tc.make_pars(run=dict(epochs=3, oracle='full'), arena=dict(tmax=100))
    assert pars.run.epochs == 3 and pars.arena.tmax == 100
    assert pars.arena.size == 10
    assert pars.policy.controller == 'pd' # The full oracle uses the scripted controllers
    assert tc.make_pars(pars=dict(profile='large')).profile == 'large'

    for bad in [dict(arena=dict(colour='red')), dict(learning=dict(lr=1)), dict(run=dict(ablation='no_graph')),
                dict(run=dict(oracle='half')), dict(policy=dict(controller='mpc')), dict(run=dict(workers=0))]:
        with pytest.raises(ValueError):
            tc.make_pars(pars=bad)
    with pytest.raises(ValueError):
        tc.make_arena_pars(frction=1)
    return pars


def test_load_config(tmp_path):
    """ Configuration files hold a JSON object of overrides """
    good = tmp_path/'good.json'
    sc.savejson(good, dict(run=dict(seed=7)))
    data = tc.load_config(good)
    assert tc.make_pars(pars=data).run.seed == 7

    bad = tmp_path/'bad.json'
    sc.savejson(bad, [1, 2, 3])
    with pytest.raises(ValueError):
        tc.load_config(bad)
    with pytest.raises(OSError):
        tc.load_config(tmp_path/'missing.json')
    return data


if __name__ == '__main__':
    desk = test_profiles()
    pars = test_overrides()
    data = test_load_config(sc.path(sc.thisdir())/'temp_parameters')
