"""
Simple tests of plotting
"""

import numpy as np
import sciris as sc
import pytest
import taskchain as tc


def make_exp(out=None):
    pars = dict(run=dict(epochs=3, workers=1, rollouts=2, oracle='full'), world=dict(width=16, layers=1, iterations=5))
    return tc.run_experiment(pars=pars, out=out, verbose=0)


def test_plot_competence(tmp_path, show=False):
    """ Competence curves from an experiment, a file, and several results at once """
    sc.options(interactive=show)
    out = sc.path(tmp_path)/'run'
    exp = make_exp(out)
    figs = [tc.plot_competence(exp, show=show)]
    figs.append(tc.plot_competence([exp, exp.metrics_df()], labels=['Experiment', 'Dataframe'], show=show))
    figs.append(tc.plot_competence(out/'metrics.csv', tasks=False, show=show))
    return figs


def test_plot_allocation_and_graph(show=False):
    """ Time allocation and the task-graph heatmap """
    sc.options(interactive=show)
    exp = make_exp()
    f1 = tc.plot_time_allocation(exp, show=show)
    f2 = tc.plot_task_graph(exp.graph, show=show)
    f3 = tc.plot_task_graph(exp.graph.to_df(), cmap='viridis', show=show)
    return [f1, f2, f3]


def test_plot_relations(show=False):
    """ Relation weights of a goal-proposal network with coordinate labels """
    sc.options(interactive=show)
    arena = tc.Arena()
    net = tc.RelationalNet(arena.dim, init_scale=0.1, seed=1)
    net.set_pair(0, 2, w1=1, w2=-1)
    labels = arena.state_labels()
    assert labels[:3] == ['agent_x', 'agent_y', 'tool_x']
    assert len(labels) == arena.dim
    with pytest.raises(ValueError):
        tc.plot_relations(net, labels=labels[:6], show=show)
    fig = tc.plot_relations(net, labels=labels, title='Tool after locomotion', show=show)
    assert np.argmax(net.relation_matrix()[0]) == 2
    return fig


if __name__ == '__main__':
    figs = test_plot_competence(sc.path(sc.thisdir())/'temp_plotting', show=True)
    figs2 = test_plot_allocation_and_graph(show=True)
    fig = test_plot_relations(show=True)
