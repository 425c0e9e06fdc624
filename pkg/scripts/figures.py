"""
Make the standard figures from a set of runs: competence curves of the full agent, the
oracle, and the ablations; time allocation; the learned task graph; the goal-proposal
relations; the funnel curve; and heavy-object reachability.
"""

import numpy as np
import sciris as sc
import pylab as pl
import taskchain as tc

do_save  = True
do_show  = True
epochs   = 200
seed     = 1
folder   = sc.path('figures')
variants = dict(
    TaskChain   = dict(),
    Oracle      = dict(oracle='full'),
    No_surprise = dict(ablation='no_surprise'),
    Uniform     = dict(ablation='uniform_tasks'),
)


def savefig(fig, label):
    if do_save:
        folder.mkdir(exist_ok=True)
        sc.savefig(folder/f'{label}.png', fig=fig)
    return


def run_variant(label, run):
    run = sc.mergedicts(dict(seed=seed, epochs=epochs), run)
    return tc.run_experiment(run=run, out=folder/label, verbose=1)


def make_figs():
    """ Run every variant and make all figures """
    exps = {label:run_variant(label, run) for label,run in variants.items()}
    full = exps['TaskChain']

    fig = tc.plot_competence(list(exps.values()), labels=list(exps.keys()), show=False)
    savefig(fig, 'competence')
    savefig(tc.plot_competence(full, show=False), 'competence_tasks')
    savefig(tc.plot_time_allocation(full, show=False), 'allocation')
    savefig(tc.plot_task_graph(full.graph, show=False), 'task_graph')

    labels = full.arena.state_labels()
    for (i,j),net in sorted(full.proposer.nets.items()):
        title = f'{full.task_names[i]} after {full.task_names[j]}'
        fig = tc.plot_relations(net, labels=labels, title=title, show=False)
        savefig(fig, f'relations_{full.task_names[i]}__{full.task_names[j]}')

    curve = tc.funnel_curve(seed=seed)
    fig = pl.figure(figsize=(6,4))
    pl.plot(curve['n_positive'], curve['distance'], 'o-')
    pl.axhline(2*tc.make_pars().arena.delta, ls='--', c='k', label='2δ')
    pl.xlabel('Positive samples')
    pl.ylabel('Goal distance from the tool')
    pl.legend(frameon=False)
    sc.boxoff()
    savefig(fig, 'funnel')

    reach = tc.reachability(full, n_starts=10, grid=8, task='heavy', seed=seed)
    fig = pl.figure(figsize=(6,5))
    half = full.arena.half
    pl.imshow(reach.prob, origin='lower', extent=[-half, half, -half, half], vmin=0, vmax=1, cmap='viridis')
    pl.colorbar(label='Success probability')
    pl.xlabel('Goal x')
    pl.ylabel('Goal y')
    savefig(fig, 'reachability')

    if do_show:
        pl.show()
    return exps


if __name__ == '__main__':
    T = sc.timer()
    exps = make_figs()
    T.toc()
