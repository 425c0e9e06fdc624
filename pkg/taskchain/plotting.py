"""
Figures from experiment results: competence curves, time allocation across tasks, the
task-graph matrix, and the goal-proposal weights
"""

import os
import numpy as np
import pandas as pd
import sciris as sc
import pylab as pl


__all__ = ['plot_competence', 'plot_time_allocation', 'plot_task_graph', 'plot_relations']


def _metrics(results):
    """ Accept an experiment, a metrics dataframe, or a path to metrics.csv """
    if hasattr(results, 'metrics_df'):
        return results.metrics_df()
    if isinstance(results, (str, os.PathLike)):
        return sc.dataframe(pd.read_csv(results))
    return results


def _task_names(df, prefix='sr_'):
    return [c[len(prefix):] for c in df.columns if c.startswith(prefix)]


def plot_competence(results, labels=None, tasks=True, fig=None, figkw=None, linekw=None, show=True):
    """
    Overall competence (and optionally each task's success rate) against environment steps

    Args:
        results (Experiment/dataframe/str/list): one result, or a list of results to compare
        labels (list): legend labels when comparing several results
        tasks (bool): also plot the per-task success rates (for a single result)
        fig (Figure): if supplied, plot using this figure
        figkw (dict): passed to pl.figure()
        linekw (dict): passed to pl.plot()
        show (bool): whether or not to show the figure

    **Example**::

        exp = taskchain.run_experiment(run=dict(epochs=10, oracle='full'), verbose=0)
        taskchain.plot_competence(exp)
    """
    figkw  = sc.mergedicts(dict(figsize=(8,5)), figkw)
    linekw = sc.mergedicts(dict(lw=2, alpha=0.9), linekw)
    many = isinstance(results, list)
    dfs = [_metrics(r) for r in sc.tolist(results)]
    labels = labels if labels is not None else [f'Run {i+1}' for i in range(len(dfs))]

    if fig is None:
        fig = pl.figure(**figkw)
    ax = pl.subplot(1,1,1)
    for df,label in zip(dfs, labels):
        pl.plot(df['env_steps'], df['competence'], label=label if many else 'Overall', **linekw)
        if tasks and not many:
            for name in _task_names(df):
                pl.plot(df['env_steps'], df[f'sr_{name}'], lw=1, alpha=0.7, label=name)
    pl.ylim([0, 1.05])
    pl.xlabel('Environment steps')
    pl.ylabel('Success rate')
    pl.legend(frameon=False)
    sc.boxoff(ax)
    if show:
        pl.show()
    return fig


def plot_time_allocation(results, fig=None, figkw=None, show=True):
    """ Fraction of rollouts spent on each final task per epoch, as stacked areas """
    df = _metrics(results)
    figkw = sc.mergedicts(dict(figsize=(8,4)), figkw)
    names = _task_names(df, 'selected_')
    counts = np.array([df[f'selected_{name}'].values for name in names], dtype=float)
    per_epoch = np.diff(np.hstack([np.zeros((len(names), 1)), counts]), axis=1)
    totals = per_epoch.sum(axis=0)
    frac = per_epoch/np.maximum(totals, 1)

    if fig is None:
        fig = pl.figure(**figkw)
    ax = pl.subplot(1,1,1)
    pl.stackplot(df['epoch'], frac, labels=names, alpha=0.8)
    pl.xlim([df['epoch'].min(), df['epoch'].max()])
    pl.ylim([0, 1])
    pl.xlabel('Epoch')
    pl.ylabel('Fraction of rollouts')
    pl.legend(frameon=False, loc='upper left', bbox_to_anchor=(1, 1))
    sc.boxoff(ax)
    if show:
        pl.show()
    return fig


def plot_task_graph(graph, fig=None, figkw=None, cmap='Blues', show=True):
    """
    Heatmap of the task graph: row i holds the predecessor values of task i, with the
    start in the first column

    Args:
        graph (TaskGraph/dataframe/str): a task graph, its to_df() output, or a B_epoch_*.csv file
    """
    if hasattr(graph, 'to_df'):
        df = graph.to_df()
    elif isinstance(graph, (str, os.PathLike)):
        df = sc.dataframe(pd.read_csv(graph))
    else:
        df = graph
    rows = list(df['task'])
    cols = [c for c in df.columns if c != 'task']
    B = df[cols].values.astype(float)

    figkw = sc.mergedicts(dict(figsize=(6,5)), figkw)
    if fig is None:
        fig = pl.figure(**figkw)
    ax = pl.subplot(1,1,1)
    im = ax.imshow(B, cmap=cmap, vmin=0, vmax=1)
    ax.set_xticks(np.arange(len(cols)))
    ax.set_xticklabels(cols, rotation=45, ha='right')
    ax.set_yticks(np.arange(len(rows)))
    ax.set_yticklabels(rows)
    ax.set_xlabel('Predecessor')
    ax.set_ylabel('Task')
    pl.colorbar(im, ax=ax)
    if show:
        pl.show()
    return fig


def plot_relations(net, labels=None, title=None, fig=None, figkw=None, cmap='Reds', show=True):
    """
    Heatmap of min(|w1|, |w2|) of a relational network: bright cells are the coordinate
    pairs used in a relation

    Args:
        net (RelationalNet): the network
        labels (list): coordinate labels, e.g. from Arena.state_labels()
        title (str): figure title
    """
    M = net.relation_matrix()
    if labels is not None and len(labels) != net.n:
        errormsg = f'Got {len(labels)} labels for a network over {net.n} coordinates'
        raise ValueError(errormsg)
    figkw = sc.mergedicts(dict(figsize=(6,5)), figkw)
    if fig is None:
        fig = pl.figure(**figkw)
    ax = pl.subplot(1,1,1)
    im = ax.imshow(M, cmap=cmap, vmin=0)
    if labels is not None:
        ticks = np.arange(len(labels))
        ax.set_xticks(ticks)
        ax.set_xticklabels(labels, rotation=90)
        ax.set_yticks(ticks)
        ax.set_yticklabels(labels)
    if title:
        pl.title(title)
    pl.colorbar(im, ax=ax)
    if show:
        pl.show()
    return fig
