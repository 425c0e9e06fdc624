"""
Multi-seed acceptance runs on the desk profile: competence ceiling, task-graph recovery,
ablation separation, oracle ordering, funnel-state learning, and surprise timing.

Expect this to take a while; set n_seeds and max_steps lower for a quick look.
"""

import numpy as np
import sciris as sc
import taskchain as tc

n_seeds   = 5
max_steps = 500_000
ncpus     = 5
variants  = dict(
    full        = dict(),
    oracle      = dict(oracle='full'),
    no_surprise = dict(ablation='no_surprise'),
    uniform     = dict(ablation='uniform_tasks'),
)


def recovered(graph):
    """ Locomotion from the start, tool after locomotion, heavy after the tool """
    return [graph.greedy_predecessor(i) for i in range(3)] == [0, 1, 2]


def first_steps(df, threshold):
    """ Environment steps at which competence first reaches a threshold (nan if never) """
    hits = df['env_steps'][df['competence'] >= threshold]
    return float(hits.iloc[0]) if len(hits) else np.nan


def run_variant(seed, variant):
    """ Run one seed of one variant, epoch by epoch, noting when the task graph is first recovered """
    run = sc.mergedicts(dict(seed=seed, workers=1, rollouts=5, epochs=10**6, max_steps=max_steps), variants[variant])
    exp = tc.Experiment(run=run, verbose=0)
    exp.initialize()
    recovery = np.nan
    while exp.env_steps < max_steps:
        exp.step()
        if np.isnan(recovery) and recovered(exp.graph):
            recovery = exp.epoch
    df = exp.metrics_df()
    out = sc.objdict(
        seed       = seed,
        variant    = variant,
        competence = df['competence'].iloc[-1],
        sr_tool    = df['sr_tool'].iloc[-1],
        recovered  = recovered(exp.graph),
        recovery   = recovery,
        steps_055  = first_steps(df, 0.55),
        steps_065  = first_steps(df, 0.65),
    )
    return out


def check(label, passed, detail):
    """ Print one line of the report """
    mark = 'PASS' if passed else 'FAIL'
    print(f'{mark}  {label}: {detail}')
    return passed


def acceptance():
    sc.heading('Running experiments')
    T = sc.timer()
    jobs = [dict(seed=seed, variant=v) for v in variants for seed in range(1, n_seeds+1)]
    rows = sc.parallelize(run_variant, iterkwargs=jobs, ncpus=ncpus)
    df = sc.dataframe(rows)
    T.toc('Experiments')
    by = {v:df[df['variant'] == v] for v in variants}
    full, oracle, nosur, uni = by['full'], by['oracle'], by['no_surprise'], by['uniform']

    sc.heading('Acceptance')
    results = []
    med = full['competence'].median()
    results.append(check('Competence ceiling', 0.55 <= med <= 0.75, f'median {med:0.3f}'))

    n_rec = int(full['recovered'].sum())
    results.append(check('Task-graph recovery', n_rec >= 4, f'{n_rec} of {n_seeds} seeds'))

    ns, fs = nosur['sr_tool'].median(), full['sr_tool'].median()
    results.append(check('No-surprise separation', ns < 0.1 and fs > 0.5, f'tool success {ns:0.2f} vs {fs:0.2f}'))
    ue, fe = uni['recovery'].median(), full['recovery'].median()
    later = np.isnan(ue) and not np.isnan(fe) or ue > fe
    results.append(check('Uniform-task recovery is later', later, f'epoch {ue} vs {fe}'))

    so, sl = oracle['steps_065'].median(), full['steps_055'].median()
    results.append(check('Oracle ordering', so <= 0.2*sl, f'{so:0.0f} vs {sl:0.0f} steps'))

    curve = tc.funnel_curve(n_rollouts=30, seed=1)
    delta = tc.make_pars().arena.delta
    d = curve['distance'].values
    rises = np.sum(np.diff(d) > 0.1*d[:-1])
    results.append(check('Funnel states', d[-1] < 2*delta and rises <= 0.1*len(d), f'final distance {d[-1]:0.2f}, {rises} rises'))

    timing = tc.surprise_timing(n_trials=100, seed=1)
    results.append(check('Surprise timing', timing.hit_rate >= 0.9, f'hit rate {timing.hit_rate:0.2f}'))

    print(f'\n{sum(results)} of {len(results)} criteria passed')
    return df


if __name__ == '__main__':
    df = acceptance()
