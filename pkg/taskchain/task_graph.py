"""
Task planner: the learned predecessor-value matrix B and ε-greedy backward chaining
"""

import re
from collections import deque
import numpy as np
import sciris as sc
from . import numerics as tcn


__all__ = ['TaskGraph', 'graph_update', 'plan_chain', 'oracle_predecessors', 'oracle_graph']


class TaskGraph(sc.prettyobj):

    def __init__(self, n_tasks, tmax, beta=1e-3, window=100, eps=0.05, weight=0.99, task_names=None):
        """
        Running values Q^B_{i,j} of solving task i right after predecessor j, with j
        ranging over the start S (column 0) and the tasks (column j+1). B is the row-
        normalized view of Q^B with self-loops excluded.

        Each entry is the windowed mean of 1 − T_{i,j}/T^max plus β^B times the surprise
        history of the entry, averaged with exponential weights (or over the same window).

        Args:
            n_tasks (int): number of tasks K
            tmax (int): T^max, used to turn runtimes into values
            beta (float): surprise bonus β^B
            window (int): running-average window per entry
            eps (float): probability of a uniform predecessor choice while planning
            weight (float): exponential history weighting of the surprise term; None for the windowed mean
            task_names (list): labels for dumps and plots
        """
        if n_tasks < 1:
            errormsg = 'The task graph needs at least one task'
            raise ValueError(errormsg)
        if tmax <= 0:
            errormsg = f'T^max must be positive for the task graph, not {tmax}'
            raise ValueError(errormsg)
        K = n_tasks
        self.n_tasks  = K
        self.tmax     = tmax
        self.beta     = beta
        self.window   = window
        self.eps      = eps
        self.weight   = weight
        self.task_names = list(task_names) if task_names is not None else [f'task{i}' for i in range(K)]
        self.samples  = [[deque(maxlen=window) for j in range(K+1)] for i in range(K)]
        self.durations = [[deque(maxlen=window) for j in range(K+1)] for i in range(K)]
        self.bonuses  = [[deque(maxlen=window) for j in range(K+1)] for i in range(K)]
        self.surprise = [[tcn.RunningStats(weight) for j in range(K+1)] for i in range(K)]
        self.QB       = np.zeros((K, K+1))
        self.runtimes = np.full((K, K+1), np.nan)
        self.frozen   = False
        return


    @property
    def mask(self):
        """ Allowed (i, j) entries: everything except the self-loop """
        m = np.ones((self.n_tasks, self.n_tasks+1), dtype=bool)
        m[np.arange(self.n_tasks), np.arange(self.n_tasks)+1] = False
        return m

    @property
    def B(self):
        """ Row-normalized predecessor values; rows without evidence are uniform """
        mask = self.mask
        vals = np.where(mask, self.QB, 0.0)
        rowsums = vals.sum(axis=1, keepdims=True)
        uniform = mask/mask.sum(axis=1, keepdims=True)
        with np.errstate(invalid='ignore', divide='ignore'):
            B = np.where(rowsums > 1e-9, vals/rowsums, uniform)
        return B


    @staticmethod
    def column(j):
        """ Column of predecessor j: None or 'S' for the start, else the task index plus one """
        if j is None or j == 'S':
            return 0
        return int(j) + 1


    def update(self, i, j, runtime, surprise=0):
        """
        Add one outcome for task i executed after predecessor j.

        Args:
            i (int): task index
            j (int/None): predecessor task index, or None for the start
            runtime (float): steps needed to solve task i, or T^max if it was not solved
            surprise (int/array): surprise flags of task i; their maximum earns the bonus
        """
        if self.frozen:
            errormsg = 'This task graph is frozen (oracle) and cannot be updated'
            raise ValueError(errormsg)
        col = self.column(j)
        if not 0 <= i < self.n_tasks or not 0 <= col <= self.n_tasks:
            errormsg = f'Entry ({i}, {j}) is outside the {self.n_tasks}-task graph'
            raise ValueError(errormsg)
        if not 0 <= runtime <= self.tmax:
            errormsg = f'Runtime must be between 0 and T^max={self.tmax}, not {runtime}'
            raise ValueError(errormsg)
        bonus = float(np.max(surprise)) if np.size(surprise) else 0.0
        self.samples[i][col].append(1 - runtime/self.tmax)
        self.durations[i][col].append(runtime)
        self.bonuses[i][col].append(bonus)
        self.surprise[i][col].update(bonus)
        history = np.mean(self.bonuses[i][col]) if self.weight is None else self.surprise[i][col].mean
        self.QB[i, col] = np.mean(self.samples[i][col]) + self.beta*history
        self.runtimes[i, col] = np.mean(self.durations[i][col])
        return self


    def greedy_predecessor(self, i):
        """ Column of the largest entry of row i (0 is the start) """
        return int(np.argmax(np.where(self.mask[i], self.B[i], -np.inf)))


    def plan_chain(self, final, seed=None, eps=None):
        """
        Plan a task chain backward from the final task: repeatedly pick the predecessor of
        the current head among the start and the not-yet-used tasks, greedily on B (ties
        broken at random) or uniformly with probability ε, until the start is picked.

        Returns:
            List of task indices, executed front to back, ending with the final task
        """
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        eps = self.eps if eps is None else eps
        B = self.B
        chain = [int(final)]
        visited = {int(final)}
        current = int(final)
        while True:
            cands = np.array([0] + [j+1 for j in range(self.n_tasks) if j not in visited])
            if rng.random() < eps:
                col = int(rng.choice(cands))
            else:
                vals = B[current, cands]
                best = np.flatnonzero(vals == vals.max())
                col = int(cands[rng.choice(best)])
            if col == 0:
                break
            current = col - 1
            chain.insert(0, current)
            visited.add(current)
        return chain


    def to_df(self):
        """ B as a dataframe with tasks as rows and predecessors (S first) as columns """
        df = sc.dataframe(self.B, columns=['S'] + self.task_names)
        df.insert(0, 'task', self.task_names)
        return df


def graph_update(tg, i, j, runtime, surprise=0):
    """ Add one outcome for task i after predecessor j; see TaskGraph.update() """
    return tg.update(i, j, runtime, surprise)


def plan_chain(tg, final, seed=None):
    """ Plan a task chain ending in the final task; see TaskGraph.plan_chain() """
    return tg.plan_chain(final, seed)


oracle_predecessors = sc.objdict(
    locomotion = None,
    tool       = 'locomotion',
    heavy      = 'tool',
    halflight  = 'locomotion',
    random     = 'locomotion',
    static     = 'locomotion',
)


def oracle_graph(task_names, kind='tool-use', tmax=400):
    """
    Hand-specified task graph with one-hot rows on the true predecessor.

    Args:
        task_names (list): task names, e.g. Arena.task_names
        kind (str/dict): 'tool-use' for the ground-truth dependencies of the arena,
            'distractor' for "every task is preceded by locomotion", or a dict mapping
            each task name to its predecessor name (None for the start)
        tmax (int): T^max stored on the graph

    **Example**::

        tg = taskchain.oracle_graph(['locomotion', 'tool', 'heavy'])
        tg.plan_chain(2, eps=0) # → [0, 1, 2]
    """
    names = list(task_names)
    if kind == 'tool-use':
        preds = {name:oracle_predecessors.get(re.sub(r'\d+$', '', name), 'locomotion') for name in names}
    elif kind == 'distractor':
        preds = {name:(None if name == 'locomotion' else 'locomotion') for name in names}
    elif isinstance(kind, dict):
        preds = kind
    else:
        errormsg = f'Oracle graph kind must be "tool-use", "distractor", or a dict, not {kind}'
        raise ValueError(errormsg)

    tg = TaskGraph(len(names), tmax=tmax, eps=0.0, task_names=names)
    for i,name in enumerate(names):
        if name not in preds:
            errormsg = f'No predecessor specified for task "{name}"'
            raise ValueError(errormsg)
        pred = preds[name]
        if pred is not None and pred not in names:
            errormsg = f'Predecessor "{pred}" of "{name}" is not one of the tasks {names}'
            raise ValueError(errormsg)
        col = 0 if pred is None else names.index(pred) + 1
        tg.QB[i, col] = 1.0
    tg.frozen = True
    return tg
