"""
Success bookkeeping and the learning-progress bandit that picks the final task of each rollout
"""

from collections import deque
import numpy as np
import sciris as sc


__all__ = ['task_success', 'TaskStats', 'update_task_stats', 'bandit_reward', 'TaskSelector',
           'bandit_update', 'sample_final_task']


def task_success(states, goal, indices, delta=1.0):
    """
    Whether a task was solved at any step: max_t ⟦‖s_m(t) − g‖² ≤ δ⟧.

    Args:
        states (array): trajectory of states, shape (T, n)
        goal (array): goal in the task's goal space
        indices (array): the task's goal-space indices m
        delta (float): precision threshold on the squared distance

    Returns:
        1 or 0
    """
    states = np.asarray(states, dtype=float)
    if states.size == 0:
        return 0
    states = np.atleast_2d(states)
    d2 = ((states[:, indices] - np.asarray(goal))**2).sum(axis=1)
    return int(np.any(d2 <= delta))


class TaskStats(sc.prettyobj):

    def __init__(self, n_tasks, window=10):
        """
        Per-task success history: success rate sr_i as the mean of the last Z attempts and
        learning progress ρ_i as its change between consecutive attempts of the same task.
        """
        if window < 1:
            errormsg = f'The success window must be ≥1, not {window}'
            raise ValueError(errormsg)
        self.window   = window
        self.history  = [deque(maxlen=window) for i in range(n_tasks)]
        self.sr       = np.zeros(n_tasks)
        self.rho      = np.zeros(n_tasks)
        self.attempts = np.zeros(n_tasks, dtype=int)
        return


    @property
    def n_tasks(self):
        return len(self.history)

    @property
    def competence(self):
        """ Mean success rate over all tasks """
        return self.sr.mean()


    def update(self, i, succ):
        """ Record one attempt of task i """
        prev = self.sr[i]
        self.history[i].append(float(succ))
        self.sr[i]  = np.mean(self.history[i])
        self.rho[i] = self.sr[i] - prev
        self.attempts[i] += 1
        return self


def update_task_stats(ts, i, succ):
    """ Record one attempt of task i; see TaskStats.update() """
    return ts.update(i, succ)


def bandit_reward(rho, surprise=None, beta=0.1):
    """ Bandit reward r = |ρ| + β·max_t surprise(t) """
    bonus = 0.0
    if surprise is not None and np.size(surprise):
        bonus = float(np.max(surprise))
    return abs(rho) + beta*bonus


class TaskSelector(sc.prettyobj):

    def __init__(self, n_tasks, lr=0.1, beta=0.1, eps=0.05, floor=1e-6, uniform=False):
        """
        Multi-armed bandit over final tasks with exponentially tracked action values and
        a proportional, ε-mixed selection policy.

        Args:
            n_tasks (int): number of arms
            lr (float): learning rate α^T of the action values
            beta (float): surprise bonus β^T used by bandit_reward()
            eps (float): probability of a uniform choice
            floor (float): lower clamp on the action values in the proportional policy
            uniform (bool): always select uniformly (ablation)
        """
        if n_tasks < 1:
            errormsg = 'The task selector needs at least one task'
            raise ValueError(errormsg)
        if not 0 <= eps <= 1:
            errormsg = f'Exploration probability must be in [0,1], not {eps}'
            raise ValueError(errormsg)
        self.lr      = lr
        self.beta    = beta
        self.eps     = eps
        self.floor   = floor
        self.uniform = uniform
        self.Q       = np.zeros(n_tasks)
        self.counts  = np.zeros(n_tasks, dtype=int)
        return


    @property
    def n_tasks(self):
        return len(self.Q)


    def update(self, i, reward):
        """ Q(i) ← Q(i) + α(r − Q(i)), clamped at zero """
        self.Q[i] += self.lr*(reward - self.Q[i])
        self.Q[i] = max(self.Q[i], 0.0)
        return self


    def probabilities(self):
        """ Selection probabilities: ε-uniform mixed with Q-proportional """
        K = self.n_tasks
        if self.uniform:
            return np.full(K, 1/K)
        q = np.maximum(self.Q, self.floor)
        return (1 - self.eps)*q/q.sum() + self.eps/K


    def sample(self, seed=None):
        """ Draw a final task """
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return int(rng.choice(self.n_tasks, p=self.probabilities()))


def bandit_update(bs, i, reward):
    """ Update the action value of arm i; see TaskSelector.update() """
    return bs.update(i, reward)


def sample_final_task(bs, seed=None):
    """ Draw a final task; see TaskSelector.sample() """
    return bs.sample(seed)
