"""
Forward dynamics model, per-goal-space prediction errors, and surprise detection
"""

import numpy as np
import sciris as sc
from . import numerics as tcn
from . import parameters as tcp
from .control import ReplayBuffer


__all__ = ['ForwardModel', 'SurpriseDetector', 'detect_surprise']


class ForwardModel(sc.prettyobj):

    def __init__(self, state_dim, action_dim=2, goal_spaces=None, pars=None, seed=None, **kwargs):
        """
        MLP forward model f(s, a) → Δs, trained on squared loss with Adam.

        Args:
            state_dim (int): dimension of the state vector
            action_dim (int): dimension of the action
            goal_spaces (list): index arrays, one per task, for the per-task errors
            pars (dict): forward-model parameters (see make_pars()['world'])
            seed (int): seed for the weights and minibatch sampling
        """
        self.pars = sc.mergedicts(tcp.make_defaults('desk').world, pars, kwargs)
        self.state_dim  = int(state_dim)
        self.action_dim = int(action_dim)
        if goal_spaces is None:
            goal_spaces = [np.arange(self.state_dim)]
        self.goal_spaces = [np.asarray(m) for m in goal_spaces]
        p = self.pars
        sizes = [self.state_dim + self.action_dim] + [p.width]*p.layers + [self.state_dim]
        self.net = tcn.Mlp(sizes, activation=p.activation, seed=seed)
        self.opt = tcn.Adam(self.net.params, lr=p.lr)
        self.rng = np.random.default_rng(seed)
        self.buffer = ReplayBuffer(p.buffer_size, fields=dict(s=self.state_dim, a=self.action_dim, s2=self.state_dim))
        self.loss = np.nan
        return


    def _inputs(self, s, a):
        s = np.atleast_2d(np.asarray(s, dtype=float))
        a = np.atleast_2d(np.asarray(a, dtype=float))
        if s.shape[1] != self.state_dim or a.shape[1] != self.action_dim or len(s) != len(a):
            errormsg = f'Expected states with {self.state_dim} and actions with {self.action_dim} columns, not {s.shape} and {a.shape}'
            raise ValueError(errormsg)
        return s, a


    def predict(self, s, a):
        """ Predicted next state f(s,a) + s """
        single = np.ndim(s) == 1
        s, a = self._inputs(s, a)
        out = self.net.forward(np.hstack([s, a])) + s
        return out[0] if single else out


    def predict_error(self, s, a, s2):
        """
        Squared prediction error ‖(f(s,a) + s) − s'‖² over the full state and restricted
        to each goal space.

        Returns:
            e (float/array): full error per transition
            e_tasks (array): per-task errors, shape (K,) or (T, K)
        """
        single = np.ndim(s) == 1
        s2 = np.atleast_2d(np.asarray(s2, dtype=float))
        res = self.predict(np.atleast_2d(s), np.atleast_2d(a)) - s2
        sq = res**2
        e = sq.sum(axis=1)
        e_tasks = np.stack([sq[:, m].sum(axis=1) for m in self.goal_spaces], axis=1)
        if single:
            return e[0], e_tasks[0]
        return e, e_tasks


    def loss_and_grads(self, s, a, s2):
        """ Mean squared residual of Δs over a batch, and its parameter gradients """
        s, a = self._inputs(s, a)
        s2 = np.atleast_2d(np.asarray(s2, dtype=float))
        pred = self.net.forward(np.hstack([s, a]))
        res = pred - (s2 - s)
        n = len(s)
        loss = (res**2).sum()/n
        grads = self.net.backward(2*res/n)
        return loss, grads


    def train(self, s, a, s2, iterations=None, batch_size=None):
        """
        Adam steps on minibatches drawn from the given transitions.

        Returns:
            Loss of the final minibatch
        """
        s, a = self._inputs(s, a)
        s2 = np.atleast_2d(np.asarray(s2, dtype=float))
        n = len(s)
        if n == 0:
            errormsg = 'Cannot train the forward model on an empty batch'
            raise ValueError(errormsg)
        iterations = self.pars.iterations if iterations is None else iterations
        batch_size = self.pars.batch_size if batch_size is None else batch_size
        loss = np.nan
        for it in range(iterations):
            if n <= batch_size:
                inds = np.arange(n)
            else:
                inds = self.rng.choice(n, size=batch_size, replace=False)
            loss, grads = self.loss_and_grads(s[inds], a[inds], s2[inds])
            self.opt.step(self.net.params, grads)
        self.loss = loss
        return loss


    def observe(self, s, a, s2):
        """ Add transitions to the training buffer """
        self.buffer.add(s=s, a=a, s2=s2)
        return


    def train_buffer(self, iterations=None, batch_size=None):
        """ Train on minibatches sampled from the buffer """
        if len(self.buffer) == 0:
            return np.nan
        iterations = self.pars.iterations if iterations is None else iterations
        batch_size = self.pars.batch_size if batch_size is None else batch_size
        loss = np.nan
        for it in range(iterations):
            b = self.buffer.sample(batch_size, self.rng)
            loss, grads = self.loss_and_grads(b.s, b.a, b.s2)
            self.opt.step(self.net.params, grads)
        self.loss = loss
        return loss


    def snapshot(self):
        """ Copy of the model for read-only use by rollout workers (no buffer) """
        buffer, opt = self.buffer, self.opt
        self.buffer, self.opt = None, None
        try:
            new = sc.dcp(self)
        finally:
            self.buffer, self.opt = buffer, opt
        new.net.cache = None
        return new


class SurpriseDetector(sc.prettyobj):

    def __init__(self, n_tasks, theta=5.0, weight=0.99, warmup=500):
        """
        Flags steps where a task's prediction-error finite difference leaves its
        confidence band: |ė_i(t)| > μ_i + θσ_i.

        Args:
            n_tasks (int): number of goal spaces
            theta (float): width of the band in standard deviations
            weight (float): exponential history weighting of the statistics; None for plain averages
            warmup (int): number of differences per task before any surprise can fire
        """
        if theta <= 0:
            errormsg = f'The surprise threshold θ must be positive, not {theta}'
            raise ValueError(errormsg)
        self.theta  = theta
        self.weight = weight
        self.warmup = warmup
        self.stats  = [tcn.RunningStats(weight) for i in range(n_tasks)]
        return


    @property
    def n_tasks(self):
        return len(self.stats)


    def detect(self, errors, update=True):
        """
        Surprise flags for one rollout's error trace.

        Args:
            errors (array): per-task errors, shape (T, K)
            update (bool): update the statistics from the same stream (after thresholding each step)

        Returns:
            Integer array of flags, shape (T, K); step 0 has no difference and is never flagged
        """
        errors = np.asarray(errors, dtype=float)
        if errors.ndim != 2 or errors.shape[1] != self.n_tasks:
            errormsg = f'Expected an error trace of shape (T, {self.n_tasks}), not {errors.shape}'
            raise ValueError(errormsg)
        T = len(errors)
        flags = np.zeros((T, self.n_tasks), dtype=int)
        diffs = np.diff(errors, axis=0)
        for t,diff in enumerate(diffs):
            for i,st in enumerate(self.stats):
                if st.count >= self.warmup and abs(diff[i]) > st.mean + self.theta*st.std:
                    flags[t+1, i] = 1
                if update:
                    st.update(diff[i])
        return flags


def detect_surprise(errors, detector, update=True):
    """ Surprise flags for an error trace; see SurpriseDetector.detect() """
    return detector.detect(errors, update=update)
