"""
Sub-goal proposal: pairwise-affine relational attention networks, one per task transition,
their surprise-bootstrapped training data, and the analytic constrained argmax that turns
a network into a sub-goal.

For a transition from task j to task i the network scores a state s as

    gnet(s) = exp(−γ Σ_{k<l} (w1_kl·s_k + w2_kl·s_l + w3_kl)²)

which is 1 exactly when every pairwise affine residual vanishes.
"""

import numpy as np
import scipy.linalg as sla
import sciris as sc
from . import numerics as tcn
from . import parameters as tcp


__all__ = ['RelationalNet', 'gnet_eval', 'label_rollout', 'gnet_train', 'sample_goal', 'oracle_goal',
           'GoalProposer']


class RelationalNet(sc.prettyobj):

    def __init__(self, n, gamma=1.0, train_gamma=True, lr=1e-4, init_scale=0.01, l1=0.0, l2=0.0, seed=None):
        """
        Args:
            n (int): state dimension
            gamma (float): initial sharpness γ > 0
            train_gamma (bool): whether γ is learned
            lr (float): Adam learning rate
            init_scale (float): w1 and w2 start uniform in ±init_scale; w3 starts at zero
            l1 (float): L1 penalty on the weights
            l2 (float): L2 penalty on the weights
            seed (int): seed for the initial weights
        """
        if gamma <= 0:
            errormsg = f'γ must be positive, not {gamma}'
            raise ValueError(errormsg)
        self.n = int(n)
        self.k_idx, self.l_idx = np.triu_indices(self.n, k=1)
        P = len(self.k_idx)
        rng = np.random.default_rng(seed)
        self.w1 = rng.uniform(-init_scale, init_scale, size=P)
        self.w2 = rng.uniform(-init_scale, init_scale, size=P)
        self.w3 = np.zeros(P)
        self.gamma = np.array([float(gamma)])
        self.train_gamma = train_gamma
        self.l1 = l1
        self.l2 = l2
        self.opt = tcn.Adam(self.params, lr=lr)
        self.n_positive = 0
        return


    @property
    def params(self):
        return [self.w1, self.w2, self.w3, self.gamma]

    @property
    def n_pairs(self):
        return len(self.k_idx)


    def set_pair(self, k, l, w1, w2, w3=0.0):
        """ Set the weights of one coordinate pair; (l, k) is stored as (k, l) with w1 and w2 swapped """
        if k > l:
            k, l, w1, w2 = l, k, w2, w1
        p = np.flatnonzero((self.k_idx == k) & (self.l_idx == l))
        if not len(p):
            errormsg = f'({k}, {l}) is not a coordinate pair of a {self.n}-dimensional state'
            raise ValueError(errormsg)
        self.w1[p] = w1
        self.w2[p] = w2
        self.w3[p] = w3
        return


    def residuals(self, S):
        """ Pairwise affine residuals, shape (batch, pairs) """
        S = np.atleast_2d(np.asarray(S, dtype=float))
        if S.shape[1] != self.n:
            errormsg = f'States have {S.shape[1]} coordinates but the network expects {self.n}'
            raise ValueError(errormsg)
        return self.w1*S[:, self.k_idx] + self.w2*S[:, self.l_idx] + self.w3


    def exponent(self, s):
        """ Σ_{k<l} residual² (without γ) """
        single = np.ndim(s) == 1
        E = (self.residuals(s)**2).sum(axis=1)
        return E[0] if single else E


    def evaluate(self, s):
        """ Network value in (0,1] for one state or a batch """
        return np.exp(-self.gamma[0]*self.exponent(s))


    def loss_and_grads(self, S, y):
        """ Mean squared error against targets y, plus optional L1/L2 penalties, and gradients """
        S = np.atleast_2d(np.asarray(S, dtype=float))
        y = np.asarray(y, dtype=float)
        B = len(S)
        R = self.residuals(S)
        E = (R**2).sum(axis=1)
        v = np.exp(-self.gamma[0]*E)
        err = v - y
        loss = (err**2).mean()
        dv = 2*err/B
        gR = (dv*(-self.gamma[0]*v))[:, None]*2*R
        dw1 = (gR*S[:, self.k_idx]).sum(axis=0)
        dw2 = (gR*S[:, self.l_idx]).sum(axis=0)
        dw3 = gR.sum(axis=0)
        dgamma = np.array([(dv*(-E*v)).sum()]) if self.train_gamma else np.zeros(1)
        grads = [dw1, dw2, dw3, dgamma]
        if self.l1 or self.l2:
            for w,g in zip(self.params[:3], grads[:3]):
                loss += self.l1*np.abs(w).sum() + self.l2*(w**2).sum()
                g += self.l1*np.sign(w) + 2*self.l2*w
        return loss, grads


    def train(self, pos_states, pos_targets=None, neg_states=None, iterations=100, batch_size=64, rng=None):
        """
        Regression on balanced minibatches: half drawn (with replacement) from the
        interesting samples, half from the undetermined ones. A no-op without interesting samples.

        Returns:
            Loss of the final minibatch, or nan if nothing was trained
        """
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        pos_states = np.atleast_2d(np.asarray(pos_states, dtype=float)) if len(pos_states) else np.zeros((0, self.n))
        n_pos = len(pos_states)
        if n_pos == 0:
            return np.nan
        pos_targets = np.ones(n_pos) if pos_targets is None else np.asarray(pos_targets, dtype=float)
        if neg_states is None or len(neg_states) == 0:
            neg_states = np.zeros((0, self.n))
        n_neg = len(neg_states)
        n_half = batch_size//2 if n_neg else batch_size

        loss = np.nan
        for it in range(iterations):
            pi = rng.integers(n_pos, size=n_half)
            S = pos_states[pi]
            y = pos_targets[pi]
            if n_neg:
                ni = rng.integers(n_neg, size=batch_size - n_half)
                S = np.vstack([S, neg_states[ni]])
                y = np.concatenate([y, np.zeros(len(ni))])
            loss, grads = self.loss_and_grads(S, y)
            self.opt.step(self.params, grads)
            self.gamma[0] = max(self.gamma[0], 1e-6)
        return loss


    def quadratic(self):
        """ Matrix A and offset c with exponent(s) = ‖A s + c‖² """
        P = self.n_pairs
        A = np.zeros((P, self.n))
        rows = np.arange(P)
        A[rows, self.k_idx] = self.w1
        A[rows, self.l_idx] = self.w2
        return A, self.w3.copy()


    def argmax(self, s, pinned, ridge=1e-8):
        """
        Maximize the network over the free coordinates with the pinned ones held at s.

        The exponent is a convex quadratic, so the maximizer solves a linear least-squares
        problem; a small ridge term gives the minimum-norm solution when it is singular.

        Args:
            s (array): current state
            pinned (array): boolean mask or index array of coordinates to hold fixed
            ridge (float): ridge regularization

        Returns:
            The maximizing state, with pinned coordinates bit-identical to s
        """
        s = np.asarray(s, dtype=float)
        mask = np.zeros(self.n, dtype=bool)
        mask[pinned] = True
        free = np.flatnonzero(~mask)
        fixed = np.flatnonzero(mask)
        out = s.copy()
        if not len(free):
            return out
        A, c = self.quadratic()
        rhs = -(A[:, fixed] @ s[fixed] + c)
        M = np.vstack([A[:, free], np.sqrt(ridge)*np.eye(len(free))])
        b = np.concatenate([rhs, np.zeros(len(free))])
        x = sla.lstsq(M, b)[0]
        out[free] = x
        return out


    def weight_matrices(self):
        """ Dense n×n matrices of |w1|, |w2|, |w3| (upper triangle) """
        mats = []
        for w in [self.w1, self.w2, self.w3]:
            m = np.zeros((self.n, self.n))
            m[self.k_idx, self.l_idx] = np.abs(w)
            mats.append(m)
        return mats


    def relation_matrix(self):
        """ min(|w1|, |w2|): nonzero where a pair of coordinates is used in a relation """
        m1, m2, _ = self.weight_matrices()
        return np.minimum(m1, m2)


    def to_df(self, labels=None):
        """
        The |w1|, |w2|, |w3| matrices stacked into one table: a 'weight' column naming the
        matrix, a 'coord' column naming the row coordinate, and one column per coordinate
        """
        labels = list(labels) if labels is not None else [f's{k}' for k in range(self.n)]
        if len(labels) != self.n:
            errormsg = f'Got {len(labels)} coordinate labels for a {self.n}-dimensional state'
            raise ValueError(errormsg)
        df = sc.dataframe(np.vstack(self.weight_matrices()), columns=labels)
        df.insert(0, 'coord', labels*3)
        df.insert(0, 'weight', np.repeat(['w1', 'w2', 'w3'], self.n))
        return df


def gnet_eval(net, s):
    """ Evaluate a relational network; see RelationalNet.evaluate() """
    return net.evaluate(s)


def gnet_train(net, pos_states, pos_targets=None, neg_states=None, iterations=100, batch_size=64, rng=None):
    """ Train a relational network on balanced batches; see RelationalNet.train() """
    return net.train(pos_states, pos_targets, neg_states, iterations=iterations, batch_size=batch_size, rng=rng)


def label_rollout(states, surprise, switch_steps=None, succ=0):
    """
    Training targets for the transition j → i from the states visited while doing task j.

    The target of step t is min(1, succ_i·Γ(t) + surprise_i(t)), where Γ(t) is 1 at the
    steps where the agent switched from j to i. Zero-target (undetermined) steps after the
    first positive step are discarded, since what follows a surprising event is unknown.

    Args:
        states (array): states during task j, shape (T, n)
        surprise (array): surprise flags of task i aligned with the states, shape (T,)
        switch_steps (list): indices into states where the agent switched to task i
        succ (int): whether task i was subsequently solved

    Returns:
        sc.objdict with the kept 'states', their 'targets', 'interesting' flags, and the kept 'steps'

    **Example**::

        out = taskchain.label_rollout(states, surprise=flags[:, tool], switch_steps=[57], succ=1)
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    T = len(states) if np.size(states) else 0
    surprise = np.asarray(surprise, dtype=float).ravel()
    if len(surprise) != T:
        errormsg = f'Got {T} states but {len(surprise)} surprise flags'
        raise ValueError(errormsg)
    switch = np.zeros(T)
    if switch_steps is not None and len(switch_steps):
        switch[np.asarray(switch_steps, dtype=int)] = 1
    targets = np.minimum(1.0, succ*switch + surprise)
    steps = np.arange(T)
    positive = np.flatnonzero(targets > 0)
    if len(positive):
        keep = (steps <= positive[0]) | (targets > 0)
    else:
        keep = np.ones(T, dtype=bool)
    out = sc.objdict(
        states      = states[keep] if T else np.zeros((0, states.shape[-1] if states.ndim == 2 else 0)),
        targets     = targets[keep],
        interesting = targets[keep] > 0,
        steps       = steps[keep],
    )
    return out


def sample_goal(net, s, chain, position, goal_spaces, bounds=None, ridge=1e-8, rng=None):
    """
    Sub-goal for task chain[position] from the network of the transition to chain[position+1].

    All coordinates of the tasks after the current one are pinned at their current values;
    the network is maximized over everything else and the current task's coordinates are
    returned (clamped to the bounds). Without a network a uniform random point is returned.

    Args:
        net (RelationalNet): network of the transition (chain[position+1], chain[position]), or None
        s (array): current state
        chain (list): task chain
        position (int): index of the current task in the chain (not the final task)
        goal_spaces (list): index arrays of every task
        bounds (array): [low, high] for the returned goal
        ridge (float): regularization of the argmax
        rng (Generator): random generator for the untrained case
    """
    if position >= len(chain) - 1:
        errormsg = f'Position {position} is the final task of chain {chain}; its goal comes from the environment'
        raise ValueError(errormsg)
    j = chain[position]
    inds = goal_spaces[j]
    if net is None:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        low, high = bounds if bounds is not None else (-1, 1)
        return rng.uniform(low, high, size=len(inds))
    pinned = np.concatenate([goal_spaces[t] for t in chain[position+1:]])
    s_star = net.argmax(s, pinned, ridge=ridge)
    goal = s_star[inds]
    if bounds is not None:
        goal = np.clip(goal, bounds[0], bounds[1])
    return goal


def oracle_goal(i, j, s, goal_spaces):
    """ Ground-truth funnel state: the goal for task j is the current position of task i's object """
    return np.array(s, dtype=float)[goal_spaces[i]].copy()


class GoalProposer(sc.prettyobj):

    def __init__(self, state_dim, goal_spaces, bounds, pars=None, seed=None, oracle=False, **kwargs):
        """
        Holds one relational network per task transition (i, j), created lazily when the
        first interesting sample for that transition arrives, and the sample pools they train on.

        The networks see the whole state, velocities and possession flags included; only the
        goal-space coordinates of later tasks are pinned when a sub-goal is proposed, and only
        the current task's goal-space coordinates are returned.

        Args:
            state_dim (int): dimension of the state
            goal_spaces (list): index arrays of every task
            bounds (array): [low, high] for proposed goals
            pars (dict): goal-proposal parameters (see make_pars()['gnet'])
            seed (int): seed for weights and minibatches
            oracle (bool): propose the ground-truth funnel states instead of learning
        """
        self.pars = sc.mergedicts(tcp.make_defaults('desk').gnet, pars, kwargs)
        self.state_dim = int(state_dim)
        self.goal_spaces = [np.asarray(m) for m in goal_spaces]
        top = max(m.max() for m in self.goal_spaces)
        if top >= self.state_dim:
            errormsg = f'Goal-space index {top} is outside the state (dimension {self.state_dim})'
            raise ValueError(errormsg)
        self.bounds = np.asarray(bounds, dtype=float)
        self.oracle = oracle
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.nets = {}
        self.positives = {}
        self.negatives = {}
        self.losses = {}
        return


    @property
    def n_tasks(self):
        return len(self.goal_spaces)

    @property
    def n_inputs(self):
        return self.state_dim


    def n_positive(self, pair=None):
        """ Number of interesting samples for one transition, or in total """
        if pair is not None:
            return len(self.positives.get(tuple(pair), (np.zeros(0), np.zeros(0)))[1])
        return sum(len(v[1]) for v in self.positives.values())


    def make_net(self, pair):
        """ Create the network of a transition """
        p = self.pars
        seed = None if self.seed is None else int(np.random.SeedSequence([self.seed, *pair]).generate_state(1)[0])
        net = RelationalNet(self.n_inputs, gamma=p.gamma, train_gamma=p.train_gamma, lr=p.lr,
                            init_scale=p.init_scale, l1=p.l1, l2=p.l2, seed=seed)
        self.nets[pair] = net
        return net


    def add_samples(self, i, j, labeled):
        """ Add the output of label_rollout() to the pools of transition j → i """
        pair = (int(i), int(j))
        pos = labeled.interesting
        states = np.atleast_2d(labeled.states) if len(labeled.states) else np.zeros((0, self.n_inputs))
        if states.shape[1] != self.n_inputs:
            errormsg = f'Samples have {states.shape[1]} coordinates but the state has {self.n_inputs}'
            raise ValueError(errormsg)
        if pos.any():
            old_s, old_y = self.positives.get(pair, (np.zeros((0, self.n_inputs)), np.zeros(0)))
            self.positives[pair] = (np.vstack([old_s, states[pos]]), np.concatenate([old_y, labeled.targets[pos]]))
            if pair not in self.nets:
                self.make_net(pair)
        neg = states[~pos]
        if len(neg):
            old = self.negatives.get(pair, np.zeros((0, self.n_inputs)))
            pool = np.vstack([old, neg])
            if len(pool) > self.pars.pool_size:
                pool = pool[-self.pars.pool_size:]
            self.negatives[pair] = pool
        return


    def train(self, iterations=None):
        """ Train every network that has interesting samples; returns the final losses """
        p = self.pars
        iterations = p.iterations if iterations is None else iterations
        for pair in sorted(self.nets.keys()):
            pos_s, pos_y = self.positives[pair]
            neg = self.negatives.get(pair)
            self.losses[pair] = self.nets[pair].train(pos_s, pos_y, neg, iterations=iterations,
                                                      batch_size=p.batch_size, rng=self.rng)
            self.nets[pair].n_positive = len(pos_y)
        return self.losses


    def propose(self, s, chain, position, rng=None):
        """ Sub-goal for chain[position], using the network of the transition to chain[position+1] """
        j = chain[position]
        i = chain[position+1]
        if self.oracle:
            return oracle_goal(i, j, s, self.goal_spaces)
        net = self.nets.get((i, j))
        s = np.asarray(s, dtype=float)
        return sample_goal(net, s, chain, position, self.goal_spaces, bounds=self.bounds,
                           ridge=self.pars.ridge, rng=rng)


    def snapshot(self):
        """ Copy holding only the networks, for read-only use during rollouts """
        pools = self.positives, self.negatives
        self.positives, self.negatives = {}, {}
        try:
            new = sc.dcp(self)
        finally:
            self.positives, self.negatives = pools
        return new
