"""
Goal-conditioned low-level control: one policy per task, behind a common interface.

Two controllers are available:

    PDController:   scripted proportional-derivative control that fetches the task's object
                    and carries it to the goal (for testing the high-level modules in isolation)
    ActorCritic:    entropy-regularized off-policy actor-critic with twin critics, a
                    tanh-squashed Gaussian actor, soft target updates, and optional hindsight relabeling
"""

import numpy as np
import sciris as sc
from . import numerics as tcn
from . import parameters as tcp


__all__ = ['task_reward', 'ReplayBuffer', 'her_relabel', 'PolicyInterface', 'PDController', 'pd_oracle_act',
           'ActorCritic', 'ac_act', 'ac_train', 'LearnedController', 'make_controllers']


def task_reward(s, g, indices):
    """
    Dense task reward r = −‖s_m − g‖², for a single state or a batch.

    Args:
        s (array): state(s)
        g (array): goal(s) in the task's goal space
        indices (array): the task's goal-space indices m
    """
    s = np.asarray(s, dtype=float)
    g = np.asarray(g, dtype=float)
    achieved = s[..., indices]
    if achieved.shape[-1] != g.shape[-1]:
        errormsg = f'Goal has {g.shape[-1]} coordinates but the goal space has {achieved.shape[-1]}'
        raise ValueError(errormsg)
    return -((achieved - g)**2).sum(axis=-1)


class ReplayBuffer(sc.prettyobj):

    def __init__(self, capacity, fields):
        """
        Ring buffer of transitions with uniform sampling.

        Args:
            capacity (int): maximum number of stored transitions; the oldest are overwritten
            fields (dict): name and width of each stored array, e.g. dict(s=16, a=2, r=1)

        **Example**::

            buf = taskchain.ReplayBuffer(1000, fields=dict(s=4, a=2))
            buf.add(s=np.zeros((10,4)), a=np.ones((10,2)))
            batch = buf.sample(5, rng=1)
        """
        capacity = int(capacity)
        if capacity < 1:
            errormsg = f'Buffer capacity must be ≥1, not {capacity}'
            raise ValueError(errormsg)
        self.capacity = capacity
        self.fields = {k:int(v) for k,v in fields.items()}
        self.data = {k:np.zeros((min(capacity, 1024), w)) for k,w in self.fields.items()}
        self.size = 0
        self.head = 0
        return


    def __len__(self):
        return self.size


    def _grow(self, needed):
        """ Enlarge the storage (up to the capacity) to hold at least `needed` rows """
        alloc = len(next(iter(self.data.values())))
        if needed <= alloc or alloc >= self.capacity:
            return
        new = min(self.capacity, max(needed, 2*alloc))
        for k,arr in self.data.items():
            bigger = np.zeros((new, arr.shape[1]))
            bigger[:alloc] = arr
            self.data[k] = bigger
        return


    def add(self, **arrays):
        """ Add a batch of transitions; every field must be given with the same number of rows """
        if set(arrays.keys()) != set(self.fields.keys()):
            errormsg = f'Expected the fields {sorted(self.fields)}, not {sorted(arrays)}'
            raise ValueError(errormsg)
        rows = {}
        for k,v in arrays.items():
            v = np.asarray(v, dtype=float).reshape(-1, self.fields[k])
            rows[k] = v
        counts = {len(v) for v in rows.values()}
        if len(counts) != 1:
            errormsg = f'All fields must have the same number of rows, not {counts}'
            raise ValueError(errormsg)
        n = counts.pop()
        if n > self.capacity: # Only the most recent rows fit
            rows = {k:v[-self.capacity:] for k,v in rows.items()}
            n = self.capacity
        self._grow(self.size + n)
        inds = (self.head + np.arange(n)) % self.capacity
        for k,v in rows.items():
            self.data[k][inds] = v
        self.head = (self.head + n) % self.capacity
        self.size = min(self.size + n, self.capacity)
        return


    def sample(self, batch_size, rng=None):
        """ Uniform sample with replacement; returns an objdict of arrays """
        if self.size == 0:
            errormsg = 'Cannot sample from an empty buffer'
            raise ValueError(errormsg)
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        inds = rng.integers(self.size, size=batch_size)
        return sc.objdict({k:arr[inds] for k,arr in self.data.items()})


    def get(self):
        """ All stored transitions (in storage order) """
        return sc.objdict({k:arr[:self.size].copy() for k,arr in self.data.items()})


def her_relabel(episode, indices, k=4, strategy='future', rng=None):
    """
    Hindsight relabeling: k extra copies of every transition whose goal is a state achieved
    later in the same episode. States, actions and next states are never altered; rewards
    must be recomputed from the new goals.

    Args:
        episode (dict): arrays 's', 'a', 's2', 'g' of one episode, in time order
        indices (array): goal-space indices of the task
        k (int): copies per transition
        strategy (str): 'future' (achieved next state of a uniformly drawn step t' ≥ t) or 'final'
        rng (Generator/int): random source

    Returns:
        sc.objdict with arrays 's', 'a', 's2', 'g' of the relabeled copies only
    """
    if strategy not in ['future', 'final']:
        errormsg = f'Relabeling strategy must be "future" or "final", not "{strategy}"'
        raise ValueError(errormsg)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    s  = np.atleast_2d(np.asarray(episode['s'], dtype=float))
    a  = np.atleast_2d(np.asarray(episode['a'], dtype=float))
    s2 = np.atleast_2d(np.asarray(episode['s2'], dtype=float))
    T = len(s)
    if k <= 0 or T == 0:
        return sc.objdict(s=s[:0], a=a[:0], s2=s2[:0], g=np.zeros((0, len(indices))))

    t = np.repeat(np.arange(T), k)
    if strategy == 'future':
        future = rng.integers(t, T)
    else:
        future = np.full(len(t), T-1)
    out = sc.objdict(
        s  = s[t],
        a  = a[t],
        s2 = s2[t],
        g  = s2[future][:, indices],
    )
    return out


class PolicyInterface(sc.prettyobj):
    """
    What the orchestrator needs from a per-task controller. Subclasses implement act();
    observe() and train() are no-ops for controllers that do not learn.
    """

    def act(self, state, goal, explore=False, rng=None):
        raise NotImplementedError

    def observe(self, s, a, s2, g):
        return

    def train(self, iterations=None):
        return sc.objdict()

    def snapshot(self):
        """ Copy for read-only use by rollout workers """
        return sc.dcp(self)


class PDController(PolicyInterface):

    def __init__(self, layout, task, kp=4.0, kd=3.0, max_force=5.0):
        """
        Scripted controller for one task.

        Args:
            layout (dict): state layout with 'i_agent', 'i_vel', 'i_obj', 'i_flag' (e.g. an Arena)
            task (int): task index; 0 is locomotion, k+1 is object k
            kp (float): proportional gain
            kd (float): damping gain
            max_force (float): component-wise force bound
        """
        self.i_agent = np.asarray(layout.i_agent)
        self.i_vel   = np.asarray(layout.i_vel)
        self.i_obj   = [np.asarray(m) for m in layout.i_obj]
        self.i_flag  = np.asarray(layout.i_flag)
        self.task    = int(task)
        self.kp      = kp
        self.kd      = kd
        self.max_force = max_force
        return


    def target(self, s, goal):
        """ Where the agent should go: the goal, the carrying position, or the object to fetch """
        s = np.asarray(s, dtype=float)
        agent = s[self.i_agent]
        goal = np.asarray(goal, dtype=float)
        if self.task == 0:
            return goal
        k = self.task - 1
        obj = s[self.i_obj[k]]
        if s[self.i_flag[k]]:
            return goal - (obj - agent)
        return obj


    def act(self, state, goal, explore=False, rng=None):
        s = np.asarray(state, dtype=float)
        force = self.kp*(self.target(s, goal) - s[self.i_agent]) - self.kd*s[self.i_vel]
        return np.clip(force, -self.max_force, self.max_force)


def pd_oracle_act(state, goal, task, layout, kp=4.0, kd=3.0, max_force=5.0):
    """ Single PD action for a task; see PDController """
    return PDController(layout, task, kp=kp, kd=kd, max_force=max_force).act(state, goal)


class ActorCritic(sc.prettyobj):

    def __init__(self, obs_dim, action_dim=2, max_force=5.0, pars=None, seed=None, **kwargs):
        """
        Entropy-regularized actor-critic on (normalized) observation vectors.

        The actor outputs the mean and log standard deviation of a Gaussian over
        pre-squash actions u; the action is max_force·tanh(u). Two critics score
        (observation, action/max_force); each has a target copy that tracks it by
        Polyak averaging.

        Args:
            obs_dim (int): observation size (normalized state and goal, concatenated)
            action_dim (int): action size
            max_force (float): action bound
            pars (dict): policy parameters (see make_pars()['policy'])
            seed (int): seed for weights and exploration
        """
        self.pars = sc.mergedicts(tcp.make_defaults('desk').policy, pars, kwargs)
        p = self.pars
        self.obs_dim    = int(obs_dim)
        self.action_dim = int(action_dim)
        self.max_force  = float(max_force)
        ss = np.random.SeedSequence(seed)
        s_actor, s_q1, s_q2, s_rng = [int(x) for x in ss.generate_state(4)]
        hidden = [p.width]*p.layers
        self.actor = tcn.Mlp([self.obs_dim] + hidden + [2*self.action_dim], activation='relu', seed=s_actor)
        self.q1 = tcn.Mlp([self.obs_dim + self.action_dim] + hidden + [1], activation='relu', seed=s_q1)
        self.q2 = tcn.Mlp([self.obs_dim + self.action_dim] + hidden + [1], activation='relu', seed=s_q2)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.actor_opt = tcn.Adam(self.actor.params, lr=p.lr)
        self.q1_opt = tcn.Adam(self.q1.params, lr=p.lr)
        self.q2_opt = tcn.Adam(self.q2.params, lr=p.lr)
        self.rng = np.random.default_rng(s_rng)
        self.updates = 0
        return


    def _head(self, obs):
        out = self.actor.forward(obs)
        mean = out[..., :self.action_dim]
        log_std = np.clip(out[..., self.action_dim:], -20, 2)
        return mean, log_std


    def act(self, obs, explore=False, rng=None):
        """
        Action for one observation: a squashed Gaussian sample if exploring, else the
        squashed mean. Always within ±max_force.
        """
        mean, log_std = self._head(np.asarray(obs, dtype=float))
        if explore:
            rng = self.rng if rng is None else rng
            u = mean + np.exp(log_std)*rng.standard_normal(mean.shape)
        else:
            u = mean
        return self.max_force*np.tanh(u)


    def sample_actions(self, obs, rng):
        """ Reparametrized batch sample: actions, log-probabilities and the intermediates """
        mean, log_std = self._head(obs)
        std = np.exp(log_std)
        noise = rng.standard_normal(mean.shape)
        u = mean + std*noise
        t = np.tanh(u)
        logp = (-0.5*noise**2 - log_std - 0.5*np.log(2*np.pi)).sum(axis=-1)
        logp -= np.log(1 - t**2 + 1e-6).sum(axis=-1)
        return sc.objdict(a=self.max_force*t, t=t, logp=logp, std=std, noise=noise)


    def _q(self, net, obs, a):
        return net.forward(np.hstack([obs, a/self.max_force]))[:, 0]


    def critic_loss(self, batch):
        """ Mean squared Bellman error of both critics on a batch (no update) """
        y = self._targets(batch, np.random.default_rng(0))
        l1 = ((self._q(self.q1, batch.obs, batch.a) - y)**2).mean()
        l2 = ((self._q(self.q2, batch.obs, batch.a) - y)**2).mean()
        return l1 + l2


    def _targets(self, batch, rng):
        p = self.pars
        nxt = self.sample_actions(batch.obs2, rng)
        q_next = np.minimum(self._q(self.q1_target, batch.obs2, nxt.a), self._q(self.q2_target, batch.obs2, nxt.a))
        return p.reward_scale*batch.r + p.discount*(1 - batch.done)*(q_next - p.alpha*nxt.logp)


    def update(self, batch):
        """
        One gradient step of both critics and the actor on a batch with fields
        obs, a, r, obs2, done, followed by the soft target update.

        Returns:
            sc.objdict of diagnostics
        """
        p = self.pars
        B = len(batch.obs)
        y = self._targets(batch, self.rng)

        # Critics
        critic_losses = []
        for net,opt in [(self.q1, self.q1_opt), (self.q2, self.q2_opt)]:
            q = self._q(net, batch.obs, batch.a)
            err = q - y
            critic_losses.append((err**2).mean())
            grads = net.backward((2*err/B)[:, None])
            opt.step(net.params, grads)

        # Actor: minimize α·logp − min(Q1, Q2) through the reparametrized sample
        cur = self.sample_actions(batch.obs, self.rng)
        qa1 = self._q(self.q1, batch.obs, cur.a)
        _, dx1 = self.q1.backward(np.ones((B, 1)), return_input=True)
        qa2 = self._q(self.q2, batch.obs, cur.a)
        _, dx2 = self.q2.backward(np.ones((B, 1)), return_input=True)
        use1 = (qa1 <= qa2)[:, None]
        dq_da = np.where(use1, dx1, dx2)[:, self.obs_dim:]/self.max_force
        t = cur.t
        dL_du = p.alpha*2*t*(1 - t**2)/(1 - t**2 + 1e-6) - dq_da*self.max_force*(1 - t**2)
        dL_dls = dL_du*cur.std*cur.noise - p.alpha
        raw = self.actor.cache.pre[-1][:, self.action_dim:]
        dL_dls *= (raw > -20) & (raw < 2) # Clipped log-stds get no gradient
        grads = self.actor.backward(np.hstack([dL_du, dL_dls])/B)
        self.actor_opt.step(self.actor.params, grads)
        actor_loss = (p.alpha*cur.logp - np.minimum(qa1, qa2)).mean()

        # Targets
        self.q1_target.soft_update(self.q1, p.tau)
        self.q2_target.soft_update(self.q2, p.tau)
        self.updates += 1

        out = sc.objdict(
            critic_loss = float(sum(critic_losses)),
            actor_loss  = float(actor_loss),
            q_mean      = float(np.minimum(qa1, qa2).mean()),
            entropy     = float(-cur.logp.mean()),
        )
        return out


    def nets(self):
        """ Networks by name, e.g. for save_params() """
        return sc.objdict(actor=self.actor, q1=self.q1, q2=self.q2, q1_target=self.q1_target, q2_target=self.q2_target)


def ac_act(policy, obs, explore=False, rng=None):
    """ Action of an actor-critic for one observation; see ActorCritic.act() """
    return policy.act(obs, explore=explore, rng=rng)


def ac_train(policy, buffer, iterations=1, batch_size=64, rng=None):
    """
    Run actor-critic updates on minibatches from a buffer with fields obs, a, r, obs2, done.

    Returns:
        Diagnostics of the final update
    """
    if len(buffer) < batch_size:
        errormsg = f'The buffer holds {len(buffer)} transitions, fewer than the batch size {batch_size}'
        raise ValueError(errormsg)
    rng = policy.rng if rng is None else rng
    diag = sc.objdict()
    for it in range(iterations):
        batch = buffer.sample(batch_size, rng)
        batch.r = batch.r[:, 0]
        batch.done = batch.done[:, 0]
        diag = policy.update(batch)
    return diag


class LearnedController(PolicyInterface):

    def __init__(self, state_dim, indices, scale, max_force=5.0, delta=1.0, pars=None, seed=None):
        """
        Goal-conditioned actor-critic for one task, with its own replay buffer.

        Observations are the state divided by `scale` followed by the goal divided by the
        goal-space scale; rewards are task rewards on the normalized coordinates, and a
        transition is terminal when the task's goal is reached.

        Args:
            state_dim (int): state size
            indices (array): the task's goal-space indices
            scale (array): per-coordinate normalization of the state
            max_force (float): action bound
            delta (float): success threshold on the squared goal distance
            pars (dict): policy parameters
            seed (int): seed
        """
        self.pars = sc.mergedicts(tcp.make_defaults('desk').policy, pars)
        self.indices = np.asarray(indices)
        self.scale = np.asarray(scale, dtype=float)
        self.delta = delta
        self.state_dim = int(state_dim)
        goal_dim = len(self.indices)
        self.policy = ActorCritic(self.state_dim + goal_dim, action_dim=2, max_force=max_force, pars=self.pars, seed=seed)
        fields = dict(obs=self.state_dim + goal_dim, a=2, r=1, obs2=self.state_dim + goal_dim, done=1)
        self.buffer = ReplayBuffer(self.pars.buffer_size, fields=fields)
        self.rng = np.random.default_rng(None if seed is None else seed + 1)
        self.new = 0 # Transitions observed since the last training phase
        return


    def obs(self, s, g):
        s = np.asarray(s, dtype=float)
        g = np.asarray(g, dtype=float)
        return np.concatenate([s/self.scale, g/self.scale[self.indices]], axis=-1)


    def act(self, state, goal, explore=False, rng=None):
        return self.policy.act(self.obs(state, goal), explore=explore, rng=rng)


    def _store(self, s, a, s2, g):
        gs = self.scale[self.indices]
        r = task_reward(s2/self.scale, g/gs, self.indices)
        done = (-task_reward(s2, g, self.indices) <= self.delta).astype(float)
        self.buffer.add(obs=self.obs(s, g), a=a, r=r, obs2=self.obs(s2, g), done=done)
        return


    def observe(self, s, a, s2, g):
        """ Store one episode segment of this task (arrays in time order), with hindsight copies if enabled """
        s, a, s2, g = [np.atleast_2d(np.asarray(x, dtype=float)) for x in [s, a, s2, g]]
        if not len(s):
            return
        self._store(s, a, s2, g)
        self.new += len(s)
        if self.pars.her:
            rel = her_relabel(dict(s=s, a=a, s2=s2), self.indices, k=self.pars.her_k, rng=self.rng)
            if len(rel.s):
                self._store(rel.s, rel.a, rel.s2, rel.g)
        return


    def train(self, iterations=None):
        """ Update on replayed batches: by default the larger of the minimum and update_ratio per new transition """
        p = self.pars
        if iterations is None:
            iterations = max(p.iterations, int(np.ceil(p.update_ratio*self.new)))
        if len(self.buffer) < p.batch_size:
            return sc.objdict()
        self.new = 0
        return ac_train(self.policy, self.buffer, iterations=iterations, batch_size=p.batch_size)


    def snapshot(self):
        buffer = self.buffer
        self.buffer = None
        try:
            new = sc.dcp(self)
        finally:
            self.buffer = buffer
        return new


def make_controllers(arena, pars=None, seed=None):
    """
    One controller per task of an arena, PD or learned depending on pars.policy.controller

    Args:
        arena (Arena): the environment (for its layout and bounds)
        pars (dict): full parameters from make_pars()
        seed (int): base seed; each task's controller gets its own derived seed
    """
    pars = tcp.make_pars() if pars is None else pars
    p = pars.policy
    ap = arena.pars
    controllers = []
    if p.controller == 'pd':
        for i in range(arena.n_tasks):
            controllers.append(PDController(arena, i, kp=p.kp, kd=p.kd, max_force=ap.max_force))
    else:
        scale = np.ones(arena.dim)
        scale[np.concatenate([arena.i_agent] + arena.i_obj)] = arena.half
        scale[arena.i_vel] = ap.max_force/ap.friction/ap.mass # Terminal speed
        seeds = np.random.SeedSequence(seed).generate_state(arena.n_tasks)
        for i in range(arena.n_tasks):
            ctrl = LearnedController(arena.dim, arena.goal_spaces[i], scale, max_force=ap.max_force,
                                     delta=ap.delta, pars=p, seed=int(seeds[i]))
            controllers.append(ctrl)
    return controllers
