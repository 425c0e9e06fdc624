"""
Default parameters for the arena and every component of the agent, for two profiles:

    desk:  10×10 arena, T^max 400, smaller networks and faster learning rates
    large: 20×20 arena, T^max 1600, full-size networks and slower learning rates
           (also available under its command-line name "paper")

All parameters are nested sc.objdicts; user values are merged on top of the defaults.
"""

import sciris as sc


__all__ = ['profiles', 'profile_aliases', 'ablations', 'oracles', 'controllers', 'make_arena_pars', 'make_pars', 'load_config']


profiles    = ['desk', 'large', 'paper']
profile_aliases = dict(paper='large')
ablations   = ['none', 'no_surprise', 'uniform_tasks']
oracles     = ['none', 'graph', 'goals', 'full']
controllers = ['learned', 'pd']


def check_profile(profile):
    """ Validate a profile name and resolve aliases """
    if profile not in profiles:
        errormsg = f'Profile "{profile}" not recognized; choices are {profiles}'
        raise ValueError(errormsg)
    return profile_aliases.get(profile, profile)


def check_keys(user, defaults, label='pars'):
    """ Raise an error for keys that do not correspond to a default parameter """
    if user is None:
        return
    for k,v in user.items():
        if k not in defaults:
            errormsg = f'Parameter "{label}.{k}" not recognized; valid keys are: {sc.strjoin(defaults.keys())}'
            raise ValueError(errormsg)
        if isinstance(defaults[k], dict) and isinstance(v, dict):
            check_keys(v, defaults[k], label=f'{label}.{k}')
    return


def make_arena_pars(profile='desk', pars=None, **kwargs):
    """ Arena parameters; see Arena for usage """
    profile = check_profile(profile)
    p = sc.objdict()
    p.size           = 10.0   # Side length of the square arena (large: 20)
    p.dt             = 0.1    # Integration time step
    p.friction       = 2.0    # Linear viscous drag coefficient
    p.mass           = 1.0    # Agent mass
    p.max_force      = 5.0    # Component-wise force bound
    p.pickup_radius  = 1.0    # Distance at which objects are picked up
    p.tmax           = 400    # Episode cap T^max (large: 1600)
    p.delta          = 1.0    # Success threshold on the squared goal distance
    p.random_sigma   = 0.05   # Standard deviation of the random object's step
    p.random_pull    = 0.1    # Fraction of its offset from the start position the random object recovers per step
    p.halflight_prob = 0.5    # Fraction of rollouts in which the half-light object is movable
    p.goal_margin    = 0.5    # Goals are sampled at least this far from the walls
    p.goal_clearance = 2.0    # Goals are sampled at least this far from the task's position at reset
    p.min_separation = 1.5    # Minimum initial distance between any two bodies
    p.max_tries      = 1000   # Rejection-sampling attempts for the initial layout
    p.objects        = ['tool', 'heavy', 'halflight', 'random']
    if profile == 'large':
        p.size = 20.0
        p.tmax = 1600
    user = sc.mergedicts(pars, kwargs)
    check_keys(user, p, label='arena')
    p = sc.mergedicts(p, user)
    return p


def make_defaults(profile='desk'):
    """ Full nested parameter tree for a profile """
    profile = check_profile(profile)
    large = (profile == 'large')
    pars = sc.objdict()
    pars.profile = profile

    pars.arena = make_arena_pars(profile)

    # Forward model
    w = sc.objdict()
    w.width       = 100 if large else 64
    w.layers      = 9 if large else 3    # Hidden layers
    w.activation  = 'tanh'
    w.lr          = 1e-4 if large else 1e-3
    w.batch_size  = 64
    w.iterations  = 100
    w.buffer_size = 1_000_000 if large else 100_000
    pars.world = w

    # Surprise detection
    s = sc.objdict()
    s.theta  = 5.0   # Threshold in standard deviations
    s.weight = 0.99  # Exponential history weighting; None for unweighted statistics
    s.warmup = 500   # Error differences per task before surprise can fire
    pars.surprise = s

    # Final-task selector (bandit)
    t = sc.objdict()
    t.beta   = 0.1   # Surprise bonus β^T
    t.lr     = 0.1   # Action-value learning rate α^T
    t.eps    = 0.05  # Uniform exploration
    t.window = 10    # Z, attempts in the success-rate running mean
    t.floor  = 1e-6  # Minimum action value for the proportional policy
    pars.selector = t

    # Task planner
    b = sc.objdict()
    b.beta   = 1e-3  # Surprise bonus β^B
    b.window = 100   # Running-average window
    b.eps    = 0.05 if large else 0.2 # ε-greedy predecessor sampling
    b.weight = 0.99  # Exponential history weighting of the surprise term; None for the windowed mean
    pars.planner = b

    # Goal proposal networks
    g = sc.objdict()
    g.lr          = 1e-4 if large else 3e-3
    g.batch_size  = 64
    g.iterations  = 100
    g.gamma       = 1.0    # Initial sharpness γ
    g.train_gamma = True
    g.l1          = 0.0
    g.l2          = 0.0
    g.init_scale  = 0.01   # Initial weights are U(±init_scale)
    g.ridge       = 1e-8   # Regularization of the analytic argmax
    g.refresh     = 5      # Steps between sub-goal updates
    g.pool_size   = 20_000 # Undetermined samples kept per transition
    pars.gnet = g

    # Low-level control
    c = sc.objdict()
    c.controller   = 'learned'
    c.width        = 256 if large else 64
    c.layers       = 2
    c.lr           = 3e-4 if large else 1e-3
    c.batch_size   = 64
    c.discount     = 0.99 if large else 0.98
    c.reward_scale = 5.0
    c.alpha        = 0.05    # Entropy weight (fixed), relative to rewards on coordinates scaled by the arena half-size
    c.tau          = 5e-3    # Soft target update rate
    c.iterations   = 200 if large else 50 # Minimum updates per training phase
    c.update_ratio = 0.5     # Updates per new transition of the task, when that exceeds the minimum
    c.buffer_size  = 1_000_000 if large else 100_000
    c.her          = False
    c.her_k        = 4
    c.kp           = 4.0     # PD controller gains
    c.kd           = 3.0
    pars.policy = c

    # Experiment
    r = sc.objdict()
    r.epochs        = 100
    r.max_steps     = None   # Stop early once this many environment steps have been taken
    r.workers       = 5
    r.rollouts      = None   # Rollouts per epoch; defaults to the number of workers
    r.parallel      = True   # Use worker processes when workers > 1
    r.seed          = 1
    r.ablation      = 'none'
    r.oracle        = 'none'
    r.leg_budget    = None   # Steps per sub-task; defaults to T^max/len(chain) plus time left over by earlier legs
    r.save_rollouts = False
    pars.run = r

    return pars


def make_pars(profile='desk', pars=None, **kwargs):
    """
    Create the full parameter tree.

    Args:
        profile (str): 'desk' or 'large' ('paper' is the same as 'large')
        pars (dict): nested overrides, e.g. dict(arena=dict(size=20), run=dict(seed=3))
        kwargs (dict): further nested overrides by section

    **Example**::

        pars = taskchain.make_pars('desk', run=dict(epochs=10, oracle='full'))
    """
    if pars is not None and 'profile' in pars:
        pars = sc.dcp(pars)
        profile = pars.pop('profile')
    defaults = make_defaults(profile)
    user = sc.mergenested(pars or {}, kwargs)
    check_keys(user, defaults)
    out = sc.mergenested(defaults, user)
    out = sc.objdict({k:sc.objdict(v) if isinstance(v, dict) else v for k,v in out.items()})

    # Validate choices
    r = out.run
    if r.ablation not in ablations:
        errormsg = f'Ablation "{r.ablation}" not recognized; choices are {ablations}'
        raise ValueError(errormsg)
    if r.oracle not in oracles:
        errormsg = f'Oracle "{r.oracle}" not recognized; choices are {oracles}'
        raise ValueError(errormsg)
    if out.policy.controller not in controllers:
        errormsg = f'Controller "{out.policy.controller}" not recognized; choices are {controllers}'
        raise ValueError(errormsg)
    if r.workers < 1:
        errormsg = f'There must be ≥1 rollout workers, not {r.workers}'
        raise ValueError(errormsg)
    if r.oracle == 'full':
        out.policy.controller = 'pd'
    if r.rollouts is None:
        r.rollouts = r.workers
    return out


def load_config(filename):
    """ Load a JSON configuration file of nested overrides (optionally with a "profile" key) """
    try:
        data = sc.loadjson(filename)
    except FileNotFoundError as E:
        errormsg = f'Configuration file not found: {filename}'
        raise OSError(errormsg) from E
    if not isinstance(data, dict):
        errormsg = f'Configuration file {filename} must contain a JSON object'
        raise ValueError(errormsg)
    return data
