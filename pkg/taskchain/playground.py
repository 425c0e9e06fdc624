"""
The synthetic 2D tool-use arena: a force-controlled point mass in a walled square,
plus objects that are static, wander randomly, are movable only in some rollouts,
can be picked up (the tool), or can only be moved with the tool (the heavy object).

State layout for d objects:

    (x, y, o1_x, o1_y, ..., od_x, od_y, vx, vy, p1, ..., pd)

where p_k is 1 while the agent possesses object k.
"""

import json
import numpy as np
import sciris as sc
from . import parameters as tcp


__all__ = ['object_kinds', 'Arena', 'save_jsonl']


object_kinds = ['static', 'random', 'halflight', 'tool', 'heavy']


def save_jsonl(filename, records, append=False):
    """ Write a list of dictionaries as JSON lines, converting arrays along the way """
    mode = 'a' if append else 'w'
    filename = sc.path(filename)
    try:
        filename.parent.mkdir(parents=True, exist_ok=True)
        with open(filename, mode) as f:
            for rec in records:
                f.write(json.dumps(sc.jsonify(rec)) + '\n')
    except OSError as E:
        errormsg = f'Could not write JSON lines to {filename}: {E}'
        raise OSError(errormsg) from E
    return filename


class Arena(sc.prettyobj):

    def __init__(self, pars=None, **kwargs):
        """
        Deterministic 2D arena with walls and objects.

        Args:
            pars (dict): arena parameters; defaults from taskchain.make_arena_pars()
            kwargs (dict): passed to make_arena_pars(), e.g. size=20, tmax=1600

        **Example**::

            arena = taskchain.Arena(size=10)
            s = arena.reset(seed=1)
            s = arena.step([1.0, 0.0])
        """
        self.pars = tcp.make_arena_pars(pars=pars, **kwargs)
        self.validate()

        # Build the state layout
        p = self.pars
        self.kinds = list(p.objects)
        self.n_objects = d = len(self.kinds)
        self.dim = 2 + 2*d + 2 + d
        self.half = p.size/2
        self.i_agent = np.array([0, 1])
        self.i_vel   = np.array([2 + 2*d, 3 + 2*d])
        self.i_obj   = [np.array([2 + 2*k, 3 + 2*k]) for k in range(d)]
        self.i_flag  = np.array([4 + 2*d + k for k in range(d)], dtype=int)

        # Tasks: the agent itself, then one per object
        names = []
        for kind in self.kinds:
            name = kind
            count = 2
            while name in names:
                name = f'{kind}{count}'
                count += 1
            names.append(name)
        self.object_names = names
        self.task_names = ['locomotion'] + names
        self.goal_spaces = [self.i_agent] + self.i_obj
        self.check_goal_spaces()

        # Rollout state
        self.state   = None
        self.rng     = None
        self.movable = None
        self.offsets = np.zeros((d, 2))
        self.anchors = np.zeros((d, 2))
        self.start   = None
        self.record  = False
        self.trace   = []
        return


    def validate(self):
        """ Check the arena parameters """
        p = self.pars
        if p.size <= 0:
            errormsg = f'Arena size must be positive, not {p.size}'
            raise ValueError(errormsg)
        if p.tmax < 0:
            errormsg = f'T^max must be non-negative, not {p.tmax}'
            raise ValueError(errormsg)
        if p.pickup_radius <= 0:
            errormsg = f'Pickup radius must be positive, not {p.pickup_radius}'
            raise ValueError(errormsg)
        if p.friction*p.dt >= 1:
            errormsg = f'Friction ({p.friction}) times time step ({p.dt}) must be below 1 for stable integration'
            raise ValueError(errormsg)
        if not 0 <= p.random_pull < 1:
            errormsg = f'The pull of the random object toward its start must be in [0,1), not {p.random_pull}'
            raise ValueError(errormsg)
        for kind in p.objects:
            if kind not in object_kinds:
                errormsg = f'Object kind "{kind}" not recognized; choices are {object_kinds}'
                raise ValueError(errormsg)
        if 'heavy' in p.objects and 'tool' not in p.objects:
            errormsg = 'A heavy object can only be moved with a tool, so the arena needs a tool too'
            raise ValueError(errormsg)
        return


    def check_goal_spaces(self):
        """ Goal spaces must be disjoint index groups inside the state """
        allinds = np.concatenate(self.goal_spaces)
        if len(np.unique(allinds)) != len(allinds):
            errormsg = 'Goal spaces overlap'
            raise ValueError(errormsg)
        if allinds.max() >= self.dim:
            errormsg = f'Goal-space index {allinds.max()} is outside the state (dimension {self.dim})'
            raise ValueError(errormsg)
        return


    @property
    def n_tasks(self):
        return len(self.task_names)

    @property
    def bounds(self):
        return np.array([-self.half, self.half])


    def task_index(self, task):
        """ Convert a task name or index to an index """
        if isinstance(task, str):
            try:
                return self.task_names.index(task)
            except ValueError:
                errormsg = f'Task "{task}" not found; choices are {self.task_names}'
                raise ValueError(errormsg)
        task = int(task)
        if not 0 <= task < self.n_tasks:
            errormsg = f'Task index {task} is outside 0..{self.n_tasks-1}'
            raise ValueError(errormsg)
        return task


    def goal_space(self, task):
        """ State indices controlled by a task """
        return self.goal_spaces[self.task_index(task)]


    def object_of(self, task):
        """ Object index of a task, or None for locomotion """
        i = self.task_index(task)
        return None if i == 0 else i - 1


    def reset(self, seed=None):
        """
        Scramble the arena: agent and objects uniformly inside the walls (kept at
        least min_separation apart), velocities and possession flags zeroed, and the
        coin for the half-light object flipped for this rollout
        """
        p = self.pars
        self.rng = np.random.default_rng(seed)
        n_bodies = self.n_objects + 1
        lim = self.half
        for attempt in range(p.max_tries):
            pos = self.rng.uniform(-lim, lim, size=(n_bodies, 2))
            dists = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
            dists[np.diag_indices(n_bodies)] = np.inf
            if dists.min() >= p.min_separation:
                break
        else:
            errormsg = f'Could not place {n_bodies} bodies at least {p.min_separation} apart in {p.max_tries} tries; use a larger arena or a smaller min_separation'
            raise ValueError(errormsg)

        s = np.zeros(self.dim)
        s[self.i_agent] = pos[0]
        for k in range(self.n_objects):
            s[self.i_obj[k]] = pos[k+1]
        self.movable = bool(self.rng.random() < p.halflight_prob)
        self.offsets = np.zeros((self.n_objects, 2))
        self.anchors = pos[1:].copy()
        self.start = s.copy()
        self.state = s
        self.trace = []
        if self.record:
            self.trace.append(dict(step=0, state=s.copy(), action=None, movable=self.movable))
        return s.copy()


    def _can_grab(self, k, agent, flags):
        """ Whether the agent picks up object k at its current position """
        kind = self.kinds[k]
        dist = np.linalg.norm(agent - self.state[self.i_obj[k]])
        touching = dist <= self.pars.pickup_radius
        if kind == 'tool':
            return touching
        elif kind == 'halflight':
            return touching and self.movable
        elif kind == 'heavy':
            has_tool = any(flags[j] for j,kd in enumerate(self.kinds) if kd == 'tool')
            return touching and has_tool
        return False


    def _reflect(self, x):
        """ Reflect coordinates back inside the walls """
        h = self.half
        x = np.where(x >  h,  2*h - x, x)
        x = np.where(x < -h, -2*h - x, x)
        return np.clip(x, -h, h)


    def step(self, action):
        """
        Advance one time step under force (F_x, F_y); returns the next state.

        The agent follows semi-implicit Euler with viscous friction; walls clamp the
        position and zero the normal velocity. Possessed objects are carried at their
        pickup offset; the random object takes a reflected Gaussian step, pulled back
        toward where it started.
        """
        if self.state is None:
            errormsg = 'Call reset() before step()'
            raise ValueError(errormsg)
        a = np.asarray(action, dtype=float).ravel()
        if a.shape != (2,):
            errormsg = f'Actions are 2D forces, not shape {np.shape(action)}'
            raise ValueError(errormsg)
        if not np.all(np.isfinite(a)):
            errormsg = f'Action must be finite, not {a}'
            raise ValueError(errormsg)

        p = self.pars
        h = self.half
        force = np.clip(a, -p.max_force, p.max_force)
        s = self.state.copy()

        # Agent dynamics
        vel = (1 - p.friction*p.dt)*s[self.i_vel] + force/p.mass*p.dt
        pos = s[self.i_agent] + vel*p.dt
        for d in range(2):
            if pos[d] < -h or pos[d] > h:
                pos[d] = np.clip(pos[d], -h, h)
                vel[d] = 0.0
        s[self.i_agent] = pos
        s[self.i_vel]   = vel

        # Pickups, in roster order so a tool grabbed this step can already carry the heavy object
        flags = s[self.i_flag].copy()
        for k in range(self.n_objects):
            if not flags[k] and self._can_grab(k, pos, flags):
                flags[k] = 1.0
                self.offsets[k] = s[self.i_obj[k]] - pos
        s[self.i_flag] = flags

        # Object motion
        for k,kind in enumerate(self.kinds):
            if flags[k]:
                s[self.i_obj[k]] = np.clip(pos + self.offsets[k], -h, h)
            elif kind == 'random':
                obj = s[self.i_obj[k]]
                step = -p.random_pull*(obj - self.anchors[k]) + self.rng.normal(0, p.random_sigma, size=2)
                s[self.i_obj[k]] = self._reflect(obj + step)

        self.state = s
        if self.record:
            self.trace.append(dict(step=len(self.trace), state=s.copy(), action=force))
        return s.copy()


    def sample_goal(self, task, seed=None):
        """
        Uniform goal inside the arena (minus a margin) for a task's goal space. After a
        reset, goals closer than goal_clearance to where the task's coordinates started
        are rejected, so no task is solved by standing still.
        """
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        inds = self.goal_space(task)
        p = self.pars
        lim = self.half - p.goal_margin
        origin = self.start[inds] if self.start is not None else None
        for attempt in range(p.max_tries):
            goal = rng.uniform(-lim, lim, size=len(inds))
            if origin is None or p.goal_clearance <= 0 or np.linalg.norm(goal - origin) >= p.goal_clearance:
                return goal
        errormsg = f'No goal for task "{self.task_names[self.task_index(task)]}" at least {p.goal_clearance} from its start in {p.max_tries} tries'
        raise ValueError(errormsg)


    def state_labels(self):
        """ Name of every state coordinate, e.g. agent_x, tool_y, vel_x, tool_flag """
        labels = ['agent_x', 'agent_y']
        for name in self.object_names:
            labels += [f'{name}_x', f'{name}_y']
        labels += ['vel_x', 'vel_y']
        labels += [f'{name}_flag' for name in self.object_names]
        return labels


    def contact(self, k, state=None):
        """ Whether the agent is within the pickup radius of object k """
        s = self.state if state is None else state
        return np.linalg.norm(s[self.i_agent] - s[self.i_obj[k]]) <= self.pars.pickup_radius


    def export_trace(self, filename):
        """ Save the recorded trace (set arena.record = True before reset) as JSON lines """
        return save_jsonl(filename, self.trace)
