"""
Numerical building blocks shared by every learned component: a small feed-forward
network with hand-written backpropagation, the Adam optimizer, and running statistics
"""

import numpy as np
import sciris as sc


__all__ = ['Mlp', 'Adam', 'RunningStats', 'mlp_forward', 'mlp_backward', 'adam_step',
           'stats_update', 'save_params', 'load_params']


hidden_activations = ['tanh', 'relu']


def _activate(z, kind):
    """ Apply a hidden-layer activation """
    if kind == 'tanh':
        return np.tanh(z)
    else:
        return np.maximum(z, 0.0)


def _activate_grad(z, h, kind):
    """ Derivative of the activation, given the pre-activation z and output h """
    if kind == 'tanh':
        return 1.0 - h**2
    else:
        return (z > 0).astype(float)


class Mlp(sc.prettyobj):

    def __init__(self, sizes, activation='tanh', seed=None, init='uniform'):
        """
        A fully connected network with tanh or relu hidden layers and a linear output.

        Args:
            sizes (list): layer widths, input first and output last, e.g. [4, 64, 64, 2]
            activation (str/list): activation of each hidden layer ('tanh' or 'relu'); a single string applies to all
            seed (int): seed for the initial weights
            init (str): 'uniform' draws weights and biases from U(±1/√fan_in); 'zeros' sets everything to zero

        Weights are stored with shape (fan_in, fan_out), so a layer computes x @ W + b.

        **Example**::

            net = taskchain.Mlp([3, 16, 1], seed=1)
            y = net.forward(np.ones(3))
        """
        self.sizes = [int(s) for s in sizes]
        n_hidden = max(0, len(self.sizes) - 2)
        if isinstance(activation, str):
            activation = [activation]*n_hidden
        self.activation = list(activation)
        self.init = init
        self.validate()

        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases  = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if init == 'zeros':
                W = np.zeros((fan_in, fan_out))
                b = np.zeros(fan_out)
            else:
                bound = 1/np.sqrt(fan_in)
                W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
                b = rng.uniform(-bound, bound, size=fan_out)
            self.weights.append(W)
            self.biases.append(b)
        self.cache = None
        return


    def validate(self):
        """ Check the layer sizes and activations """
        if len(self.sizes) < 2:
            errormsg = f'A network needs at least an input and an output width, not {self.sizes}'
            raise ValueError(errormsg)
        if min(self.sizes) < 1:
            errormsg = f'Layer widths must be positive integers, not {self.sizes}'
            raise ValueError(errormsg)
        if len(self.activation) != len(self.sizes) - 2:
            errormsg = f'Expected {len(self.sizes)-2} hidden activations, not {len(self.activation)}'
            raise ValueError(errormsg)
        for act in self.activation:
            if act not in hidden_activations:
                errormsg = f'Activation "{act}" not recognized; choices are {hidden_activations}'
                raise ValueError(errormsg)
        if self.init not in ['uniform', 'zeros']:
            errormsg = f'Initialization "{self.init}" not recognized; choices are "uniform" or "zeros"'
            raise ValueError(errormsg)
        return


    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def params(self):
        """ Flat list of parameter arrays (references, not copies): [W0, b0, W1, b1, ...] """
        out = []
        for W,b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @property
    def n_params(self):
        return sum(p.size for p in self.params)


    def set_params(self, params):
        """ Copy values into the parameter arrays, in the order of self.params """
        for target,source in zip(self.params, params):
            target[...] = source
        return


    def forward(self, x):
        """
        Evaluate the network on a single input vector or a batch of row vectors;
        intermediate values are cached for backward()
        """
        x = np.asarray(x, dtype=float)
        single = (x.ndim == 1)
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            errormsg = f'Input has shape {x.shape} but the network expects {self.sizes[0]} features'
            raise ValueError(errormsg)

        inputs = []
        pre    = []
        h = x
        for l,(W,b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ W + b
            pre.append(z)
            if l < self.n_layers - 1:
                h = _activate(z, self.activation[l])
            else:
                h = z # Linear output
        self.cache = sc.objdict(inputs=inputs, pre=pre, single=single)
        return h[0] if single else h


    def backward(self, upstream, return_input=False):
        """
        Backpropagate an upstream gradient through the last forward pass.

        Args:
            upstream (array): gradient of the scalar objective w.r.t. the output, same shape as the output
            return_input (bool): also return the gradient w.r.t. the input

        Returns:
            List of gradients aligned with self.params (summed over the batch), and optionally the input gradient
        """
        if self.cache is None:
            errormsg = 'backward() called before forward()'
            raise ValueError(errormsg)
        c = self.cache
        g = np.asarray(upstream, dtype=float)
        if c.single:
            g = g[None, :]
        if g.shape != c.pre[-1].shape:
            errormsg = f'Upstream gradient has shape {g.shape} but the output has shape {c.pre[-1].shape}'
            raise ValueError(errormsg)

        dWs = [None]*self.n_layers
        dbs = [None]*self.n_layers
        for l in reversed(range(self.n_layers)):
            if l < self.n_layers - 1:
                h_out = c.inputs[l+1]
                g = g * _activate_grad(c.pre[l], h_out, self.activation[l])
            dWs[l] = c.inputs[l].T @ g
            dbs[l] = g.sum(axis=0)
            g = g @ self.weights[l].T

        grads = []
        for dW,db in zip(dWs, dbs):
            grads += [dW, db]
        if return_input:
            dx = g[0] if c.single else g
            return grads, dx
        return grads


    def copy(self):
        """ Deep copy without the forward cache """
        new = sc.dcp(self)
        new.cache = None
        return new


    def soft_update(self, source, tau):
        """ Move parameters toward another network's: θ ← (1−τ)θ + τθ_source """
        for target,p in zip(self.params, source.params):
            target *= (1 - tau)
            target += tau*p
        return


    def to_dict(self):
        """ Serializable representation: layer widths header plus row-major weights """
        d = dict(
            sizes      = self.sizes,
            activation = self.activation,
            weights    = [W.tolist() for W in self.weights],
            biases     = [b.tolist() for b in self.biases],
        )
        return d


    @classmethod
    def from_dict(cls, d):
        """ Rebuild a network from to_dict() output """
        net = cls(d['sizes'], activation=d['activation'], init='zeros')
        for l in range(net.n_layers):
            W = np.array(d['weights'][l], dtype=float).reshape(net.sizes[l], net.sizes[l+1])
            net.weights[l][...] = W
            net.biases[l][...]  = np.array(d['biases'][l], dtype=float)
        return net


def mlp_forward(net, x):
    """ Evaluate a network; see Mlp.forward() """
    return net.forward(x)


def mlp_backward(net, x, upstream):
    """ Parameter gradients of output·upstream at input x; see Mlp.backward() """
    net.forward(x)
    return net.backward(upstream)


class Adam(sc.prettyobj):

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        """
        Adam optimizer state for a fixed list of parameter arrays.

        Args:
            params (list): the arrays that will be updated (used for the moment shapes)
            lr (float): learning rate
            beta1 (float): decay of the first moment
            beta2 (float): decay of the second moment
            eps (float): stabilizer added to the denominator
        """
        self.lr    = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps   = eps
        self.m = [np.zeros_like(p, dtype=float) for p in params]
        self.v = [np.zeros_like(p, dtype=float) for p in params]
        self.t = 0
        return


    def step(self, params, grads):
        """ Update params in place with bias-corrected Adam; returns params """
        if len(params) != len(self.m) or len(grads) != len(self.m):
            errormsg = f'Adam state holds {len(self.m)} arrays but got {len(params)} parameters and {len(grads)} gradients'
            raise ValueError(errormsg)
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p,g,m,v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape or p.shape != m.shape:
                errormsg = f'Shape mismatch: parameter {p.shape}, gradient {np.shape(g)}, moment {m.shape}'
                raise ValueError(errormsg)
            m *= self.beta1
            m += (1.0 - self.beta1)*g
            v *= self.beta2
            v += (1.0 - self.beta2)*(g*g)
            p -= self.lr*(m/bc1)/(np.sqrt(v/bc2) + self.eps)
        return params


def adam_step(params, grads, st):
    """ One Adam update of params using optimizer state st; see Adam.step() """
    return st.step(params, grads)


class RunningStats(sc.prettyobj):

    def __init__(self, weight=None):
        """
        Running mean and population variance of a scalar stream.

        Args:
            weight (float): if None, every sample counts equally (Welford); otherwise an
                exponential forgetting factor in (0,1), e.g. 0.99
        """
        if weight is not None and not (0 < weight < 1):
            errormsg = f'The exponential weight must be between 0 and 1, not {weight}'
            raise ValueError(errormsg)
        self.weight = weight
        self.count  = 0
        self.mean   = 0.0
        self.var    = 0.0
        self._m2    = 0.0
        return


    @property
    def std(self):
        return np.sqrt(self.var)


    def update(self, x):
        """ Add one finite sample """
        x = float(x)
        if not np.isfinite(x):
            errormsg = f'Running statistics only accept finite samples, not {x}'
            raise ValueError(errormsg)
        self.count += 1
        if self.count == 1:
            self.mean = x
            self.var  = 0.0
            self._m2  = 0.0
        elif self.weight is None:
            delta = x - self.mean
            self.mean += delta/self.count
            self._m2  += delta*(x - self.mean)
            self.var   = self._m2/self.count
        else:
            w = self.weight
            diff = x - self.mean
            incr = (1 - w)*diff
            self.mean += incr
            self.var   = w*(self.var + diff*incr)
        return self


def stats_update(rs, x):
    """ Add a sample to a RunningStats object and return it """
    return rs.update(x)


def save_params(filename, nets, folder=None):
    """
    Save a dictionary of networks to a JSON file

    **Example**::

        taskchain.save_params('policy.json', dict(actor=ac.actor, q1=ac.q1))
    """
    data = {k:net.to_dict() for k,net in nets.items()}
    try:
        out = sc.savejson(filename, data, folder=folder)
    except Exception as E:
        errormsg = f'Could not save parameters to {filename}: {E}'
        raise OSError(errormsg) from E
    return out


def load_params(filename, folder=None):
    """ Load networks saved with save_params() """
    data = sc.loadjson(filename, folder=folder)
    nets = sc.objdict({k:Mlp.from_dict(d) for k,d in data.items()})
    return nets
