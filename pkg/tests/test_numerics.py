"""
Tests of the network, optimizer, and running statistics
"""

import numpy as np
import sciris as sc
import pytest
import taskchain as tc


def finite_difference(net, x, upstream, eps=1e-6):
    """ Central differences of sum(output*upstream) with respect to every parameter """
    grads = []
    for p in net.params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=['multi_index'])
        for _ in it:
            i = it.multi_index
            orig = p[i]
            p[i] = orig + eps
            fp = (net.forward(x)*upstream).sum()
            p[i] = orig - eps
            fm = (net.forward(x)*upstream).sum()
            p[i] = orig
            g[i] = (fp - fm)/(2*eps)
        grads.append(g)
    return grads


def test_gradients(n_seeds=100):
    """ Backpropagation agrees with finite differences """
    worst = 0
    for seed in range(n_seeds):
        rng = np.random.default_rng(seed)
        act = ['tanh', 'relu'][seed % 2]
        net = tc.Mlp([3, 5, 4, 2], activation=act, seed=seed)
        x = rng.normal(size=(4, 3))
        upstream = rng.normal(size=(4, 2))
        grads = tc.mlp_backward(net, x, upstream)
        fd = finite_difference(net, x, upstream)
        for g,f in zip(grads, fd):
            err = np.abs(g - f).max()/max(1.0, np.abs(f).max())
            worst = max(worst, err)
    assert worst < 1e-4
    return worst


def test_input_gradient():
    """ Gradient with respect to the input, for a single vector """
    net = tc.Mlp([2, 6, 1], seed=3)
    x = np.array([0.3, -0.7])
    net.forward(x)
    grads, dx = net.backward(np.ones(1), return_input=True)
    eps = 1e-6
    fd = np.array([(net.forward(x + eps*e)[0] - net.forward(x - eps*e)[0])/(2*eps) for e in np.eye(2)])
    assert np.allclose(dx, fd, atol=1e-6)
    return dx


def test_mlp_errors():
    """ Dimension mismatches and bad settings raise """
    net = tc.Mlp([3, 4, 2], seed=1)
    with pytest.raises(ValueError):
        net.forward(np.ones(4))
    with pytest.raises(ValueError):
        tc.Mlp([3, 4, 2], seed=1).backward(np.ones(2))
    net.forward(np.ones(3))
    with pytest.raises(ValueError):
        net.backward(np.ones(3))
    with pytest.raises(ValueError):
        tc.Mlp([3, 4, 2], activation='sigmoid')
    return net


def test_adam():
    """ First step moves by the learning rate; repeated steps minimize a quadratic """
    x = np.array([3.0, -2.0])
    opt = tc.Adam([x], lr=0.1)
    tc.adam_step([x], [2*x], opt)
    assert np.allclose(x, [2.9, -1.9])

    for i in range(2000):
        opt.step([x], [2*x])
    assert np.abs(x).max() < 1e-2

    with pytest.raises(ValueError):
        opt.step([x], [np.ones(3)])
    return x


def test_running_stats():
    """ Welford statistics equal batch statistics; exponential weighting follows its recursion """
    rng = np.random.default_rng(1)
    data = rng.normal(2, 3, size=1000)
    rs = tc.RunningStats()
    for x in data:
        tc.stats_update(rs, x)
    assert np.isclose(rs.mean, data.mean())
    assert np.isclose(rs.var, data.var())

    w = 0.99
    ew = tc.RunningStats(weight=w)
    mean, var = data[0], 0.0
    ew.update(data[0])
    for x in data[1:]:
        ew.update(x)
        diff = x - mean
        incr = (1 - w)*diff
        mean += incr
        var = w*(var + diff*incr)
    assert np.isclose(ew.mean, mean)
    assert np.isclose(ew.var, var)

    with pytest.raises(ValueError):
        rs.update(np.nan)
    with pytest.raises(ValueError):
        tc.RunningStats(weight=1.5)
    return rs


def test_soft_update():
    """ Target parameters move a fraction τ of the way to the online ones """
    online = tc.Mlp([2, 3, 1], seed=1)
    target = tc.Mlp([2, 3, 1], seed=2)
    before = [p.copy() for p in target.params]
    tau = 0.05
    target.soft_update(online, tau)
    for b,t,o in zip(before, target.params, online.params):
        assert np.linalg.norm(t - b) <= tau*np.linalg.norm(o - b) + 1e-12
    return target


def test_save_load(tmp_path):
    """ Networks survive a trip through the JSON format """
    net = tc.Mlp([4, 8, 2], activation=['relu'], seed=5)
    filename = tmp_path / 'nets.json'
    tc.save_params(filename, dict(policy=net))
    loaded = tc.load_params(filename)
    x = np.linspace(-1, 1, 4)
    assert np.allclose(loaded.policy.forward(x), net.forward(x))
    assert loaded.policy.sizes == [4, 8, 2]
    return loaded


def test_determinism(n_steps=50):
    """ The same seeds give bit-identical parameters after training """

    def fit(seed):
        rng = np.random.default_rng(seed)
        net = tc.Mlp([3, 8, 8, 2], seed=seed)
        opt = tc.Adam(net.params, lr=1e-2)
        for i in range(n_steps):
            x = rng.normal(size=(16, 3))
            y = np.stack([np.sin(x[:, 0]), x[:, 1]*x[:, 2]], axis=1)
            out = net.forward(x)
            grads = net.backward(2*(out - y)/len(x))
            opt.step(net.params, grads)
        return net.params

    first = fit(4)
    second = fit(4)
    assert all(np.array_equal(a, b) for a,b in zip(first, second))
    assert not all(np.array_equal(a, b) for a,b in zip(first, fit(5)))
    return first


if __name__ == '__main__':
    T = sc.timer()
    worst = test_gradients()
    dx = test_input_gradient()
    net = test_mlp_errors()
    x = test_adam()
    rs = test_running_stats()
    target = test_soft_update()
    params = test_determinism()
    T.toc()
