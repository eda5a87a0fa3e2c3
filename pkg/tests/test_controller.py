import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from itconsensus.controller import (
    BacksteppingController,
    ControllerError,
    ControllerParams,
    RbfNetwork,
    adapt_step,
    errors,
    nn_input_dims,
    nn_inputs,
    theta_rhs,
    virtual_input,
)


def gauss(z, c, w):
    return math.exp(-sum((a - b) ** 2 for a, b in zip(z, c)) / (2 * w * w))


def test_lattice_features_match_generic_form(rng):
    net = RbfNetwork.lattice(3, -3, 3, 5)
    generic = RbfNetwork(net.centers, net.width)
    z = rng.uniform(-4, 4, size=(50, 3))
    np.testing.assert_allclose(net.features(z), generic.features(z), rtol=1e-12, atol=1e-300)
    assert net.size == 125 and net.dim == 3
    assert net.width == pytest.approx(1.5)


def test_features_by_hand(rng):
    net = RbfNetwork.lattice(2, -1, 1, 3)
    z = rng.normal(size=2)
    phi = net.features(z)[0]
    for k, c in enumerate(net.centers):
        assert phi[k] == pytest.approx(gauss(z, c, net.width), rel=1e-12)


def test_randomized_law_equivalence(rng):
    for _ in range(1000):
        e, K, rho = rng.normal(), rng.uniform(0.1, 30), rng.uniform(0.1, 3)
        g = rng.normal(size=2)
        L = int(rng.integers(1, 30))
        th, ph = rng.normal(size=L), rng.uniform(0, 1, size=L)
        gam, sig = rng.uniform(0.1, 20), rng.uniform(0.01, 2)
        direct_alpha = -(K + rho**2 / 2 * (g[0] ** 2 + g[1] ** 2)) * e - sum(a * b for a, b in zip(th, ph))
        # one follower: rows of g are noise-gain vectors
        got = virtual_input(np.array([e]), g[None], th[None], ph[None], K, rho)
        assert got.shape == (1,)
        assert got[0] == pytest.approx(direct_alpha, rel=1e-12, abs=1e-12)
        direct_rhs = [gam * (e * p - sig * t) for t, p in zip(th, ph)]
        np.testing.assert_allclose(theta_rhs(th, e, ph, gam, sig), direct_rhs, rtol=1e-12, atol=1e-12)


def test_adapt_step_matches_ode_solution(rng):
    th0, ph = rng.normal(size=5), rng.uniform(size=5)
    e, gam, sig, h = 0.7, 10.0, 0.5, 0.05
    sol = solve_ivp(lambda t, y: theta_rhs(y, e, ph, gam, sig), (0, h), th0, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(adapt_step(th0, e, ph, h, gam, sig), sol.y[:, -1], atol=1e-10)
    # fixed point of the leaky law
    np.testing.assert_allclose(adapt_step(e * ph / sig, e, ph, h, gam, sig), e * ph / sig, atol=1e-14)


def test_errors():
    x = np.array([[1.0, 2.0, 3.0]])
    eta = np.array([[0.5, 0.0, 0.0]])
    e = errors(x, eta, np.array([[1.5, -1.0]]))
    np.testing.assert_allclose(e, [[0.5, 0.5, 4.0]])


def test_nn_inputs():
    x = np.array([[1.0, 2.0]])
    eta = np.array([[3.0, 4.0]])
    e = np.array([[5.0, 6.0]])
    np.testing.assert_allclose(nn_inputs(1, x, eta, e), [[1.0, 3.0, 4.0]])
    np.testing.assert_allclose(nn_inputs(2, x, eta, e), [[1.0, 2.0, 5.0, 4.0]])
    assert nn_input_dims(2) == [3, 4]
    assert nn_input_dims(1) == [2]


def test_compute_matches_scalar_recursion(rng):
    p = ControllerParams(2, K_gains=[12.0, 15.0], rho=[1.0, 1.5])
    c = BacksteppingController(p)
    rows = 6
    x, eta = rng.normal(size=(rows, 2)), rng.normal(size=(rows, 2))
    g = rng.normal(size=(rows, 2, 1))
    th = [rng.normal(size=(rows, n.size)) for n in c.networks]
    out = c.compute(x, eta, g, th)
    for r in range(rows):
        e1 = x[r, 0] - eta[r, 0]
        phi1 = [gauss((x[r, 0], eta[r, 0], eta[r, 1]), cc, c.networks[0].width) for cc in c.networks[0].centers]
        a1 = -(12.0 + 0.5 * g[r, 0, 0] ** 2) * e1 - np.dot(th[0][r], phi1)
        e2 = x[r, 1] - a1
        phi2 = [gauss((x[r, 0], x[r, 1], e1, eta[r, 1]), cc, c.networks[1].width) for cc in c.networks[1].centers]
        u = -(15.0 + 0.5 * 2.25 * g[r, 1, 0] ** 2) * e2 - np.dot(th[1][r], phi2)
        assert out.alpha[r, 0] == pytest.approx(a1, rel=1e-12)
        assert out.e[r, 1] == pytest.approx(e2, rel=1e-12)
        assert out.u[r] == pytest.approx(u, rel=1e-12)
    rhs = c.weight_rhs(out, th)
    np.testing.assert_allclose(rhs[1], 10.0 * (out.e[:, 1:2] * out.phi[1] - 0.5 * th[1]))


def test_zero_weights_shapes():
    c = BacksteppingController(ControllerParams(2))
    w = c.zero_weights(4)
    assert [a.shape for a in w] == [(4, 125), (4, 625)]


def test_params_by_hand():
    p = ControllerParams(2)
    np.testing.assert_allclose(p.deltas(), [14.0, 14.5])
    np.testing.assert_allclose(p.decay_terms(), [14.0, 14.0])
    assert p.c_gamma == 20.0
    assert p.l_a == 1.0


def test_params_validation():
    with pytest.raises(ControllerError):
        ControllerParams(2, K_gains=-1.0)
    with pytest.raises(ControllerError, match="decay"):
        ControllerParams(2, K_gains=0.6).validate()
    with pytest.raises(ControllerError):
        RbfNetwork(np.zeros((1, 2)), 0.0)
