import warnings

import numpy as np
import pytest

from w2conj.diffcore import ContractError
from w2conj.measures import Sampler
from w2conj.potentials import (
    AmortModel,
    NumericalAbort,
    PretrainingWarning,
    QuadraticPotential,
    amort_predict,
    icnn,
    icnn_value,
    identity_loss,
    init_nn,
    init_params,
    mlp_potential,
    mlp_potential_value,
    pretrain_identity,
)


def test_zero_icnn_is_half_norm():
    net = icnn(2, (4, 4))
    p = net.zeros()
    assert icnn_value(net, p, np.array([[1.0, 1.0]]))[0] == pytest.approx(1.0, abs=1e-15)


def test_log_alpha_shift_adds_half_norm():
    net = icnn(2, (4, 4))
    p = init_params(net, 0)
    x = np.random.default_rng(1).normal(size=(8, 2))
    f0 = net(p, x)
    f1 = net(p.replace(log_alpha=p["log_alpha"] + np.log(2.0)), x)
    assert np.allclose(f1 - f0, 0.5 * np.sum(x * x, axis=1), atol=1e-12)


def test_icnn_midpoint_convexity():
    net = icnn(2, (16, 16))
    rng = np.random.default_rng(2)
    p = init_params(net, rng)
    p = p.with_values(p.values + rng.normal(scale=0.5, size=p.values.size))
    x = rng.normal(size=(1000, 2)) * 3
    xp = rng.normal(size=(1000, 2)) * 3
    lam = rng.uniform(size=(1000, 1))
    lhs = net(p, lam * x + (1 - lam) * xp)
    rhs = lam[:, 0] * net(p, x) + (1 - lam[:, 0]) * net(p, xp)
    assert np.all(lhs <= rhs + 1e-10)


@pytest.mark.parametrize("act", ["elu", "leaky_relu(0.2)"])
def test_zero_mlp_is_half_norm(act):
    net = mlp_potential(2, (4, 4), act)
    x = np.array([[1.0, -2.0], [0.5, 0.25]])
    assert np.allclose(mlp_potential_value(net, net.zeros(), x), 0.5 * np.sum(x * x, axis=1))


def test_value_helpers_check_kind():
    with pytest.raises(ContractError):
        icnn_value(mlp_potential(2, (3,)), mlp_potential(2, (3,)).zeros(), np.zeros((1, 2)))


def test_coercive_along_rays():
    rng = np.random.default_rng(3)
    for net in (icnn(2, (4, 4)), mlp_potential(2, (4, 4))):
        d = rng.normal(size=(10, 2))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        x = 1e3 * d
        ratio = net(net.zeros(), x) / np.sum(x * x, axis=1)
        assert np.all(np.abs(ratio - 0.5) <= 0.05)


def test_gradient_mode_quadratic():
    model = AmortModel(icnn(2, (4,)), "gradient")
    y = np.random.default_rng(4).normal(size=(5, 2))
    assert np.allclose(amort_predict(model, model.net.zeros(), y), y, atol=1e-14)


def test_zero_residual_init_nn_is_identity():
    model = AmortModel(init_nn(2, (8, 8)), "direct")
    p = init_params(model.net, 5)
    p = p.replace(**{"out.wz": 0.0, "out.b": 0.0})
    y = np.random.default_rng(6).normal(size=(7, 2))
    assert np.array_equal(model.predict(p, y), y)
    assert identity_loss(model, p, y) == 0.0


def test_pretrain_exact_identity_starts_at_zero():
    net = icnn(2, (4, 4))
    s = Sampler("standard_normal", 2)
    assert identity_loss(net, net.zeros(), s.sample(64, 0)) == 0.0
    out = pretrain_identity(net, net.zeros(), s, n_iters=5)
    assert np.array_equal(out.values, net.zeros().values)


def test_pretrain_random_mlp_reaches_tolerance():
    net = mlp_potential(2, (32, 32))
    s = Sampler("standard_normal", 2)
    p = init_params(net, 7)
    with warnings.catch_warnings():
        warnings.simplefilter("error", PretrainingWarning)
        p = pretrain_identity(net, p, s, n_iters=2000, lr=1e-3, batch_size=1024, seed=1)
    assert identity_loss(net, p, s.sample(4096, 99)) <= 1e-2


def test_pretrained_init_nn_close_to_identity():
    model = AmortModel(init_nn(2, (64, 64)), "direct")
    s = Sampler("standard_normal", 2)
    p = pretrain_identity(model, init_params(model.net, 8), s, n_iters=2000, seed=2)
    y = s.sample(2048, 5)
    assert np.abs(model.predict(p, y) - y).max() <= 0.05


def test_pretrain_warns_when_short():
    net = mlp_potential(2, (16,))
    with pytest.warns(PretrainingWarning):
        pretrain_identity(net, init_params(net, 9, scale=3.0), Sampler("standard_normal", 2),
                          n_iters=1, lr=1e-6, batch_size=64)


def test_pretrain_nan_aborts():
    net = mlp_potential(2, (4,))
    p = init_params(net, 0)
    p = p.with_values(np.full(p.values.size, np.nan))
    with pytest.raises(NumericalAbort):
        pretrain_identity(net, p, Sampler("standard_normal", 2), n_iters=3, batch_size=8)


def test_quadratic_potential():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    f = QuadraticPotential(A, np.array([1.0, -1.0]))
    x = np.array([[1.0, 2.0]])
    v, g = f.value_and_grad_input(f.zeros(), x)
    assert v[0] == pytest.approx(0.5 * x[0] @ A @ x[0] + 1.0 - 2.0)
    assert np.allclose(g, x @ A + [1.0, -1.0])
