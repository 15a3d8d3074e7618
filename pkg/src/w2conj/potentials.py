"""Potential and amortization architectures plus identity pretraining.

* :func:`icnn` builds the input-convex potential: a softplus-positive z-path,
  unconstrained x-skips, activation normalization, a final activation and the
  learnable quadratic ``exp(log_alpha)/2 |x|^2``.
* :func:`mlp_potential` is the unconstrained counterpart.
* :func:`init_nn` is the residual MLP ``y -> y + net(y)`` used to predict
  conjugate solutions directly.
* :class:`AmortModel` wraps either a direct predictor or the gradient of a
  scalar network.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diffcore import (
    ContractError,
    Layer,
    Network,
    ParamVector,
    get_activation,
    rowmm,
    softplus_inv,
)
from .optim import Adam


class PretrainingWarning(UserWarning):
    pass


class NumericalAbort(RuntimeError):
    """A NaN or infinity appeared where the computation cannot continue."""


def default_hidden(dim: int) -> list:
    """Hidden widths used for ``dim``-dimensional tasks (two-dimensional tasks use [128, 128])."""
    if dim == 2:
        return [128, 128]
    return [max(2 * dim, 64), max(2 * dim, 64), max(dim, 32)]


def _mlp_layers(dim, hidden, act, out_dim, out_act=None):
    layers = [Layer("h0", hidden[0], x_in=dim, activation=act)]
    for i in range(1, len(hidden)):
        layers.append(Layer(f"h{i}", hidden[i], z_in=hidden[i - 1], activation=act))
    last = Layer("out", out_dim, z_in=hidden[-1])
    if out_act is not None:
        last.activation = out_act
    layers.append(last)
    return layers


def icnn(dim: int, hidden: Sequence[int], activation="elu", actnorm=True) -> Network:
    act = get_activation(activation)
    hidden = list(hidden)
    layers = [Layer("x0", hidden[0], x_in=dim, activation=act)]
    for i in range(1, len(hidden)):
        layers.append(Layer(f"h{i}", hidden[i], z_in=hidden[i - 1], x_in=dim, positive=True,
                            actnorm=actnorm, activation=act))
    layers.append(Layer("out", 1, z_in=hidden[-1], x_in=dim, positive=True, activation=act))
    net = Network(dim, layers, head="scalar", quadratic=True)
    net.kind = "icnn"
    return net


def mlp_potential(dim: int, hidden: Sequence[int], activation="elu") -> Network:
    act = get_activation(activation)
    net = Network(dim, _mlp_layers(dim, hidden, act, 1, act), head="scalar", quadratic=True)
    net.kind = "mlp"
    return net


def init_nn(dim: int, hidden: Sequence[int] = (512, 512), activation="elu") -> Network:
    act = get_activation(activation)
    net = Network(dim, _mlp_layers(dim, hidden, act, dim), head="residual", quadratic=False)
    net.kind = "init_nn"
    return net


def init_params(net: Network, rng, scale=1.0) -> ParamVector:
    """Fan-in scaled truncated-normal kernels, zero biases, unit activation norms.

    Positive kernels are initialized so their softplus images are near ``1/fan_in``.
    """
    rng = np.random.default_rng(rng)
    params = net.zeros()
    updates = {}
    for layer in net.layers:
        for key, fan_in, positive in ((f"{layer.name}.wz", layer.z_in, layer.positive),
                                      (f"{layer.name}.wx", layer.x_in, False)):
            if not fan_in:
                continue
            shape = params[key].shape
            std = scale / np.sqrt(fan_in) / 0.87962566103423978
            w = np.clip(rng.standard_normal(shape), -2.0, 2.0) * std
            if positive:
                w = softplus_inv(np.abs(w) / np.sqrt(fan_in) + 1e-3)
            updates[key] = w
    return params.replace(**updates)


# ---------------------------------------------------------------------------
# evaluation helpers named after the architectures


def icnn_value(net: Network, params: ParamVector, x) -> np.ndarray:
    if getattr(net, "kind", None) != "icnn":
        raise ContractError("icnn_value expects an ICNN network")
    return net(params, x)


def mlp_potential_value(net: Network, params: ParamVector, x) -> np.ndarray:
    if getattr(net, "kind", None) != "mlp":
        raise ContractError("mlp_potential_value expects an MLP potential")
    return net(params, x)


class QuadraticPotential:
    """``f(x) = 1/2 x^T A x + b^T x`` with the network evaluation surface.

    Useful as an exact test potential: its conjugate argmin solves ``A x = y - b``.
    """

    kind = "quadratic"
    head = "scalar"

    def __init__(self, A, b=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        self.dim = self.A.shape[0]
        self.b = np.zeros(self.dim) if b is None else np.asarray(b, dtype=np.float64)

    def zeros(self):
        return ParamVector.from_shapes([])

    def __call__(self, params, x):
        x = np.asarray(x, dtype=np.float64)
        return self.value_and_grad_input(params, x)[0]

    def value_and_grad_input(self, params, x):
        x = np.asarray(x, dtype=np.float64)
        g = rowmm(x, self.A.T)
        return 0.5 * np.einsum("ij,ij->i", x, g) + np.einsum("ij,j->i", x, self.b), g + self.b

    def grad_input(self, params, x):
        return self.value_and_grad_input(params, x)[1]

    def hvp(self, params, x, v):
        return rowmm(np.asarray(v, dtype=np.float64), self.A.T)


# ---------------------------------------------------------------------------
# amortization models


@dataclass
class AmortModel:
    """Predicts conjugate solutions ``x(y)``.

    ``mode='direct'``: ``net`` maps y to x (an :func:`init_nn`).
    ``mode='gradient'``: the prediction is ``grad_y net(y)`` for a scalar network.
    """

    net: Network
    mode: str = "direct"

    def __post_init__(self):
        if self.mode not in ("direct", "gradient"):
            raise ContractError(f"unknown amortizer mode {self.mode!r}")
        if self.mode == "gradient" and self.net.head != "scalar":
            raise ContractError("gradient mode needs a scalar network")
        if self.mode == "direct" and self.net.head != "residual":
            raise ContractError("direct mode needs a vector-valued network")

    @property
    def dim(self):
        return self.net.dim

    def predict(self, params, y):
        if self.mode == "direct":
            return self.net(params, y)
        return self.net.grad_input(params, y)

    def vjp_params(self, params, y, cotangent) -> ParamVector:
        """Parameter gradient of ``sum(cotangent * predict(y))``."""
        if self.mode == "direct":
            return self.net.vjp(params, y, cotangent)[0]
        return self.net.grad_input_vjp(params, y, cotangent)[0]


def amort_predict(model: AmortModel, params: ParamVector, y) -> np.ndarray:
    return model.predict(params, y)


# ---------------------------------------------------------------------------
# identity pretraining


def identity_loss(model, params, x) -> float:
    """Mean squared distance of the model's map from the identity on ``x``."""
    if isinstance(model, AmortModel):
        out = model.predict(params, x)
    else:
        out = model.grad_input(params, x)
    return float(np.mean(np.sum((out - x) ** 2, axis=1)))


def _identity_loss_and_grad(model, params, x):
    B = x.shape[0]
    if isinstance(model, AmortModel):
        out = model.predict(params, x)
        resid = out - x
        grad = model.vjp_params(params, x, 2.0 * resid / B)
    else:
        out = model.grad_input(params, x)
        resid = out - x
        grad = model.grad_input_vjp(params, x, 2.0 * resid / B)[0]
    return float(np.mean(np.sum(resid ** 2, axis=1))), grad.values


def pretrain_identity(model, params: ParamVector, sampler, n_iters=2000, lr=1e-3,
                      batch_size=1024, seed=0, tol=1e-2, betas=(0.9, 0.999)) -> ParamVector:
    """Fit ``grad f ~ id`` (potentials) or ``x(y) ~ y`` (amortizers) with Adam.

    Warns with :class:`PretrainingWarning` if the held-out loss stays above
    ``tol``; raises :class:`NumericalAbort` on a non-finite loss.
    """
    opt = Adam(lr=lr, betas=betas)
    state = opt.init(params.values)
    values = params.values
    for it in range(n_iters):
        x = sampler.sample(batch_size, (seed, it, 7))
        loss, grad = _identity_loss_and_grad(model, params.with_values(values), x)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NumericalAbort(f"identity pretraining diverged at iteration {it} (loss={loss})")
        if loss == 0.0:
            break
        values, state = opt.update(values, grad, state)
    params = params.with_values(values)
    held_out = identity_loss(model, params, sampler.sample(batch_size, (seed, -1, 7)))
    if not np.isfinite(held_out):
        raise NumericalAbort("identity pretraining produced a non-finite held-out loss")
    if held_out > tol:
        warnings.warn(f"identity pretraining reached held-out loss {held_out:.3g} > {tol:g}",
                      PretrainingWarning, stacklevel=2)
    return params
