"""Losses for training the conjugate amortization model.

Each loss returns its value and the gradient with respect to the amortizer
parameters.  The potential is held fixed: its parameter gradient is zero
unless ``connect_potential`` is requested for the cycle loss.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .diffcore import ParamVector
from .potentials import AmortModel

LOSSES = ("objective", "cycle", "regression")


@dataclass
class AmortLoss:
    value: float
    grad_phi: ParamVector
    grad_theta: Optional[ParamVector]
    prediction: np.ndarray


def _zeros(params):
    return params.zeros_like() if params is not None and hasattr(params, "zeros_like") else None


def loss_objective(f, theta, amort: AmortModel, phi, Y, X_pred=None) -> AmortLoss:
    """Mean conjugate objective ``J(x(y); y)`` at the amortized predictions."""
    B = Y.shape[0]
    X = amort.predict(phi, Y) if X_pred is None else X_pred
    fx, gx = f.value_and_grad_input(theta, X)
    value = float(np.mean(fx - np.sum(X * Y, axis=1)))
    grad_phi = amort.vjp_params(phi, Y, (gx - Y) / B)
    return AmortLoss(value, grad_phi, _zeros(theta), X)


def loss_cycle(f, theta, amort: AmortModel, phi, Y, X_pred=None,
               connect_potential=False) -> AmortLoss:
    """Mean squared first-order residual ``|grad f(x(y)) - y|^2``.

    With ``connect_potential`` the potential also receives the gradient of
    this loss (the coupled variant); by default it is detached.
    """
    B = Y.shape[0]
    X = amort.predict(phi, Y) if X_pred is None else X_pred
    resid = f.grad_input(theta, X) - Y
    value = float(np.mean(np.sum(resid ** 2, axis=1)))
    cot = 2.0 * f.hvp(theta, X, resid) / B
    grad_phi = amort.vjp_params(phi, Y, cot)
    if connect_potential:
        grad_theta = f.grad_input_vjp(theta, X, 2.0 * resid / B)[0]
    else:
        grad_theta = _zeros(theta)
    return AmortLoss(value, grad_phi, grad_theta, X)


def loss_regression(amort: AmortModel, phi, X_star, Y, X_pred=None, theta=None) -> AmortLoss:
    """Mean squared distance from the (detached) solver solutions."""
    B = Y.shape[0]
    X = amort.predict(phi, Y) if X_pred is None else X_pred
    diff = X - np.asarray(X_star)
    value = float(np.mean(np.sum(diff ** 2, axis=1)))
    grad_phi = amort.vjp_params(phi, Y, 2.0 * diff / B)
    return AmortLoss(value, grad_phi, _zeros(theta), X)


def amortization_loss(kind, f, theta, amort, phi, Y, X_star=None, X_pred=None,
                      connect_potential=False) -> AmortLoss:
    if kind == "objective":
        return loss_objective(f, theta, amort, phi, Y, X_pred)
    if kind == "cycle":
        return loss_cycle(f, theta, amort, phi, Y, X_pred, connect_potential)
    if kind == "regression":
        if X_star is None:
            raise ValueError("regression amortization needs solver solutions")
        return loss_regression(amort, phi, X_star, Y, X_pred, theta)
    raise ValueError(f"unknown amortization loss {kind!r}")


def maximin_objective(f, theta, amort: AmortModel, phi, X, Y):
    """``-E f(x) + E J(x_phi(y); y)`` with gradients for both players.

    Returns ``(value, grad_theta, grad_phi)``.
    """
    B_a, B_b = X.shape[0], Y.shape[0]
    X_pred = amort.predict(phi, Y)
    f_x = f(theta, X)
    f_p, g_p = f.value_and_grad_input(theta, X_pred)
    value = float(-np.mean(f_x) + np.mean(f_p - np.sum(X_pred * Y, axis=1)))
    grad_theta = f.grad_params(theta, X_pred, np.full(B_b, 1.0 / B_b))
    grad_theta = grad_theta.with_values(
        grad_theta.values - f.grad_params(theta, X, np.full(B_a, 1.0 / B_a)).values)
    # the -E f(x) term does not involve phi
    grad_phi = amort.vjp_params(phi, Y, (g_p - Y) / B_b)
    return value, grad_theta, grad_phi
