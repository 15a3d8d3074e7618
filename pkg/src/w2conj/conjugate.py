"""Batched numerical conjugation: ``x(y) = argmin_x f(x) - <x, y>``.

Every row of ``Y`` is an independent problem.  Rows stop on their own (the
active mask shrinks as rows converge, fail, or find no acceptable step), so a
row's trajectory does not depend on the other rows in the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .linesearch import LineSearchConfig, line_search
from .optim import cosine_between

CURVATURE_GUARD = 1e-10


class ConjugateObjective:
    """``J(x; y) = f(x) - <x, y>`` for a batch of targets ``Y``.

    ``value`` accepts ``(B, n)`` or ``(B, M, n)`` points (the latter for
    evaluating several candidates per row in one call).
    """

    def __init__(self, potential, params, Y):
        self.potential = potential
        self.params = params
        self.Y = np.asarray(Y, dtype=np.float64)
        self.n_evals = 0

    def subset(self, idx) -> "ConjugateObjective":
        return ConjugateObjective(self.potential, self.params, self.Y[idx])

    def value(self, X):
        X = np.asarray(X, dtype=np.float64)
        self.n_evals += 1
        if X.ndim == 3:
            B, M, n = X.shape
            f = self.potential(self.params, X.reshape(B * M, n)).reshape(B, M)
            return f - np.sum(X * self.Y[:, None, :], axis=-1)
        return self.potential(self.params, X) - np.sum(X * self.Y, axis=-1)

    def value_and_grad(self, X):
        X = np.asarray(X, dtype=np.float64)
        self.n_evals += 1
        f, g = self.potential.value_and_grad_input(self.params, X)
        return f - np.sum(X * self.Y, axis=-1), g - self.Y

    def grad(self, X):
        return self.value_and_grad(X)[1]


@dataclass(frozen=True)
class SolverConfig:
    """Conjugate solver settings.

    ``stop_rule='change'`` stops a row once every coordinate moved less than
    ``tol`` in one iteration; ``stop_rule='grad'`` stops once
    ``|grad J|_inf <= gtol``.
    """

    solver: str = "lbfgs"
    linesearch: LineSearchConfig = field(default_factory=LineSearchConfig)
    tol: float = 0.1
    max_iter: int = 100
    memory: int = 10
    stop_rule: str = "change"
    gtol: float = 0.1
    adam_lr: float = 0.1
    adam_lr_final: float = 1e-5
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.solver not in ("none", "lbfgs", "adam"):
            raise ValueError(f"unknown conjugate solver {self.solver!r}")
        if self.stop_rule not in ("change", "grad"):
            raise ValueError(f"unknown stop rule {self.stop_rule!r}")
        if self.max_iter < 1 or self.memory < 1:
            raise ValueError("max_iter and memory must be positive")


def benchmark_mode(**overrides) -> SolverConfig:
    """Settings for the n-dimensional tasks: tol 0.1, tau 1.5, 10 candidates."""
    cfg = SolverConfig(linesearch=LineSearchConfig("parallel_armijo", tau=1.5, M=10), tol=0.1)
    return replace(cfg, **overrides)


def synthetic_mode(**overrides) -> SolverConfig:
    """Higher-precision settings for 2-d demonstrations: tol 1e-3, tau 1.5, 30 candidates."""
    cfg = SolverConfig(linesearch=LineSearchConfig("parallel_armijo", tau=1.5, M=30), tol=1e-3)
    return replace(cfg, **overrides)


@dataclass
class ConjugateResult:
    x_star: np.ndarray
    J_values: np.ndarray
    grad_inf_norms: np.ndarray
    iters: np.ndarray
    converged: np.ndarray
    failed: np.ndarray
    trace: Optional[np.ndarray] = None   # (n_iters + 1, B) objective values when requested

    @property
    def conjugate_values(self):
        """``f*(y) = -J(x(y); y)``."""
        return -self.J_values


# ---------------------------------------------------------------------------
# L-BFGS memory


@dataclass
class LbfgsState:
    """Per-row L-BFGS memory; slot 0 holds the newest pair, unused slots are zero."""

    x: np.ndarray
    g: np.ndarray
    S: np.ndarray
    Yd: np.ndarray
    rho: np.ndarray

    @classmethod
    def empty(cls, x, g, memory=10):
        B, n = x.shape
        return cls(x.copy(), g.copy(), np.zeros((B, memory, n)), np.zeros((B, memory, n)),
                   np.zeros((B, memory)))

    @property
    def n_pairs(self):
        return np.sum(self.rho > 0, axis=1)

    def rows(self, idx) -> "LbfgsState":
        return LbfgsState(self.x[idx], self.g[idx], self.S[idx], self.Yd[idx], self.rho[idx])

    def set_rows(self, idx, other: "LbfgsState"):
        self.x[idx] = other.x
        self.g[idx] = other.g
        self.S[idx] = other.S
        self.Yd[idx] = other.Yd
        self.rho[idx] = other.rho


def lbfgs_direction(state: LbfgsState) -> np.ndarray:
    """Two-loop recursion ``p = -H g``; the initial scaling uses the newest pair."""
    q = state.g.copy()
    # slots fill from 0 upward; empty slots (rho = 0) contribute nothing
    m = int(np.max(np.sum(state.rho > 0, axis=1), initial=0))
    a = np.zeros_like(state.rho)
    for i in range(m):
        a[:, i] = state.rho[:, i] * np.sum(state.S[:, i] * q, axis=-1)
        q -= a[:, i, None] * state.Yd[:, i]
    yy = np.sum(state.Yd[:, 0] * state.Yd[:, 0], axis=-1)
    sy = np.sum(state.S[:, 0] * state.Yd[:, 0], axis=-1)
    has = state.rho[:, 0] > 0
    gamma = np.where(has, sy / np.where(has, yy, 1.0), 1.0)
    r = gamma[:, None] * q
    for i in reversed(range(m)):
        b = state.rho[:, i] * np.sum(state.Yd[:, i] * r, axis=-1)
        r += state.S[:, i] * (a[:, i] - b)[:, None]
    return -r


def lbfgs_update(state: LbfgsState, x_new, g_new) -> LbfgsState:
    """Move to ``x_new`` and store ``(s, y)`` for rows where ``s.y > 1e-10``."""
    s = x_new - state.x
    y = g_new - state.g
    sy = np.sum(s * y, axis=-1)
    accept = sy > CURVATURE_GUARD
    S, Yd, rho = state.S.copy(), state.Yd.copy(), state.rho.copy()
    if accept.any():
        S[accept] = np.roll(S[accept], 1, axis=1)
        Yd[accept] = np.roll(Yd[accept], 1, axis=1)
        rho[accept] = np.roll(rho[accept], 1, axis=1)
        S[accept, 0] = s[accept]
        Yd[accept, 0] = y[accept]
        rho[accept, 0] = 1.0 / sy[accept]
    return LbfgsState(np.array(x_new, dtype=np.float64), np.array(g_new, dtype=np.float64),
                      S, Yd, rho)


# ---------------------------------------------------------------------------
# solvers


def _finish(X, J, G, iters, converged, failed, trace):
    return ConjugateResult(X, J, np.max(np.abs(G), axis=-1), iters, converged, failed, trace)


def conjugate(potential, params, Y, X_init=None, cfg: SolverConfig = None,
              trace=False) -> ConjugateResult:
    """Solve the batch of conjugate problems starting from ``X_init``.

    ``cfg.solver`` selects L-BFGS, Adam, or ``'none'`` (return ``X_init``
    unchanged with its objective values).
    """
    cfg = cfg or benchmark_mode()
    Y = np.asarray(Y, dtype=np.float64)
    X = np.array(Y if X_init is None else X_init, dtype=np.float64)
    if X.shape != Y.shape:
        raise ValueError("X_init and Y must have the same shape")
    if cfg.solver == "adam":
        return adam_minimize(potential, params, Y, X, cfg, trace=trace)
    obj = ConjugateObjective(potential, params, Y)
    J, G = obj.value_and_grad(X)
    B = X.shape[0]
    iters = np.zeros(B, dtype=int)
    failed = ~(np.isfinite(J) & np.all(np.isfinite(G), axis=1))
    converged = np.zeros(B, dtype=bool)
    if cfg.stop_rule == "grad":
        converged = ~failed & (np.max(np.abs(G), axis=1) <= cfg.gtol)
    history = [J.copy()] if trace else None
    if cfg.solver == "none":
        return _finish(X, J, G, iters, converged, failed, np.array(history) if trace else None)

    state = LbfgsState.empty(X, G, cfg.memory)
    active = ~(failed | converged)
    for _ in range(cfg.max_iter):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        sub_state = state.rows(rows)
        p = lbfgs_direction(sub_state)
        slope = np.sum(p * sub_state.g, axis=-1)
        bad = ~(slope < 0)
        if bad.any():
            p[bad] = -sub_state.g[bad]
        sub = obj.subset(rows)
        ls = line_search(sub, sub_state.x, p, cfg.linesearch, J[rows], sub_state.g)

        stuck = rows[~ls.ok]
        active[stuck] = False

        keep = ls.ok
        rows_ok = rows[keep]
        if rows_ok.size == 0:
            continue
        x_old = sub_state.x[keep]
        x_new = x_old + ls.alpha[keep, None] * p[keep]
        J_new, G_new = sub.subset(np.flatnonzero(keep)).value_and_grad(x_new)
        bad = ~(np.isfinite(J_new) & np.all(np.isfinite(G_new), axis=1))
        if bad.any():
            failed[rows_ok[bad]] = True
            active[rows_ok[bad]] = False
            keep_idx = ~bad
            rows_ok, x_old, x_new = rows_ok[keep_idx], x_old[keep_idx], x_new[keep_idx]
            J_new, G_new = J_new[keep_idx], G_new[keep_idx]
            kept_state = sub_state.rows(np.flatnonzero(keep)[keep_idx])
        else:
            kept_state = sub_state.rows(np.flatnonzero(keep))
        state.set_rows(rows_ok, lbfgs_update(kept_state, x_new, G_new))
        X[rows_ok] = x_new
        J[rows_ok] = J_new
        G[rows_ok] = G_new
        iters[rows_ok] += 1
        if cfg.stop_rule == "change":
            done = np.max(np.abs(x_new - x_old), axis=1) < cfg.tol
        else:
            done = np.max(np.abs(G_new), axis=1) <= cfg.gtol
        converged[rows_ok[done]] = True
        active[rows_ok[done]] = False
        if trace:
            history.append(J.copy())
    return _finish(X, J, G, iters, converged, failed, np.array(history) if trace else None)


def adam_minimize(potential, params, Y, X_init, cfg: SolverConfig = None,
                  trace=False) -> ConjugateResult:
    """Per-row Adam on ``x`` with a cosine learning rate ``adam_lr -> adam_lr_final``."""
    cfg = cfg or benchmark_mode(solver="adam")
    Y = np.asarray(Y, dtype=np.float64)
    X = np.array(X_init, dtype=np.float64)
    obj = ConjugateObjective(potential, params, Y)
    J, G = obj.value_and_grad(X)
    B = X.shape[0]
    b1, b2 = cfg.adam_betas
    m = np.zeros_like(X)
    v = np.zeros_like(X)
    iters = np.zeros(B, dtype=int)
    failed = ~(np.isfinite(J) & np.all(np.isfinite(G), axis=1))
    converged = np.zeros(B, dtype=bool)
    if cfg.stop_rule == "grad":
        converged = ~failed & (np.max(np.abs(G), axis=1) <= cfg.gtol)
    active = ~(failed | converged)
    history = [J.copy()] if trace else None
    for k in range(cfg.max_iter):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        lr = cosine_between(k, cfg.max_iter, cfg.adam_lr, cfg.adam_lr_final)
        g = G[rows]
        m[rows] = b1 * m[rows] + (1 - b1) * g
        v[rows] = b2 * v[rows] + (1 - b2) * g * g
        t = iters[rows] + 1
        m_hat = m[rows] / (1 - b1 ** t)[:, None]
        v_hat = v[rows] / (1 - b2 ** t)[:, None]
        x_old = X[rows]
        x_new = x_old - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        J_new, G_new = obj.subset(rows).value_and_grad(x_new)
        bad = ~(np.isfinite(J_new) & np.all(np.isfinite(G_new), axis=1))
        failed[rows[bad]] = True
        active[rows[bad]] = False
        good = ~bad
        rows, x_old, x_new = rows[good], x_old[good], x_new[good]
        X[rows] = x_new
        J[rows] = J_new[good]
        G[rows] = G_new[good]
        iters[rows] += 1
        if cfg.stop_rule == "change":
            done = np.max(np.abs(x_new - x_old), axis=1) < cfg.tol
        else:
            done = np.max(np.abs(G_new[good]), axis=1) <= cfg.gtol
        converged[rows[done]] = True
        active[rows[done]] = False
        if trace:
            history.append(J.copy())
    return _finish(X, J, G, iters, converged, failed, np.array(history) if trace else None)
