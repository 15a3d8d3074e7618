"""Batched line searches for the conjugate objective.

All searches work on a batch of independent problems: ``x`` and ``p`` are
``(B, n)`` and every returned quantity is per row.  Candidate step lengths form
the geometric grid ``alpha_init * tau**-m`` for ``m = 0 .. M-1`` so the
backtracking and parallel Armijo searches can be compared on identical grids.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

METHODS = ("backtracking_armijo", "parallel_armijo", "backtracking_wolfe",
           "backtracking_strong_wolfe")


@dataclass(frozen=True)
class LineSearchConfig:
    """Line search parameters.

    ``tau`` is the decay base: candidates are ``alpha_init * tau**-m``.  A value
    below one is read as a multiplicative decay and replaced by its inverse, so
    ``tau=2/3`` and ``tau=1.5`` describe the same grid.
    """

    method: str = "parallel_armijo"
    c1: float = 1e-4
    c2: float = 0.9
    tau: float = 1.5
    M: int = 10
    alpha_init: float = 1.0
    chunk: int = 0   # parallel Armijo: candidates per batched call, 0 = all M

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown line search {self.method!r}")
        if self.tau < 1:
            object.__setattr__(self, "tau", 1.0 / self.tau)
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.tau <= 1:
            raise ValueError("tau must differ from 1")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.chunk < 0:
            raise ValueError("chunk must be >= 0")

    @property
    def decay(self):
        return 1.0 / self.tau

    def candidates(self) -> np.ndarray:
        return self.alpha_init * self.tau ** -np.arange(self.M, dtype=np.float64)


class LineSearchResult(NamedTuple):
    alpha: np.ndarray       # (B,) chosen step lengths
    ok: np.ndarray          # (B,) False when no acceptable step was found
    value: np.ndarray       # (B,) objective at x + alpha p
    n_evals: int            # objective evaluations per row (worst case)
    fallback: np.ndarray    # (B,) Wolfe searches: accepted on Armijo alone


def _rowdot(a, b):
    return np.sum(a * b, axis=-1)


def _prepare(obj, x, p, f0, g0):
    if f0 is None or g0 is None:
        f0, g0 = obj.value_and_grad(x)
    return f0, _rowdot(p, g0)


def armijo_condition(obj, x, p, alpha, c1=1e-4, f0=None, g0=None) -> np.ndarray:
    """``g(alpha) = J(x) + c1 alpha p.grad J(x) - J(x + alpha p)``; accept when ``>= 0``."""
    x = np.atleast_2d(x)
    p = np.atleast_2d(p)
    f0, slope = _prepare(obj, x, p, f0, g0)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), f0.shape)
    return f0 + c1 * alpha * slope - obj.value(x + alpha[:, None] * p)


def wolfe_checks(obj, x, p, alpha, c1=1e-4, c2=0.9, f0=None, g0=None):
    """Return ``(armijo_ok, curvature_ok, strong_ok)`` at step ``alpha``."""
    x = np.atleast_2d(x)
    p = np.atleast_2d(p)
    if f0 is None or g0 is None:
        f0, g0 = obj.value_and_grad(x)
    slope = _rowdot(p, g0)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), f0.shape)
    f1, g1 = obj.value_and_grad(x + alpha[:, None] * p)
    slope1 = _rowdot(p, g1)
    armijo = f1 <= f0 + c1 * alpha * slope
    curvature = -slope1 <= -c2 * slope
    strong = np.abs(slope1) <= c2 * np.abs(slope)
    return armijo, curvature, strong


def parallel_armijo(obj, x, p, cfg: LineSearchConfig, f0=None, g0=None) -> LineSearchResult:
    """Evaluate the candidates in batched calls; keep the largest acceptable one.

    With ``cfg.chunk`` set, candidates are evaluated ``chunk`` at a time from the
    largest down and rows leave once one is accepted.  The chosen step is the
    same as with a single call over the whole grid.
    """
    f0, slope = _prepare(obj, x, p, f0, g0)
    alphas = cfg.candidates()
    B = x.shape[0]
    step = cfg.chunk or cfg.M
    alpha = np.full(B, alphas[-1])
    value = np.full(B, np.nan)
    ok = np.zeros(B, dtype=bool)
    searching = np.arange(B)
    n_evals = 0
    for start in range(0, cfg.M, step):
        if searching.size == 0:
            break
        block = alphas[start:start + step]
        n_evals += block.size
        obj_s = obj if searching.size == B else obj.subset(searching)
        pts = x[searching, None, :] + block[None, :, None] * p[searching, None, :]
        vals = obj_s.value(pts)
        g = f0[searching, None] + cfg.c1 * block[None, :] * slope[searching, None] - vals
        accept = g >= 0
        hit = accept.any(axis=1)
        first = np.argmax(accept, axis=1)
        rows = np.arange(searching.size)
        done = searching[hit]
        alpha[done] = block[first[hit]]
        value[done] = vals[rows[hit], first[hit]]
        ok[done] = True
        if start + step >= cfg.M:
            value[searching[~hit]] = vals[~hit, -1]
        searching = searching[~hit]
    return LineSearchResult(alpha, ok, value, n_evals, np.zeros(B, dtype=bool))


def backtracking_armijo(obj, x, p, cfg: LineSearchConfig, f0=None, g0=None) -> LineSearchResult:
    """Try candidates from largest to smallest, one evaluation per still-searching row."""
    f0, slope = _prepare(obj, x, p, f0, g0)
    alphas = cfg.candidates()
    B = x.shape[0]
    alpha = np.full(B, alphas[-1])
    value = np.full(B, np.nan)
    ok = np.zeros(B, dtype=bool)
    searching = np.arange(B)
    n_evals = 0
    for a in alphas:
        if searching.size == 0:
            break
        n_evals += 1
        sub = obj.subset(searching)
        vals = sub.value(x[searching] + a * p[searching])
        g = f0[searching] + cfg.c1 * a * slope[searching] - vals
        hit = g >= 0
        done = searching[hit]
        alpha[done] = a
        value[done] = vals[hit]
        ok[done] = True
        if a == alphas[-1]:
            value[searching[~hit]] = vals[~hit]
        searching = searching[~hit]
    return LineSearchResult(alpha, ok, value, n_evals, np.zeros(B, dtype=bool))


def _backtracking_wolfe(obj, x, p, cfg, f0, g0, strong):
    if f0 is None or g0 is None:
        f0, g0 = obj.value_and_grad(x)
    slope = _rowdot(p, g0)
    alphas = cfg.candidates()
    B = x.shape[0]
    alpha = np.full(B, alphas[-1])
    value = np.full(B, np.nan)
    ok = np.zeros(B, dtype=bool)
    armijo_alpha = np.full(B, np.nan)
    armijo_value = np.full(B, np.nan)
    searching = np.arange(B)
    n_evals = 0
    for a in alphas:
        if searching.size == 0:
            break
        n_evals += 1
        sub = obj.subset(searching)
        vals, grads = sub.value_and_grad(x[searching] + a * p[searching])
        s0 = slope[searching]
        s1 = _rowdot(p[searching], grads)
        armijo = vals <= f0[searching] + cfg.c1 * a * s0
        if strong:
            curv = np.abs(s1) <= cfg.c2 * np.abs(s0)
        else:
            curv = -s1 <= -cfg.c2 * s0
        first_armijo = armijo & np.isnan(armijo_alpha[searching])
        armijo_alpha[searching[first_armijo]] = a
        armijo_value[searching[first_armijo]] = vals[first_armijo]
        hit = armijo & curv
        done = searching[hit]
        alpha[done] = a
        value[done] = vals[hit]
        ok[done] = True
        searching = searching[~hit]
    # exhausted rows fall back to the largest Armijo-acceptable candidate
    fallback = np.zeros(B, dtype=bool)
    if searching.size:
        has = ~np.isnan(armijo_alpha[searching])
        rows = searching[has]
        alpha[rows] = armijo_alpha[rows]
        value[rows] = armijo_value[rows]
        ok[rows] = True
        fallback[rows] = True
    return LineSearchResult(alpha, ok, value, n_evals, fallback)


def backtracking_wolfe(obj, x, p, cfg: LineSearchConfig, f0=None, g0=None) -> LineSearchResult:
    return _backtracking_wolfe(obj, x, p, cfg, f0, g0, strong=False)


def backtracking_strong_wolfe(obj, x, p, cfg: LineSearchConfig, f0=None, g0=None) -> LineSearchResult:
    return _backtracking_wolfe(obj, x, p, cfg, f0, g0, strong=True)


def line_search(obj, x, p, cfg: LineSearchConfig, f0=None, g0=None) -> LineSearchResult:
    fn = {
        "backtracking_armijo": backtracking_armijo,
        "parallel_armijo": parallel_armijo,
        "backtracking_wolfe": backtracking_wolfe,
        "backtracking_strong_wolfe": backtracking_strong_wolfe,
    }[cfg.method]
    return fn(obj, x, p, cfg, f0, g0)
