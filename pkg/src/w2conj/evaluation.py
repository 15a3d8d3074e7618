"""Transport-map metrics, a brute-force conjugation oracle, and figure exports."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class DegenerateMeasureError(ValueError):
    pass


@dataclass
class UvpReport:
    uvp_percent: float
    n_samples: int
    variance_beta: float
    std_error: float = float("nan")


def total_variance(y) -> float:
    """``E|y - E y|^2`` estimated from samples."""
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.sum((y - y.mean(axis=0)) ** 2, axis=1)))


def l2_uvp(T: Callable, T_star: Callable, alpha, beta, n=16384, seed=0) -> UvpReport:
    """``100 * E_alpha |T(x) - T*(x)|^2 / Var(beta)`` by Monte Carlo.

    ``Var(beta)`` is the total variance estimated from ``n`` fresh beta samples.
    """
    x = alpha.sample(n, (seed, 0, 11))
    y = beta.sample(n, (seed, 1, 11))
    var = total_variance(y)
    if var < 1e-12:
        raise DegenerateMeasureError("target measure has (numerically) zero variance")
    sq = np.sum((np.asarray(T(x)) - np.asarray(T_star(x))) ** 2, axis=1)
    num = float(np.mean(sq))
    uvp = 100.0 * num / var
    se = float("nan")
    if n > 1:
        # delta method; numerator and denominator come from independent samples
        dev = np.sum((y - y.mean(axis=0)) ** 2, axis=1)
        se_num = np.std(sq, ddof=1) / np.sqrt(n)
        se_den = np.std(dev, ddof=1) / np.sqrt(n)
        se = 100.0 / var * float(np.hypot(se_num, num / var * se_den))
    return UvpReport(uvp, n, var, se)


# ---------------------------------------------------------------------------
# brute-force oracle and landscapes


def _grid(bounds, resolution):
    bounds = np.asarray(bounds, dtype=np.float64).reshape(-1, 2)
    axes = [np.linspace(lo, hi, resolution) for lo, hi in bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    return axes, np.stack([m.ravel() for m in mesh], axis=1)


def grid_conjugate_oracle(f: Callable, y, bounds=((-5, 5), (-5, 5)), resolution=401,
                          chunk=32768):
    """Exhaustive minimum of ``J(x; y) = f(x) - <x, y>`` over a regular grid.

    ``f`` maps an ``(N, d)`` array to ``(N,)`` values; ``d`` is 1 or 2.
    Returns ``(x_min, J_min)``.  A ``(k, d)`` batch of queries shares one
    pass over the grid and returns ``(k, d)`` and ``(k,)`` arrays.
    """
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim <= 1
    Y = y.reshape(1, -1) if single else y
    if resolution < 101:
        raise ValueError("resolution must be at least 101 per axis")
    d = Y.shape[1]
    if d not in (1, 2):
        raise ValueError("the grid oracle handles 1-d and 2-d problems")
    _, pts = _grid(np.broadcast_to(np.asarray(bounds, dtype=np.float64).reshape(-1, 2),
                                   (d, 2)), resolution)
    best_j = np.full(Y.shape[0], np.inf)
    best_x = np.zeros_like(Y)
    for start in range(0, pts.shape[0], chunk):
        block = pts[start:start + chunk]
        J = f(block)[:, None] - block @ Y.T
        i = np.argmin(J, axis=0)
        j = J[i, np.arange(Y.shape[0])]
        better = j < best_j
        best_j[better] = j[better]
        best_x[better] = block[i[better]]
    if single:
        return best_x[0], float(best_j[0])
    return best_x, best_j


@dataclass
class LandscapeGrid:
    y: np.ndarray
    axes: list
    J: np.ndarray          # (res, res), indexed [i, j] -> (axes[0][i], axes[1][j])
    mask: np.ndarray       # True where J(x; y) > J(y; y) (not displayed)
    J_at_y: float
    x_solver: np.ndarray = None


def landscape_export(f: Callable, y, bounds=((-5, 5), (-5, 5)), resolution=201,
                     x_solver=None) -> LandscapeGrid:
    """Grid of ``J(x; y)`` with the cells above ``J(y; y)`` masked."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size != 2:
        raise ValueError("landscapes are two-dimensional")
    axes, pts = _grid(bounds, resolution)
    J = (f(pts) - pts @ y).reshape(resolution, resolution)
    J_y = float(f(y[None])[0] - y @ y)
    return LandscapeGrid(y, axes, J, J > J_y, J_y,
                         None if x_solver is None else np.asarray(x_solver, dtype=np.float64))


# ---------------------------------------------------------------------------
# point-set exports


def pushforward_export(T: Callable, sampler, n=2048, seed=0):
    """Return ``(source, pushed)`` samples for plotting ``T_# sampler``."""
    source = sampler.sample(n, (seed, 2, 13))
    return source, np.asarray(T(source), dtype=np.float64)


def interpolation_export(T: Callable, sampler, t_values: Sequence[float], n=2048, seed=0):
    """Point sets ``(1 - t) x + t T(x)`` for each ``t``; shares one source sample."""
    t_values = [float(t) for t in t_values]
    if any(t < 0 or t > 1 for t in t_values):
        raise ValueError("t values must lie in [0, 1]")
    source, pushed = pushforward_export(T, sampler, n, seed)
    frames = []
    for t in t_values:
        if t == 0.0:
            frames.append(source.copy())
        elif t == 1.0:
            frames.append(pushed.copy())
        else:
            frames.append((1.0 - t) * source + t * pushed)
    return frames


def write_points_csv(path, point_sets, t_values=None):
    """CSV with columns ``set_id, t, x1..xn``."""
    point_sets = [np.asarray(p) for p in point_sets]
    dim = point_sets[0].shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["set_id", "t"] + [f"x{i + 1}" for i in range(dim)])
        for k, pts in enumerate(point_sets):
            t = "" if t_values is None else repr(float(t_values[k]))
            for row in pts:
                w.writerow([k, t] + [repr(float(v)) for v in row])


def write_landscape_csv(path, grid: LandscapeGrid):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "J", "masked"])
        for i, a in enumerate(grid.axes[0]):
            for j, b in enumerate(grid.axes[1]):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(grid.J[i, j])),
                            int(grid.mask[i, j])])
