"""Seeded samplers, Gaussian pairs with closed-form transport maps, and a task registry."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class ConfigurationError(ValueError):
    """Raised for unknown distribution families or invalid measure parameters."""


def rng_for(seed) -> np.random.Generator:
    """Generator keyed by an int or a tuple of ints (e.g. ``(seed, step, stream)``).

    Negative entries are allowed; they are folded into the unsigned range.
    """
    if isinstance(seed, (tuple, list)):
        entropy = [int(s) % (2 ** 63) for s in seed]
    else:
        entropy = int(seed) % (2 ** 63)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


# ---------------------------------------------------------------------------
# samplers


def _point_mass(rng, n, dim, p):
    point = np.asarray(p.get("point", np.zeros(dim)), dtype=np.float64)
    return np.tile(point, (n, 1))


def _gaussian(rng, n, dim, p):
    mean = np.asarray(p.get("mean", np.zeros(dim)), dtype=np.float64)
    cov = p.get("cov")
    z = rng.standard_normal((n, dim))
    if cov is None:
        return z + mean
    L = np.linalg.cholesky(np.asarray(cov, dtype=np.float64))
    return z @ L.T + mean


def _mixture(rng, n, dim, p):
    centers = np.asarray(p["centers"], dtype=np.float64)
    idx = rng.integers(0, len(centers), size=n)
    return centers[idx] + p.get("std", 0.1) * rng.standard_normal((n, dim))


def _ring(rng, n, dim, p):
    k = int(p.get("n_components", 8))
    radius = p.get("radius", 4.0)
    theta = 2 * np.pi * np.arange(k) / k
    centers = radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return _mixture(rng, n, dim, {"centers": centers, "std": p.get("std", 0.1)})


def _checkerboard(rng, n, dim, p):
    half = p.get("half_width", 2.0)
    x1 = rng.uniform(-half, half, size=n)
    x2 = rng.uniform(0.0, 1.0, size=n) + rng.integers(0, int(half), size=n) * 2.0 - half
    # shift x2 into the cells of opposite parity to x1
    x2 = x2 + (np.floor(x1) % 2)
    return np.stack([x1, x2], axis=1) * p.get("scale", 1.0)


def _moons(rng, n, dim, p):
    n_out = n // 2
    n_in = n - n_out
    t_out = rng.uniform(0, np.pi, size=n_out)
    t_in = rng.uniform(0, np.pi, size=n_in)
    outer = np.stack([np.cos(t_out), np.sin(t_out)], axis=1)
    inner = np.stack([1 - np.cos(t_in), 0.5 - np.sin(t_in)], axis=1)
    pts = np.concatenate([outer, inner])[rng.permutation(n)]
    pts = pts + p.get("noise", 0.05) * rng.standard_normal((n, 2))
    return (pts - np.array([0.5, 0.25])) * p.get("scale", 2.0)


def _circles(rng, n, dim, p):
    radii = np.asarray(p.get("radii", (1.0, 2.0)), dtype=np.float64)
    r = radii[rng.integers(0, len(radii), size=n)]
    t = rng.uniform(0, 2 * np.pi, size=n)
    pts = r[:, None] * np.stack([np.cos(t), np.sin(t)], axis=1)
    return pts + p.get("noise", 0.03) * rng.standard_normal((n, 2))


def _scurve(rng, n, dim, p):
    t = 3 * np.pi * (rng.uniform(size=n) - 0.5)
    pts = np.stack([np.sin(t), np.sign(t) * (np.cos(t) - 1)], axis=1)
    pts = pts + p.get("noise", 0.05) * rng.standard_normal((n, 2))
    return pts * p.get("scale", 1.5)


_FAMILIES: dict = {
    "point_mass": _point_mass,
    "gaussian": _gaussian,
    "standard_normal": _gaussian,
    "mixture": _mixture,
    "ring": _ring,
    "checkerboard": _checkerboard,
    "moons": _moons,
    "circles": _circles,
    "scurve": _scurve,
}
_TWO_D_ONLY = {"ring", "checkerboard", "moons", "circles", "scurve"}


@dataclass(frozen=True, eq=False)
class Sampler:
    """An immutable description of a distribution; sampling is a pure function."""

    kind: str
    dim: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _FAMILIES:
            raise ConfigurationError(f"unknown distribution family {self.kind!r}")
        if self.dim < 1:
            raise ConfigurationError("dim must be positive")
        if self.kind in _TWO_D_ONLY and self.dim != 2:
            raise ConfigurationError(f"{self.kind!r} is a two-dimensional family")

    def sample(self, n_batch: int, seed=0) -> np.ndarray:
        if n_batch < 1:
            raise ValueError("n_batch must be >= 1")
        rng = rng_for(seed)
        out = _FAMILIES[self.kind](rng, int(n_batch), self.dim, self.params)
        return np.ascontiguousarray(out, dtype=np.float64)


def sample(s: Sampler, n_batch: int, seed=0) -> np.ndarray:
    return s.sample(n_batch, seed)


# ---------------------------------------------------------------------------
# Gaussian pairs


def _check_spd(cov, name):
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
        raise ConfigurationError(f"{name} must be a symmetric matrix")
    if np.linalg.eigvalsh(cov).min() <= 0:
        raise ConfigurationError(f"{name} must be positive definite")
    return 0.5 * (cov + cov.T)


def sym_sqrt(a):
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def sym_inv_sqrt(a):
    w, v = np.linalg.eigh(a)
    return (v / np.sqrt(w)) @ v.T


@dataclass(frozen=True, eq=False)
class GaussianPair:
    mean_a: np.ndarray
    cov_a: np.ndarray
    mean_b: np.ndarray
    cov_b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cov_a", _check_spd(self.cov_a, "cov_a"))
        object.__setattr__(self, "cov_b", _check_spd(self.cov_b, "cov_b"))
        object.__setattr__(self, "mean_a", np.asarray(self.mean_a, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "mean_b", np.asarray(self.mean_b, dtype=np.float64).reshape(-1))
        n = self.cov_a.shape[0]
        if self.cov_b.shape != (n, n) or self.mean_a.shape != (n,) or self.mean_b.shape != (n,):
            raise ConfigurationError("Gaussian pair dimensions disagree")

    @property
    def dim(self):
        return self.cov_a.shape[0]

    @property
    def alpha(self) -> Sampler:
        return Sampler("gaussian", self.dim, {"mean": self.mean_a, "cov": self.cov_a})

    @property
    def beta(self) -> Sampler:
        return Sampler("gaussian", self.dim, {"mean": self.mean_b, "cov": self.cov_b})


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``x -> shift + linear @ (x - center)`` applied row-wise."""

    linear: np.ndarray
    center: np.ndarray
    shift: np.ndarray

    def __call__(self, x):
        return self.shift + (np.asarray(x) - self.center) @ self.linear.T


def bures_matrix(cov_a, cov_b):
    """Symmetric PD ``M`` with ``M cov_a M = cov_b``."""
    ra = sym_sqrt(cov_a)
    ra_inv = sym_inv_sqrt(cov_a)
    m = ra_inv @ sym_sqrt(ra @ cov_b @ ra) @ ra_inv
    return 0.5 * (m + m.T)


def gaussian_ground_truth_map(p: GaussianPair) -> AffineMap:
    return AffineMap(bures_matrix(p.cov_a, p.cov_b), p.mean_a, p.mean_b)


def random_spd(rng, dim, cond=10.0, scale=1.0):
    """Random SPD matrix with eigenvalues log-uniform in ``[scale/cond, scale]``."""
    rng = np.random.default_rng(rng)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eig = scale * np.exp(rng.uniform(-np.log(cond), 0.0, size=dim))
    eig[0], eig[-1] = scale, scale / cond
    a = (q * eig) @ q.T
    return 0.5 * (a + a.T)


def random_gaussian_pair(seed, dim, cond=10.0, mean_scale=1.0) -> GaussianPair:
    rng = rng_for(seed)
    return GaussianPair(
        mean_a=mean_scale * rng.uniform(-1, 1, size=dim),
        cov_a=random_spd(rng, dim, cond, scale=2.0),
        mean_b=mean_scale * rng.uniform(-1, 1, size=dim),
        cov_b=random_spd(rng, dim, cond, scale=2.0),
    )


# ---------------------------------------------------------------------------
# tasks


@dataclass(frozen=True, eq=False)
class TaskSpec:
    name: str
    alpha: Sampler
    beta: Sampler
    ground_truth: Optional[Callable] = None

    def __post_init__(self):
        if self.alpha.dim != self.beta.dim:
            raise ConfigurationError("alpha and beta dimensions differ")

    @property
    def dim(self):
        return self.alpha.dim

    def swapped(self) -> "TaskSpec":
        """The reverse task (beta -> alpha); ground truth is dropped unless affine."""
        gt = None
        if isinstance(self.ground_truth, AffineMap):
            inv = np.linalg.inv(self.ground_truth.linear)
            gt = AffineMap(0.5 * (inv + inv.T), self.ground_truth.shift, self.ground_truth.center)
        return TaskSpec(self.name + "_reversed", self.beta, self.alpha, gt)


def gaussian_task(name, pair: GaussianPair) -> TaskSpec:
    return TaskSpec(name, pair.alpha, pair.beta, gaussian_ground_truth_map(pair))


def _standard_normal(dim=2):
    return Sampler("standard_normal", dim)


def synthetic_task_registry() -> list:
    return [
        TaskSpec("gauss_to_ring8", _standard_normal(), Sampler("ring", 2, {"radius": 4.0, "std": 0.1})),
        TaskSpec("checkerboard", _standard_normal(), Sampler("checkerboard", 2, {"half_width": 2.0})),
        TaskSpec("moons", _standard_normal(), Sampler("moons", 2, {"noise": 0.05})),
        TaskSpec("circles", _standard_normal(), Sampler("circles", 2, {"radii": (1.0, 2.0), "noise": 0.03})),
        TaskSpec("scurve", _standard_normal(), Sampler("scurve", 2, {"noise": 0.05})),
        gaussian_task("gauss_to_gauss_2d", random_gaussian_pair(2022, 2, cond=10.0)),
        gaussian_task("gauss_to_gauss_8d", random_gaussian_pair(2023, 8, cond=10.0)),
        gaussian_task("gauss_to_gauss_16d", random_gaussian_pair(2024, 16, cond=10.0)),
    ]


def get_task(name: str) -> TaskSpec:
    for task in synthetic_task_registry():
        if task.name == name:
            return task
    known = ", ".join(t.name for t in synthetic_task_registry())
    raise ConfigurationError(f"unknown task {name!r} (known: {known})")


def task_names() -> list:
    return [t.name for t in synthetic_task_registry()]
