"""Dual potential training with amortized, fine-tuned conjugates.

One step:

1. sample ``X ~ alpha`` and ``Y ~ beta`` keyed by ``(seed, step)``;
2. predict conjugate solutions with the amortizer and fine-tune them with
   the conjugate solver (or keep the predictions when ``solver='none'``);
3. Adam ascent on the dual estimate ``-mean f(X) + mean J(X*; Y)`` using the
   envelope gradient ``-mean grad_theta f(X) + mean grad_theta f(X*)``;
4. Adam descent on the amortization loss.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .amortization import LOSSES, amortization_loss
from .conjugate import SolverConfig, benchmark_mode, conjugate, synthetic_mode
from .diffcore import ParamVector
from .evaluation import l2_uvp
from .linesearch import LineSearchConfig
from .measures import TaskSpec, rng_for
from .optim import Adam, AdamState, cosine_lr
from .potentials import (
    AmortModel,
    NumericalAbort,
    icnn,
    init_nn,
    init_params,
    mlp_potential,
    pretrain_identity,
)

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "dual_value", "mean_conj_iters", "mean_conj_grad_norm",
                  "amort_loss", "l2_uvp", "wall_ms")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    n_iters: int = 50000
    batch_size: int = 10000
    lr_init: float = 5e-4
    adam_betas: tuple = (0.5, 0.5)
    cosine_floor_fraction: float = 1e-4
    potential_kind: str = "icnn"
    potential_hidden: tuple = (128, 128)
    potential_activation: str = "leaky_relu(0.2)"
    actnorm: bool = True
    amortizer_kind: str = "init_nn"
    amortizer_hidden: tuple = (512, 512)
    amortizer_activation: str = "elu"
    solver: SolverConfig = field(default_factory=synthetic_mode)
    amort_loss: str = "regression"
    connect_potential: bool = False
    pretrain_iters: int = 2000
    pretrain_lr: float = 1e-3
    pretrain_batch: int = 1024
    eval_every: int = 1000
    eval_samples: int = 4096
    final_eval_samples: int = 16384
    checkpoint_every: int = 0
    reverse: bool = False
    seed: int = 0

    def validate(self):
        if self.amort_loss not in LOSSES:
            raise ConfigError(f"amortization.loss must be one of {LOSSES}")
        if self.amort_loss == "regression" and self.solver.solver == "none":
            raise ConfigError("regression amortization needs a conjugate solver (solver=none given)")
        if self.potential_kind not in ("icnn", "mlp"):
            raise ConfigError(f"unknown potential kind {self.potential_kind!r}")
        if self.amortizer_kind not in ("init_nn", "icnn_grad", "mlp_grad"):
            raise ConfigError(f"unknown amortizer kind {self.amortizer_kind!r}")
        if self.n_iters < 0 or self.batch_size < 1:
            raise ConfigError("n_iters must be >= 0 and batch_size >= 1")
        return self

    def to_dict(self):
        d = asdict(self)
        d["solver"]["linesearch"] = asdict(self.solver.linesearch)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        solver = dict(d.pop("solver", {}))
        ls = LineSearchConfig(**solver.pop("linesearch", {}))
        for key in ("adam_betas",):
            if key in solver:
                solver[key] = tuple(solver[key])
        d["solver"] = SolverConfig(linesearch=ls, **solver)
        for key in ("adam_betas", "potential_hidden", "amortizer_hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def two_d_defaults(**overrides) -> TrainConfig:
    """Synthetic 2-d settings: 50000 steps, batch 10000, [128, 128] leaky-ReLU(0.2) potentials."""
    return replace(TrainConfig(), **overrides)


def nd_defaults(dim: int, **overrides) -> TrainConfig:
    """n-dimensional settings: 250000 steps, batch 1024, ELU potentials, tol-0.1 solver."""
    hidden = (max(2 * dim, 64), max(2 * dim, 64), max(dim, 32))
    cfg = TrainConfig(n_iters=250000, batch_size=1024, potential_hidden=hidden,
                      potential_activation="elu", solver=benchmark_mode())
    return replace(cfg, **overrides)


# ---------------------------------------------------------------------------
# state


@dataclass
class TrainState:
    theta: ParamVector
    phi: ParamVector
    opt_theta: AdamState
    opt_phi: AdamState
    step: int = 0
    seed: int = 0


@dataclass
class Models:
    potential: object
    amortizer: AmortModel


def build_models(cfg: TrainConfig, dim: int) -> Models:
    if cfg.potential_kind == "icnn":
        f = icnn(dim, cfg.potential_hidden, cfg.potential_activation, cfg.actnorm)
    else:
        f = mlp_potential(dim, cfg.potential_hidden, cfg.potential_activation)
    if cfg.amortizer_kind == "init_nn":
        amort = AmortModel(init_nn(dim, cfg.amortizer_hidden, cfg.amortizer_activation), "direct")
    elif cfg.amortizer_kind == "icnn_grad":
        amort = AmortModel(icnn(dim, cfg.amortizer_hidden, cfg.amortizer_activation, cfg.actnorm),
                           "gradient")
    else:
        amort = AmortModel(mlp_potential(dim, cfg.amortizer_hidden, cfg.amortizer_activation),
                           "gradient")
    return Models(f, amort)


def _task_for(task: TaskSpec, cfg: TrainConfig) -> TaskSpec:
    return task.swapped() if cfg.reverse else task


def init_state(task: TaskSpec, cfg: TrainConfig, models: Models = None) -> TrainState:
    """Fresh parameters, activation-norm init on the first batch, identity pretraining."""
    cfg.validate()
    task = _task_for(task, cfg)
    models = models or build_models(cfg, task.dim)
    f, amort = models.potential, models.amortizer
    theta = init_params(f, rng_for((cfg.seed, 101)))
    phi = init_params(amort.net, rng_for((cfg.seed, 202)))
    x0 = task.alpha.sample(cfg.batch_size, (cfg.seed, 0, 0))
    y0 = task.beta.sample(cfg.batch_size, (cfg.seed, 0, 1))
    theta = f.actnorm_init(theta, x0)
    if amort.mode == "gradient":
        phi = amort.net.actnorm_init(phi, y0)
    if cfg.pretrain_iters > 0:
        theta = pretrain_identity(f, theta, task.alpha, cfg.pretrain_iters, cfg.pretrain_lr,
                                  cfg.pretrain_batch, seed=cfg.seed * 2 + 1)
        phi = pretrain_identity(amort, phi, task.beta, cfg.pretrain_iters, cfg.pretrain_lr,
                                cfg.pretrain_batch, seed=cfg.seed * 2 + 2)
    opt = Adam(betas=cfg.adam_betas)
    return TrainState(theta, phi, opt.init(theta.values), opt.init(phi.values), 0, cfg.seed)


# ---------------------------------------------------------------------------
# dual objective


def dual_value(f, theta, X, X_star, Y) -> float:
    """``-mean f(X) + mean J(X*; Y)``; an upper bound when ``X*`` is suboptimal."""
    v = -np.mean(f(theta, X)) + np.mean(f(theta, X_star) - np.sum(X_star * Y, axis=1))
    if not np.isfinite(v):
        raise NumericalAbort("dual value is not finite")
    return float(v)


def dual_grad(f, theta, X, X_star) -> ParamVector:
    """Envelope gradient ``-mean grad f(X) + mean grad f(X*)``; ``X*`` is not differentiated."""
    g_a = f.grad_params(theta, X, np.full(X.shape[0], 1.0 / X.shape[0]))
    g_b = f.grad_params(theta, X_star, np.full(X_star.shape[0], 1.0 / X_star.shape[0]))
    return g_b.with_values(g_b.values - g_a.values)


def transport_map(f, theta):
    """Forward map ``x -> grad f(x)``."""
    return lambda x: f.grad_input(theta, x)


def inverse_map(f, theta, amort=None, phi=None, solver: SolverConfig = None):
    """Inverse map ``y -> argmin_x J(x; y)``, warm-started from the amortizer."""
    solver = solver or synthetic_mode()

    def T_inv(y):
        x0 = amort.predict(phi, y) if amort is not None else np.array(y)
        return conjugate(f, theta, y, x0, solver).x_star
    return T_inv


# ---------------------------------------------------------------------------
# training loop


@dataclass
class StepOutput:
    state: TrainState
    metrics: dict


def _opts(cfg):
    sched = lambda k: cosine_lr(k, cfg.n_iters, cfg.lr_init, cfg.cosine_floor_fraction)
    return Adam(betas=cfg.adam_betas, schedule=sched)


def _check_finite(name, values):
    if not np.all(np.isfinite(values)):
        raise NumericalAbort(f"non-finite {name}")


def train_step(task: TaskSpec, cfg: TrainConfig, models: Models, state: TrainState) -> StepOutput:
    f, amort = models.potential, models.amortizer
    t0 = time.perf_counter()
    X = task.alpha.sample(cfg.batch_size, (state.seed, state.step, 0))
    Y = task.beta.sample(cfg.batch_size, (state.seed, state.step, 1))

    X_pred = amort.predict(state.phi, Y)
    res = conjugate(f, state.theta, Y, X_pred, cfg.solver)
    X_star = res.x_star
    value = dual_value(f, state.theta, X, X_star, Y)

    opt = _opts(cfg)
    grad_theta = -dual_grad(f, state.theta, X, X_star).values   # ascent on the dual
    if cfg.amort_loss == "cycle" and cfg.connect_potential:
        coupled = amortization_loss("cycle", f, state.theta, amort, state.phi, Y,
                                    X_pred=X_pred, connect_potential=True)
        grad_theta = grad_theta + coupled.grad_theta.values
    _check_finite("potential gradient", grad_theta)
    theta_vals, opt_theta = opt.update(state.theta.values, grad_theta, state.opt_theta)
    theta = state.theta.with_values(theta_vals)

    loss = amortization_loss(cfg.amort_loss, f, theta, amort, state.phi, Y, X_star=X_star,
                             X_pred=X_pred)
    _check_finite("amortizer gradient", loss.grad_phi.values)
    phi_vals, opt_phi = opt.update(state.phi.values, loss.grad_phi.values, state.opt_phi)
    phi = state.phi.with_values(phi_vals)

    new_state = TrainState(theta, phi, opt_theta, opt_phi, state.step + 1, state.seed)
    metrics = {
        "step": state.step,
        "dual_value": value,
        "mean_conj_iters": float(np.mean(res.iters)),
        "mean_conj_grad_norm": float(np.mean(res.grad_inf_norms)),
        "amort_loss": loss.value,
        "l2_uvp": float("nan"),
        "wall_ms": 1e3 * (time.perf_counter() - t0),
    }
    return StepOutput(new_state, metrics)


def evaluate_uvp(task: TaskSpec, models: Models, state: TrainState, n: int, seed=None):
    if task.ground_truth is None:
        return None
    seed = state.seed + 7919 if seed is None else seed
    return l2_uvp(transport_map(models.potential, state.theta), task.ground_truth,
                  task.alpha, task.beta, n, seed)


def train(task: TaskSpec, cfg: TrainConfig, state: TrainState = None, out_dir=None,
          models: Models = None, callback: Callable = None):
    """Run training until ``cfg.n_iters`` steps; returns ``(state, metrics_rows)``.

    Resumes from ``state`` when given.  With ``out_dir``, metrics are written
    to ``metrics.csv`` and checkpoints every ``cfg.checkpoint_every`` steps; a
    non-finite update writes ``crash.npz`` before re-raising.
    """
    cfg.validate()
    models = models or build_models(cfg, task.dim)
    if state is None:
        state = init_state(task, cfg, models)
    task = _task_for(task, cfg)
    out = Path(out_dir) if out_dir is not None else None
    rows = []
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "metrics.csv", "a" if state.step > 0 else "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        if state.step == 0:
            writer.writeheader()
    try:
        while state.step < cfg.n_iters:
            try:
                step = train_step(task, cfg, models, state)
            except NumericalAbort:
                if out is not None:
                    save_checkpoint(out / "crash.npz", state, cfg)
                raise
            state = step.state
            m = step.metrics
            if cfg.eval_every and (state.step % cfg.eval_every == 0 or state.step == cfg.n_iters):
                rep = evaluate_uvp(task, models, state, cfg.eval_samples)
                if rep is not None:
                    m["l2_uvp"] = rep.uvp_percent
                log.info("step %d dual %.5f conj-iters %.2f uvp %s", m["step"], m["dual_value"],
                         m["mean_conj_iters"], m["l2_uvp"])
            rows.append(m)
            if writer is not None:
                writer.writerow(m)
            if out is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"checkpoint_{state.step:07d}.npz", state, cfg)
            if callback is not None:
                callback(state, m)
    finally:
        if fh is not None:
            fh.close()
    return state, rows


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, state: TrainState, cfg: TrainConfig, extra: dict = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "theta_layout": state.theta.manifest(),
        "phi_layout": state.phi.manifest(),
        "step": state.step,
        "seed": state.seed,
        "opt_theta_count": state.opt_theta.count,
        "opt_phi_count": state.opt_phi.count,
        "config": cfg.to_dict(),
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        np.savez(fh, theta=state.theta.values, phi=state.phi.values,
                 theta_m=state.opt_theta.m, theta_v=state.opt_theta.v,
                 phi_m=state.opt_phi.m, phi_v=state.opt_phi.v,
                 meta=np.array(json.dumps(meta)))
    return path


def load_checkpoint(path):
    """Return ``(state, cfg, extra)``."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        theta = ParamVector.from_manifest(meta["theta_layout"], data["theta"])
        phi = ParamVector.from_manifest(meta["phi_layout"], data["phi"])
        state = TrainState(
            theta, phi,
            AdamState(data["theta_m"].copy(), data["theta_v"].copy(), meta["opt_theta_count"]),
            AdamState(data["phi_m"].copy(), data["phi_v"].copy(), meta["opt_phi_count"]),
            meta["step"], meta["seed"])
    return state, TrainConfig.from_dict(meta["config"]), meta.get("extra", {})
