"""Run configuration: a flat ``section.key = value`` text format.

Values are JSON literals (numbers, ``true``/``false``, strings, arrays); a bare
word such as ``lbfgs`` is read as a string.  ``#`` starts a comment.  Example::

    task = gauss_to_gauss_2d
    train.n_iters = 20000
    potential.kind = mlp
    potential.hidden = [64, 64]
    conjugate.solver = lbfgs
    amortization.loss = regression

An inline Gaussian pair replaces ``task`` with ``gaussian.mean_a``,
``gaussian.cov_a``, ``gaussian.mean_b`` and ``gaussian.cov_b``.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .conjugate import benchmark_mode, synthetic_mode
from .measures import ConfigurationError, GaussianPair, TaskSpec, gaussian_task, get_task
from .trainer import ConfigError, TrainConfig, nd_defaults, two_d_defaults

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")

# key -> (section of the effective config, attribute name, type)
TRAIN_KEYS = {
    "train.n_iters": ("n_iters", int),
    "train.batch_size": ("batch_size", int),
    "train.lr": ("lr_init", float),
    "train.betas": ("adam_betas", tuple),
    "train.cosine_floor": ("cosine_floor_fraction", float),
    "train.eval_every": ("eval_every", int),
    "train.eval_samples": ("eval_samples", int),
    "train.final_eval_samples": ("final_eval_samples", int),
    "train.checkpoint_every": ("checkpoint_every", int),
    "train.reverse": ("reverse", bool),
    "potential.kind": ("potential_kind", str),
    "potential.hidden": ("potential_hidden", tuple),
    "potential.activation": ("potential_activation", str),
    "potential.actnorm": ("actnorm", bool),
    "amortizer.kind": ("amortizer_kind", str),
    "amortizer.hidden": ("amortizer_hidden", tuple),
    "amortizer.activation": ("amortizer_activation", str),
    "amortization.loss": ("amort_loss", str),
    "amortization.connect_potential": ("connect_potential", bool),
    "pretrain.iters": ("pretrain_iters", int),
    "pretrain.lr": ("pretrain_lr", float),
    "pretrain.batch": ("pretrain_batch", int),
}
SOLVER_KEYS = {
    "conjugate.solver": ("solver", str),
    "conjugate.tol": ("tol", float),
    "conjugate.max_iter": ("max_iter", int),
    "conjugate.memory": ("memory", int),
    "conjugate.stop_rule": ("stop_rule", str),
    "conjugate.gtol": ("gtol", float),
    "conjugate.adam_lr": ("adam_lr", float),
    "conjugate.adam_lr_final": ("adam_lr_final", float),
}
LINESEARCH_KEYS = {
    "conjugate.linesearch": ("method", str),
    "conjugate.c1": ("c1", float),
    "conjugate.c2": ("c2", float),
    "conjugate.tau": ("tau", float),
    "conjugate.M": ("M", int),
    "conjugate.alpha_init": ("alpha_init", float),
    "conjugate.chunk": ("chunk", int),
}
RUN_KEYS = {
    "task": str,
    "conjugate.mode": str,
    "run.trials": int,
    "run.seed": int,
    "run.output_dir": str,
    "gaussian.mean_a": list,
    "gaussian.cov_a": list,
    "gaussian.mean_b": list,
    "gaussian.cov_b": list,
}
ALL_KEYS = set(TRAIN_KEYS) | set(SOLVER_KEYS) | set(LINESEARCH_KEYS) | set(RUN_KEYS)


class ConfigFileError(ConfigError):
    def __init__(self, message, line=None, source="<config>"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_().\-]*", text):
            return text
        raise


def parse_config_text(text: str, source="<config>") -> dict:
    """Return ``{key: (value, line_number)}``; later assignments win."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError("expected 'key = value'", lineno, source)
        key, value = (part.strip() for part in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigFileError(f"malformed key {key!r}", lineno, source)
        if key not in ALL_KEYS:
            raise ConfigFileError(f"unknown key {key!r}", lineno, source)
        try:
            entries[key] = (parse_value(value), lineno)
        except json.JSONDecodeError:
            raise ConfigFileError(f"cannot parse value for {key!r}: {value!r}", lineno, source)
    return entries


def parse_override(text: str) -> tuple:
    """Parse a ``key=value`` command-line override."""
    if "=" not in text:
        raise ConfigFileError(f"override {text!r} is not key=value", source="<override>")
    key, value = (part.strip() for part in text.split("=", 1))
    if key not in ALL_KEYS:
        raise ConfigFileError(f"unknown key {key!r}", source="<override>")
    try:
        return key, parse_value(value)
    except json.JSONDecodeError:
        raise ConfigFileError(f"cannot parse value for {key!r}: {value!r}", source="<override>")


def _coerce(key, value, kind, line, source):
    try:
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind is int:
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind is str:
            if not isinstance(value, str):
                raise TypeError
            return value
        if kind is tuple:
            return tuple(value)
        if kind is list:
            return list(value)
    except (TypeError, ValueError):
        pass
    raise ConfigFileError(f"{key} expects {kind.__name__}, got {value!r}", line, source)


@dataclass
class RunConfig:
    task_name: str
    train: TrainConfig
    trials: int = 3
    seed: int = 0
    output_dir: Optional[str] = None
    mode: str = "auto"
    gaussian: Optional[dict] = None

    def task(self) -> TaskSpec:
        if self.gaussian is not None:
            pair = GaussianPair(self.gaussian["mean_a"], self.gaussian["cov_a"],
                                self.gaussian["mean_b"], self.gaussian["cov_b"])
            return gaussian_task(self.task_name, pair)
        return get_task(self.task_name)


def resolve(entries: dict, source="<config>") -> RunConfig:
    """Build the effective run configuration from parsed entries."""
    def get(key, default=None):
        return entries[key] if key in entries else (default, None)

    gaussian = None
    gkeys = [k for k in entries if k.startswith("gaussian.")]
    try:
        if gkeys:
            if len(gkeys) != 4:
                raise ConfigFileError("an inline Gaussian pair needs mean_a, cov_a, mean_b, cov_b",
                                      entries[gkeys[0]][1], source)
            gaussian = {k.split(".")[1]: np.asarray(entries[k][0], dtype=float).tolist()
                        for k in gkeys}
            name = get("task", "inline_gaussian")[0]
            task = gaussian_task(name, GaussianPair(gaussian["mean_a"], gaussian["cov_a"],
                                                    gaussian["mean_b"], gaussian["cov_b"]))
        else:
            value, line = get("task", None)
            if value is None:
                raise ConfigFileError("no task given (set 'task' or a gaussian.* pair)", None, source)
            try:
                task = get_task(_coerce("task", value, str, line, source))
            except ConfigurationError as exc:
                raise ConfigFileError(str(exc), line, source)
    except ConfigurationError as exc:
        raise ConfigFileError(str(exc), entries[gkeys[0]][1] if gkeys else None, source)

    mode, mode_line = get("conjugate.mode", "auto")
    mode = _coerce("conjugate.mode", mode, str, mode_line, source)
    if mode not in ("auto", "synthetic", "benchmark"):
        raise ConfigFileError("conjugate.mode must be auto, synthetic or benchmark", mode_line, source)
    cfg = two_d_defaults() if task.dim == 2 else nd_defaults(task.dim)
    if mode == "synthetic" or (mode == "auto" and task.dim == 2):
        solver = synthetic_mode()
    else:
        solver = benchmark_mode()

    train_kw = {}
    for key, (attr, kind) in TRAIN_KEYS.items():
        if key in entries:
            value, line = entries[key]
            train_kw[attr] = _coerce(key, value, kind, line, source)
    solver_kw = {}
    for key, (attr, kind) in SOLVER_KEYS.items():
        if key in entries:
            value, line = entries[key]
            solver_kw[attr] = _coerce(key, value, kind, line, source)
    ls_kw = {}
    for key, (attr, kind) in LINESEARCH_KEYS.items():
        if key in entries:
            value, line = entries[key]
            ls_kw[attr] = _coerce(key, value, kind, line, source)
    try:
        ls = replace(solver.linesearch, **ls_kw)
        solver = replace(solver, linesearch=ls, **solver_kw)
    except ValueError as exc:
        line = next((entries[k][1] for k in list(solver_kw and SOLVER_KEYS) + list(LINESEARCH_KEYS)
                     if k in entries), None)
        raise ConfigFileError(str(exc), line, source)

    seed_value, seed_line = get("run.seed", 0)
    seed = _coerce("run.seed", seed_value, int, seed_line, source)
    cfg = replace(cfg, solver=solver, seed=seed, **train_kw)
    try:
        cfg.validate()
    except ConfigError as exc:
        line = None
        for key in ("amortization.loss", "conjugate.solver", "potential.kind", "amortizer.kind"):
            if key in entries:
                line = entries[key][1]
                break
        raise ConfigFileError(str(exc), line, source)
    trials_value, trials_line = get("run.trials", 3)
    trials = _coerce("run.trials", trials_value, int, trials_line, source)
    if trials < 1:
        raise ConfigFileError("run.trials must be >= 1", trials_line, source)
    out, out_line = get("run.output_dir", None)
    return RunConfig(task.name, cfg, trials, seed,
                     None if out is None else _coerce("run.output_dir", out, str, out_line, source),
                     mode, gaussian)


def load_config(path=None, overrides=()) -> RunConfig:
    entries = {}
    source = "<config>"
    if path is not None:
        source = str(path)
        with open(path) as fh:
            entries = parse_config_text(fh.read(), source)
    for text in overrides:
        key, value = parse_override(text)
        entries[key] = (value, None)
    return resolve(entries, source)


def dump_config(run: RunConfig) -> str:
    """Effective configuration text; reading it back reproduces ``run``."""
    cfg = run.train
    lines = ["# effective configuration (defaults + overrides)"]
    if run.gaussian is not None:
        for key in ("mean_a", "cov_a", "mean_b", "cov_b"):
            lines.append(f"gaussian.{key} = {json.dumps(run.gaussian[key])}")
    lines.append(f"task = {json.dumps(run.task_name)}")
    lines.append(f"conjugate.mode = {json.dumps(run.mode)}")
    for key, (attr, kind) in TRAIN_KEYS.items():
        value = getattr(cfg, attr)
        lines.append(f"{key} = {json.dumps(list(value) if kind is tuple else value)}")
    for key, (attr, kind) in SOLVER_KEYS.items():
        lines.append(f"{key} = {json.dumps(getattr(cfg.solver, attr))}")
    for key, (attr, kind) in LINESEARCH_KEYS.items():
        lines.append(f"{key} = {json.dumps(getattr(cfg.solver.linesearch, attr))}")
    lines.append(f"run.trials = {run.trials}")
    lines.append(f"run.seed = {run.seed}")
    if run.output_dir is not None:
        lines.append(f"run.output_dir = {json.dumps(run.output_dir)}")
    return "\n".join(lines) + "\n"
