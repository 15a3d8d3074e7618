"""Command line entry point.

Subcommands: ``train``, ``eval``, ``bench-linesearch``, ``trace-conjugate`` and
``export-figures``.  Outputs go under ``--out`` or, failing that, under
``$W2CONJ_OUTPUT_ROOT`` (default ``./runs``).  Exit codes: 0 success,
2 configuration or input error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluation, svg
from .config import RunConfig, dump_config, load_config
from .conjugate import SolverConfig, conjugate
from .linesearch import METHODS, LineSearchConfig
from .measures import ConfigurationError, get_task, random_spd, rng_for
from .potentials import NumericalAbort, QuadraticPotential
from .trainer import (
    ConfigError,
    build_models,
    evaluate_uvp,
    load_checkpoint,
    save_checkpoint,
    train,
    transport_map,
)

log = logging.getLogger("w2conj")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
OUTPUT_ROOT_ENV = "W2CONJ_OUTPUT_ROOT"


class InputError(Exception):
    """Missing or unreadable inputs (checkpoints, files)."""


def output_dir(args, default_name, run_dir=None) -> Path:
    if getattr(args, "out", None):
        path = Path(args.out)
    elif run_dir:
        path = Path(run_dir)
    else:
        path = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / default_name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _mean_std(values):
    a = np.asarray(values, dtype=float)
    return {"mean": float(a.mean()), "std": float(a.std()), "per_trial": a.tolist()}


# ---------------------------------------------------------------------------
# train / eval


def _run_config(args) -> RunConfig:
    overrides = list(args.set or [])
    for flag, key in (("task", "task"), ("loss", "amortization.loss"),
                      ("solver", "conjugate.solver"), ("trials", "run.trials"),
                      ("seed", "run.seed"), ("steps", "train.n_iters")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    return load_config(args.config, overrides)


def run_train(args) -> int:
    run = _run_config(args)
    task = run.task()
    out = output_dir(args, f"{run.task_name}_seed{run.seed}", run.output_dir)
    with open(out / "effective_config.txt", "w") as fh:
        fh.write(dump_config(run))
    report = {"task": run.task_name, "trials": run.trials, "seed": run.seed,
              "solver": run.train.solver.solver, "loss": run.train.amort_loss,
              "dual_value": {}, "dual_value_final": []}
    finals = []
    for i in range(run.trials):
        seed = run.seed + i
        cfg = replace(run.train, seed=seed)
        trial_dir = out / f"trial_{i}"
        models = build_models(cfg, task.dim)
        t0 = time.perf_counter()
        state, rows = train(task, cfg, out_dir=trial_dir, models=models)
        save_checkpoint(trial_dir / "checkpoint_final.npz", state, cfg,
                        {"task": run.task_name, "gaussian": run.gaussian})
        report["dual_value"][str(seed)] = [[r["step"], r["dual_value"]] for r in rows
                                           if r["l2_uvp"] == r["l2_uvp"] or r is rows[-1]]
        report["dual_value_final"].append(rows[-1]["dual_value"] if rows else None)
        eval_task = task.swapped() if cfg.reverse else task
        rep = evaluate_uvp(eval_task, models, state, cfg.final_eval_samples)
        if rep is not None:
            finals.append(rep.uvp_percent)
        log.info("trial %d (seed %d) done in %.1fs", i, seed, time.perf_counter() - t0)
        _trial_figures(trial_dir, eval_task, models, state, rows)
    if finals:
        report["l2_uvp_final"] = _mean_std(finals)
    _write_json(out / "report.json", report)
    print(json.dumps({k: report[k] for k in report if k not in ("dual_value",)}, indent=2))
    return EXIT_OK


def _trial_figures(out, task, models, state, rows):
    if rows:
        steps = np.array([r["step"] for r in rows])
        series = {"dual value": (steps, np.array([r["dual_value"] for r in rows]))}
        svg.write_svg(out / "dual_value.svg", svg.lines_svg(series, "dual estimate", "step"))
        uvp = np.array([r["l2_uvp"] for r in rows])
        if np.isfinite(uvp).any():
            keep = np.isfinite(uvp)
            svg.write_svg(out / "l2_uvp.svg", svg.lines_svg(
                {"L2-UVP %": (steps[keep], uvp[keep])}, "L2-UVP", "step", logy=True))
    if task.dim == 2:
        T = transport_map(models.potential, state.theta)
        src, pushed = evaluation.pushforward_export(T, task.alpha, 2048, state.seed)
        target = task.beta.sample(2048, (state.seed, 3, 13))
        svg.write_svg(out / "pushforward.svg",
                      svg.scatter_svg([target, pushed], ["target", "pushforward"], "T# alpha"))


def _load(path):
    if path is None or not Path(path).is_file():
        raise InputError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}")


def _checkpoint_task(args, extra):
    name = args.task or extra.get("task")
    if extra.get("gaussian") and (args.task is None or args.task == extra.get("task")):
        from .measures import GaussianPair, gaussian_task
        g = extra["gaussian"]
        return gaussian_task(name, GaussianPair(g["mean_a"], g["cov_a"], g["mean_b"], g["cov_b"]))
    if name is None:
        raise ConfigError("no task recorded in the checkpoint; pass --task")
    return get_task(name)


def run_eval(args) -> int:
    state, cfg, extra = _load(args.checkpoint)
    task = _checkpoint_task(args, extra)
    task = task.swapped() if cfg.reverse else task
    models = build_models(cfg, task.dim)
    out = output_dir(args, f"eval_{task.name}", str(Path(args.checkpoint).parent))
    rep = evaluate_uvp(task, models, state, args.samples, seed=args.seed)
    result = {"task": task.name, "step": state.step}
    if rep is not None:
        result.update(l2_uvp=rep.uvp_percent, l2_uvp_std_error=rep.std_error,
                      n_samples=rep.n_samples)
    _write_json(out / "eval.json", result)
    print(json.dumps(result, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# line-search benchmark


def bench_config(method, max_iter=100) -> SolverConfig:
    ls = LineSearchConfig(method, c1=1e-4, c2=0.9, tau=2.0 / 3.0, M=15)
    return SolverConfig("lbfgs", ls, max_iter=max_iter, stop_rule="grad", gtol=0.1)


def linesearch_bench(dims=(2, 8, 32), batch=256, trials=3, methods=METHODS, seed=0,
                     cond=100.0):
    """Rows ``{method, trial, dim, batch, wall_ms, mean_iters, converged_frac}``."""
    rows = []
    for dim in dims:
        for trial in range(trials):
            rng = rng_for((seed, dim, trial))
            A = random_spd(rng, dim, cond)
            Y = rng.normal(size=(batch, dim)) * 3.0
            f = QuadraticPotential(A)
            for method in methods:
                cfg = bench_config(method)
                t0 = time.perf_counter()
                res = conjugate(f, f.zeros(), Y, np.zeros_like(Y), cfg)
                wall = 1e3 * (time.perf_counter() - t0)
                rows.append({"method": method, "trial": trial, "dim": dim, "batch": batch,
                             "wall_ms": wall, "mean_iters": float(np.mean(res.iters)),
                             "converged_frac": float(np.mean(res.converged))})
    return rows


def run_bench(args) -> int:
    out = output_dir(args, "bench_linesearch")
    dims = [int(d) for d in args.dims.split(",")]
    rows = linesearch_bench(dims, args.batch, args.trials or 3, seed=args.seed or 0)
    with open(out / "linesearch_bench.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for method in METHODS:
        sel = [r for r in rows if r["method"] == method]
        print(f"{method:28s} wall {np.mean([r['wall_ms'] for r in sel]):8.2f} ms  "
              f"iters {np.mean([r['mean_iters'] for r in sel]):6.2f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# conjugate convergence traces


def convergence_traces(f, theta, Y, X_amort, solvers=("lbfgs", "adam"), max_iter=100):
    """Mean J-gap per iteration for each (solver, init); gap is against the best final J."""
    runs = {}
    for solver in solvers:
        cfg = SolverConfig(solver, LineSearchConfig("parallel_armijo", tau=1.5, M=15),
                           max_iter=max_iter, stop_rule="grad", gtol=1e-6)
        for init_name, X0 in (("amortized", X_amort), ("zero", np.zeros_like(Y))):
            runs[(solver, init_name)] = conjugate(f, theta, Y, X0, cfg, trace=True).trace
    best = np.min([tr.min(axis=0) for tr in runs.values()], axis=0)
    return {key: np.mean(tr - best[None, :], axis=1) for key, tr in runs.items()}


def run_trace(args) -> int:
    state, cfg, extra = _load(args.checkpoint)
    task = _checkpoint_task(args, extra)
    task = task.swapped() if cfg.reverse else task
    models = build_models(cfg, task.dim)
    out = output_dir(args, f"trace_{task.name}", str(Path(args.checkpoint).parent))
    Y = task.beta.sample(args.batch, (args.seed or 0, 5, 17))
    X_amort = models.amortizer.predict(state.phi, Y)
    solvers = tuple(s.strip() for s in args.solvers.split(","))
    gaps = convergence_traces(models.potential, state.theta, Y, X_amort, solvers, args.max_iter)
    with open(out / "conjugate_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["solver", "init", "iteration", "mean_J_gap"])
        for (solver, init), gap in gaps.items():
            for k, g in enumerate(gap):
                w.writerow([solver, init, k, repr(float(g))])
    series = {f"{s} / {i}": (np.arange(len(g)), np.maximum(g, 1e-12)) for (s, i), g in gaps.items()}
    svg.write_svg(out / "conjugate_trace.svg",
                  svg.lines_svg(series, "conjugate convergence", "iteration", "mean J gap",
                                logy=True))
    for (s, i), g in gaps.items():
        print(f"{s:6s} {i:10s} start gap {g[0]:.3e}  final gap {g[-1]:.3e}  iters {len(g) - 1}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# figures


def run_figures(args) -> int:
    state, cfg, extra = _load(args.checkpoint)
    task = _checkpoint_task(args, extra)
    task = task.swapped() if cfg.reverse else task
    models = build_models(cfg, task.dim)
    out = output_dir(args, f"figures_{task.name}", str(Path(args.checkpoint).parent))
    f, theta = models.potential, state.theta
    T = transport_map(f, theta)
    t_values = [0.0, 0.25, 0.5, 0.75, 1.0]
    frames = evaluation.interpolation_export(T, task.alpha, t_values, args.samples, state.seed)
    evaluation.write_points_csv(out / "interpolation.csv", frames, t_values)
    if task.dim != 2:
        print(f"wrote {out / 'interpolation.csv'} (scatter plots and landscapes need dim 2)")
        return EXIT_OK
    svg.write_svg(out / "interpolation.svg",
                  svg.scatter_svg(frames, [f"t={t:g}" for t in t_values], "displacement interpolation"))
    target = task.beta.sample(args.samples, (state.seed, 3, 13))
    svg.write_svg(out / "pushforward.svg",
                  svg.scatter_svg([target, frames[-1]], ["target", "pushforward"], "T# alpha"))
    y = task.beta.sample(1, (state.seed, 4, 13))[0]
    x_amort = models.amortizer.predict(state.phi, y[None])[0]
    x_solver = conjugate(f, theta, y[None], x_amort[None], cfg.solver).x_star[0]
    lo = np.minimum(y, x_solver).min() - 3.0
    hi = np.maximum(y, x_solver).max() + 3.0
    fun = lambda X: f(theta, X)
    grid = evaluation.landscape_export(fun, y, ((lo, hi), (lo, hi)), args.resolution, x_solver)
    evaluation.write_landscape_csv(out / "landscape.csv", grid)
    svg.write_svg(out / "landscape.svg", svg.contour_svg(
        grid.axes[0], grid.axes[1], grid.J, grid.mask, title="J(x; y)",
        markers=[(y, "y"), (x_amort, "amortized"), (x_solver, "solver")]))
    print(f"wrote figures to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="w2conj", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train dual potentials")
    t.add_argument("--config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--task")
    t.add_argument("--loss", choices=("objective", "cycle", "regression"))
    t.add_argument("--solver", choices=("lbfgs", "adam", "none"))
    t.add_argument("--trials", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--out")
    t.set_defaults(func=run_train)

    e = sub.add_parser("eval", help="L2-UVP of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--task")
    e.add_argument("--samples", type=int, default=16384)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=run_eval)

    b = sub.add_parser("bench-linesearch", help="line-search timing on quadratic conjugates")
    b.add_argument("--dims", default="2,8,32")
    b.add_argument("--batch", type=int, default=256)
    b.add_argument("--trials", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=run_bench)

    c = sub.add_parser("trace-conjugate", help="conjugate solver convergence from a checkpoint")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--task")
    c.add_argument("--solvers", default="lbfgs,adam")
    c.add_argument("--batch", type=int, default=256)
    c.add_argument("--max-iter", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=run_trace)

    x = sub.add_parser("export-figures", help="interpolation, pushforward and landscape figures")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--task")
    x.add_argument("--samples", type=int, default=2048)
    x.add_argument("--resolution", type=int, default=121)
    x.add_argument("--out")
    x.set_defaults(func=run_figures)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ConfigurationError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
