import csv
import json

import numpy as np
import pytest

import w2conj.trainer as trainer_mod
from w2conj.cli import convergence_traces, main
from w2conj.config import ConfigFileError, dump_config, load_config, parse_config_text, resolve
from w2conj.potentials import QuadraticPotential, icnn, init_params

SMALL = ["train.n_iters=3", "train.batch_size=64", "pretrain.iters=0", "potential.hidden=[6, 6]",
         "amortizer.hidden=[6]", "train.eval_every=3", "train.eval_samples=256",
         "train.final_eval_samples=512", "conjugate.max_iter=20"]


def small_args(*extra):
    out = []
    for kv in SMALL:
        out += ["--set", kv]
    return out + list(extra)


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_values_and_comments():
    entries = parse_config_text("task = moons  # comment\n\ntrain.lr = 1e-3\npotential.hidden = [4, 4]\n"
                                "potential.actnorm = false\n")
    assert entries["task"] == ("moons", 1)
    assert entries["train.lr"] == (1e-3, 3)
    assert entries["potential.hidden"][0] == [4, 4]
    assert entries["potential.actnorm"][0] is False


@pytest.mark.parametrize("text,line", [
    ("task = moons\ntrain.lr 0.1\n", 2),
    ("task = moons\n\nbogus.key = 1\n", 3),
    ("train.n_iters = [1,\n", 1),
    ("task = moons\ntrain.n_iters = 1.5\n", 2),
    ("task = moons\namortization.loss = regression\nconjugate.solver = none\n", 2),
    ("task = nowhere\n", 1),
])
def test_errors_carry_line_numbers(tmp_path, text, line):
    path = write(tmp_path, text)
    with pytest.raises(ConfigFileError) as exc:
        load_config(path)
    assert exc.value.line == line
    assert f"{path}:{line}:" in str(exc.value)


def test_missing_task():
    with pytest.raises(ConfigFileError):
        resolve({})


def test_defaults_follow_dimension():
    two = load_config(overrides=["task=moons"])
    assert two.train.batch_size == 10000 and two.train.solver.tol == 1e-3
    eight = load_config(overrides=["task=gauss_to_gauss_8d"])
    assert eight.train.batch_size == 1024 and eight.train.solver.tol == 0.1
    forced = load_config(overrides=["task=gauss_to_gauss_8d", "conjugate.mode=synthetic"])
    assert forced.train.solver.linesearch.M == 30


def test_inline_gaussian_pair():
    run = load_config(overrides=["gaussian.mean_a=[0, 0]", "gaussian.cov_a=[[1, 0], [0, 1]]",
                                 "gaussian.mean_b=[1, 1]", "gaussian.cov_b=[[2, 0], [0, 0.5]]"])
    task = run.task()
    assert task.dim == 2
    assert np.allclose(task.ground_truth(np.zeros((1, 2))), [[1.0, 1.0]])
    with pytest.raises(ConfigFileError):
        load_config(overrides=["gaussian.mean_a=[0, 0]"])


def test_effective_config_round_trip():
    run = load_config(overrides=["task=gauss_to_gauss_2d", "conjugate.chunk=1", "train.lr=1e-3",
                                 "run.trials=2", "potential.kind=mlp"])
    again = resolve(parse_config_text(dump_config(run)))
    assert again.train == run.train
    assert (again.trials, again.seed, again.task_name) == (run.trials, run.seed, run.task_name)
    assert dump_config(again) == dump_config(run)


def _metrics(path):
    with open(path) as fh:
        return [{k: v for k, v in r.items() if k != "wall_ms"} for r in csv.DictReader(fh)]


def test_train_gaussian_report_and_rerun_from_effective_config(tmp_path, capsys):
    out = tmp_path / "a"
    code = main(["train", "--task", "gauss_to_gauss_2d", "--loss", "regression", "--solver", "lbfgs",
                 "--trials", "2", "--out", str(out)] + small_args())
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert len(report["l2_uvp_final"]["per_trial"]) == 2
    assert report["l2_uvp_final"]["mean"] >= 0
    for name in ("effective_config.txt", "trial_0/metrics.csv", "trial_1/checkpoint_final.npz",
                 "trial_0/dual_value.svg", "trial_0/l2_uvp.svg", "trial_0/pushforward.svg"):
        assert (out / name).exists(), name
    again = tmp_path / "b"
    assert main(["train", "--config", str(out / "effective_config.txt"), "--out", str(again)]) == 0
    for i in range(2):
        assert _metrics(out / f"trial_{i}/metrics.csv") == _metrics(again / f"trial_{i}/metrics.csv")


def test_train_without_ground_truth(tmp_path):
    out = tmp_path / "moons"
    assert main(["train", "--task", "moons", "--solver", "lbfgs", "--trials", "1",
                 "--out", str(out)] + small_args()) == 0
    report = json.loads((out / "report.json").read_text())
    assert "l2_uvp_final" not in report
    assert report["dual_value"]["0"] and report["dual_value_final"][0] is not None


def test_exit_codes(tmp_path, monkeypatch, capsys):
    assert main(["train", "--task", "moons", "--loss", "regression", "--solver", "none",
                 "--out", str(tmp_path / "x")] + small_args()) == 2
    assert "regression" in capsys.readouterr().err
    bad = write(tmp_path, "task = moons\ntrain.lr = fast!\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "y")]) == 2
    assert f"{bad}:2:" in capsys.readouterr().err
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.npz")]) == 2
    assert main(["trace-conjugate", "--checkpoint", str(tmp_path / "missing.npz")]) == 2

    real = trainer_mod.dual_grad
    monkeypatch.setattr(trainer_mod, "dual_grad",
                        lambda *a: real(*a).with_values(real(*a).values * np.nan))
    out = tmp_path / "nan"
    assert main(["train", "--task", "moons", "--trials", "1", "--out", str(out)] + small_args()) == 3
    assert (out / "trial_0" / "crash.npz").exists()


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("W2CONJ_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["bench-linesearch", "--dims", "2", "--batch", "8", "--trials", "1"]) == 0
    assert (tmp_path / "root" / "bench_linesearch" / "linesearch_bench.csv").exists()


def test_bench_rows_and_grid_equivalence(tmp_path):
    assert main(["bench-linesearch", "--dims", "8", "--batch", "32", "--trials", "2",
                 "--out", str(tmp_path)]) == 0
    with open(tmp_path / "linesearch_bench.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["method", "trial", "dim", "batch", "wall_ms", "mean_iters",
                             "converged_frac"]
    keys = [(r["method"], r["trial"]) for r in rows]
    assert len(keys) == len(set(keys)) == 4 * 2
    assert all(float(r["converged_frac"]) == 1.0 and float(r["mean_iters"]) >= 1 for r in rows)
    by = {(r["method"], r["trial"]): r["mean_iters"] for r in rows}
    for t in ("0", "1"):
        assert by[("parallel_armijo", t)] == by[("backtracking_armijo", t)]


def test_convergence_trace_properties():
    A = np.array([[4.0, 1.0], [1.0, 2.0]])
    f = QuadraticPotential(A)
    Y = np.random.default_rng(0).normal(size=(16, 2))
    gaps = convergence_traces(f, f.zeros(), Y, Y, ("lbfgs",), max_iter=7)
    for gap in gaps.values():
        assert len(gap) <= 7 + 1
        assert np.all(np.diff(gap) <= 1e-12)

    g = icnn(2, (8, 8))
    theta = init_params(g, 1)
    gaps = convergence_traces(g, theta, Y, Y, ("lbfgs", "adam"), max_iter=30)
    assert set(gaps) == {("lbfgs", "amortized"), ("lbfgs", "zero"), ("adam", "amortized"),
                         ("adam", "zero")}
    for key in (("lbfgs", "amortized"), ("lbfgs", "zero")):
        assert np.all(np.diff(gaps[key]) <= 1e-12)
        assert gaps[key].min() >= 0


def test_checkpoint_subcommands(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--task", "gauss_to_gauss_2d", "--trials", "1", "--out", str(out)]
                + small_args()) == 0
    ck = out / "trial_0" / "checkpoint_final.npz"
    assert main(["eval", "--checkpoint", str(ck), "--samples", "512", "--out", str(tmp_path / "e")]) == 0
    assert json.loads((tmp_path / "e" / "eval.json").read_text())["l2_uvp"] >= 0
    assert main(["trace-conjugate", "--checkpoint", str(ck), "--batch", "16", "--max-iter", "10",
                 "--out", str(tmp_path / "t")]) == 0
    with open(tmp_path / "t" / "conjugate_trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["init"] for r in rows} == {"amortized", "zero"}
    assert max(int(r["iteration"]) for r in rows) <= 10
    assert main(["export-figures", "--checkpoint", str(ck), "--samples", "256", "--resolution", "41",
                 "--out", str(tmp_path / "f")]) == 0
    for name in ("interpolation.csv", "interpolation.svg", "pushforward.svg", "landscape.csv",
                 "landscape.svg"):
        assert (tmp_path / "f" / name).exists()
