"""
Learning a transport map between Gaussians
==========================================

For Gaussian measures the optimal map is affine and known in closed form,
so the L2 unexplained-variance percentage can be tracked during training.
This is a short run; the acceptance suite trains for 20000 steps.
"""
import os

from w2conj import svg
from w2conj.conjugate import synthetic_mode
from w2conj.evaluation import pushforward_export
from w2conj.linesearch import LineSearchConfig
from w2conj.measures import get_task
from w2conj.trainer import build_models, evaluate_uvp, train, transport_map, two_d_defaults

out = os.environ.get("W2CONJ_OUTPUT_ROOT", "runs")
os.makedirs(out, exist_ok=True)

task = get_task("gauss_to_gauss_2d")
cfg = two_d_defaults(
    n_iters=2000, batch_size=1024, potential_kind="mlp", potential_hidden=(32, 32),
    potential_activation="elu", amortizer_hidden=(32, 32), amort_loss="regression",
    solver=synthetic_mode(linesearch=LineSearchConfig(M=30, chunk=1)), pretrain_iters=200,
    eval_every=250)
models = build_models(cfg, task.dim)
state, rows = train(task, cfg, models=models)

for r in rows:
    if r["l2_uvp"] == r["l2_uvp"]:
        print("step %5d  dual %.4f  solver iters %.2f  L2-UVP %.3f%%"
              % (r["step"] + 1, r["dual_value"], r["mean_conj_iters"], r["l2_uvp"]))
print("final L2-UVP: %.3f%%" % evaluate_uvp(task, models, state, 16384).uvp_percent)

###############################################################################
# Push the source samples through the learned map and overlay the target

source, pushed = pushforward_export(transport_map(models.potential, state.theta), task.alpha, 2000)
target = task.beta.sample(2000, 5)
svg.write_svg(os.path.join(out, "demo_pushforward.svg"),
              svg.scatter_svg([target, pushed], ["target", "pushforward"], "gauss_to_gauss_2d"))
print("mean of pushforward", pushed.mean(axis=0), "target mean", task.beta.params["mean"])
