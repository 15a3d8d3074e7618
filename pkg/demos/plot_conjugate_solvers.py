"""
Numerical convex conjugates
===========================

The conjugate of a convex potential ``f`` at ``y`` is ``-min_x f(x) - <x, y>``.
For a quadratic ``f(x) = x'Ax / 2`` the minimizer is ``A^-1 y`` and we can
check the batched solvers against a linear solve.
"""
import numpy as np

from w2conj.conjugate import SolverConfig, conjugate, synthetic_mode
from w2conj.linesearch import LineSearchConfig
from w2conj.measures import random_spd
from w2conj.potentials import QuadraticPotential, icnn, init_params

rng = np.random.default_rng(0)
A = random_spd(rng, 4, cond=50.0, scale=10.0)
f = QuadraticPotential(A)
Y = rng.normal(size=(512, 4))
exact = np.linalg.solve(A, Y.T).T

###############################################################################
# L-BFGS with the parallel Armijo line search, started from zero

cfg = SolverConfig("lbfgs", LineSearchConfig("parallel_armijo", M=15), stop_rule="grad", gtol=1e-8)
res = conjugate(f, f.zeros(), Y, np.zeros_like(Y), cfg)
print("lbfgs: max error %.2e, mean iterations %.1f" % (np.abs(res.x_star - exact).max(), res.iters.mean()))

###############################################################################
# Adam with a cosine-decayed step size needs many more iterations.  Each
# Adam step moves a coordinate by about the step size, so minimizers far from
# the start take long to reach.

cfg = SolverConfig("adam", max_iter=2000, stop_rule="grad", gtol=1e-4)
res = conjugate(f, f.zeros(), Y, np.zeros_like(Y), cfg)
print("adam:  max error %.2e, mean iterations %.1f" % (np.abs(res.x_star - exact).max(), res.iters.mean()))

###############################################################################
# Warm starts matter: a neural potential, solved from zero and from a
# rough guess close to the answer.

g = icnn(2, (32, 32))
theta = init_params(g, rng)
Y2 = rng.normal(size=(256, 2))
ref = conjugate(g, theta, Y2, Y2, synthetic_mode(stop_rule="grad", gtol=1e-8))
cold = conjugate(g, theta, Y2, np.zeros_like(Y2), synthetic_mode())
warm = conjugate(g, theta, Y2, ref.x_star + 0.05 * rng.normal(size=Y2.shape), synthetic_mode())
print("icnn cold start: %.1f iterations, warm start: %.1f" % (cold.iters.mean(), warm.iters.mean()))
print("conjugate values agree to %.1e" % np.abs(warm.conjugate_values - ref.conjugate_values).max())
