"""
Conjugate landscapes and the grid oracle
========================================

``J(x; y) = f(x) - <x, y>`` is convex in ``x``.  The landscape export masks
every cell above ``J(y; y)``, which leaves the region where the solver
improved on the trivial guess ``x = y``.  A brute-force grid minimum
checks the solver.
"""
import os

import numpy as np

from w2conj import svg
from w2conj.conjugate import conjugate, synthetic_mode
from w2conj.evaluation import grid_conjugate_oracle, landscape_export
from w2conj.potentials import icnn, init_params

out = os.environ.get("W2CONJ_OUTPUT_ROOT", "runs")
os.makedirs(out, exist_ok=True)

f = icnn(2, (32, 32), "elu")
theta = init_params(f, 3, scale=3.0)
fun = lambda x: f(theta, x)
y = np.array([1.5, -0.5])

res = conjugate(f, theta, y[None], y[None], synthetic_mode())
x_grid, j_grid = grid_conjugate_oracle(fun, y, resolution=401)
print("solver   x = %s  J = %.5f" % (res.x_star[0], res.J_values[0]))
print("grid     x = %s  J = %.5f" % (x_grid, j_grid))

grid = landscape_export(fun, y, ((-4, 4), (-4, 4)), 121, res.x_star[0])
print("%.1f%% of the cells lie below J(y; y)" % (100 * (1 - grid.mask.mean())))
svg.write_svg(os.path.join(out, "demo_landscape.svg"), svg.contour_svg(
    grid.axes[0], grid.axes[1], grid.J, grid.mask, title="J(x; y)",
    markers=[(y, "y"), (res.x_star[0], "solver")]))
