"""
Amortization losses
===================

An amortizer predicts conjugate solutions.  It can be trained on the
conjugate objective itself, on the first-order residual, or by regressing
onto solver output.  Here all three are fit on one fixed potential and we
compare how close each prediction gets to the true minimizer.
"""
import numpy as np

from w2conj.amortization import amortization_loss
from w2conj.conjugate import conjugate, synthetic_mode
from w2conj.optim import Adam
from w2conj.potentials import AmortModel, icnn, init_nn, init_params

rng = np.random.default_rng(1)
f = icnn(2, (32, 32))
theta = init_params(f, rng)
tight = synthetic_mode(stop_rule="grad", gtol=1e-8)

Y_test = rng.normal(size=(1024, 2))
X_test = conjugate(f, theta, Y_test, Y_test, tight).x_star
print("%-10s  mean |prediction - minimizer| = %.4f"
      % ("identity", np.linalg.norm(Y_test - X_test, axis=1).mean()))

for kind in ("objective", "cycle", "regression"):
    amort = AmortModel(init_nn(2, (32, 32)), "direct")
    phi = amort.net.zeros()
    opt = Adam(lr=3e-3)
    state = opt.init(phi.values)
    for step in range(1500):
        Y = rng.normal(size=(256, 2))
        X_star = conjugate(f, theta, Y, amort.predict(phi, Y), synthetic_mode()).x_star
        loss = amortization_loss(kind, f, theta, amort, phi, Y, X_star=X_star)
        values, state = opt.update(phi.values, loss.grad_phi.values, state)
        phi = phi.with_values(values)
    err = np.linalg.norm(amort.predict(phi, Y_test) - X_test, axis=1)
    print("%-10s  mean |prediction - minimizer| = %.4f" % (kind, err.mean()))
