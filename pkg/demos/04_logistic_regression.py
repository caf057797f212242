"""
Gaussian approximation for Bayesian logistic regression
========================================================

The logistic posterior is not Gaussian, so there is no exact answer to
converge to. We compare the two natural-gradient estimators and check the
fitted mean against a Laplace approximation at the posterior mode.
"""

import numpy as np
from scipy import optimize

from natvi import GaussianApprox, RunConfig, StepSchedule, run_sga
from natvi.model import make_logistic_regression

rng = np.random.default_rng(7)
X = rng.standard_normal((100, 3))
theta_true = np.array([0.5, -1.0, 1.5])
labels = (rng.random(100) < 1 / (1 + np.exp(-X @ theta_true))).astype(float)
model = make_logistic_regression(X, labels, prior_precision=1.0)

# Laplace approximation: mode and inverse negative Hessian.
mode = optimize.minimize(lambda t: -model.log_joint(t), np.zeros(3),
                         jac=lambda t: -model.grad_log_joint(t)).x
laplace_cov = np.linalg.inv(-model.hessian(mode))
print("posterior mode   ", np.round(mode, 3))
print("Laplace sds      ", np.round(np.sqrt(np.diag(laplace_cov)), 3))

q0 = GaussianApprox.isotropic(3, 0.1)
runs = {
    "natgrad-cholesky": RunConfig("natgrad-cholesky",
                                  StepSchedule("robbins-monro", 0.05, 0.001),
                                  iterations=5000, seed=42, eval_every=1000),
    # the natural-parameter step also uses the Hessian of log p
    "natgrad-natural": RunConfig("natgrad-natural",
                                 StepSchedule("robbins-monro", 0.05, 0.001),
                                 iterations=5000, seed=42, eval_every=1000),
}
for name, config in runs.items():
    q, trace = run_sga(config, model, q0)
    print(f"{name:17s} mean {np.round(q.mean, 3)}  sds "
          f"{np.round(np.sqrt(np.diag(q.cov)), 3)}  ELBO {trace[-1].elbo:.3f}")
