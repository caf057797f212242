"""
Natural gradient against Euclidean gradients with Adam
=======================================================

Count the iterations each method needs to bring KL(q || posterior) under 0.1
on the conjugate target, then look at how a plain Euclidean step with a
decaying rate and the score-function estimator fare.
"""

import numpy as np

from natvi import GaussianApprox, RunConfig, StepSchedule
from natvi.model import make_conjugate_gaussian
from natvi.optim import compare_ng_adam, iterations_to_kl

rng = np.random.default_rng(2024)
X = rng.standard_normal((20, 2))
y = X @ np.array([1.0, -0.5]) + rng.standard_normal(20)
model, posterior = make_conjugate_gaussian(np.zeros(2), np.eye(2), X, 1.0, y)
q0 = GaussianApprox.isotropic(2, 0.1)

res = compare_ng_adam(model, posterior, q0, seed=42)
print("natural gradient, rate 0.05 :", res["natgrad_cholesky"], "iterations")
print("Euclidean + Adam, rate 0.01 :", res["euclid_adam"], "iterations")
print("ratio (Adam / natural)      :", round(res["ratio"], 2))

# The iteration counts move with the seed; a handful of seeds gives a feel
# for the spread.
for seed in range(5):
    r = compare_ng_adam(model, posterior, q0, seed=seed)
    print(f"seed {seed}: natural {r['natgrad_cholesky']:5}  adam {r['euclid_adam']:5}")

# Robbins-Monro steps on the raw reparametrisation gradient.
rm = RunConfig("euclid-reparam", StepSchedule("robbins-monro", 0.02, 0.001),
               iterations=5000, seed=42, eval_every=5000, eval_samples=2)
print("Euclidean + Robbins-Monro   :", iterations_to_kl(rm, model, q0, posterior))

# The score-function estimator needs no model gradients but is much noisier;
# with the same budget it may not get there at all (None).
sf = RunConfig("score", StepSchedule("robbins-monro", 0.002, 0.001), iterations=5000,
               samples_per_iter=10, seed=42, eval_every=5000, eval_samples=2)
print("score function, 10 draws    :", iterations_to_kl(sf, model, q0, posterior))
