"""
Checking the Fisher information of the Cholesky parametrisation
================================================================

The closed-form natural gradient rests on the Fisher matrix of
(mu, vech C) and its inverse. Here we check both numerically: against the
covariance of simulated scores, and against an explicit matrix product.
"""

import numpy as np

from natvi import gauss_vi as gv
from natvi.model import make_conjugate_gaussian

rng = np.random.default_rng(0)
C = np.array([[1.2, 0.0, 0.0], [0.4, 0.7, 0.0], [-0.3, 0.2, 0.9]])
q = gv.GaussianApprox([0.5, -1.0, 0.0], C)

F = gv.fisher_matrix(q)
print("Fisher matrix is", F.shape, "for d = 3")

# The Fisher matrix is the covariance of the score of log q.
n = 50_000
scores = np.array([np.concatenate(gv.score_vector(q, gv.sample_reparam(q, z)))
                   for z in rng.standard_normal((n, 3))])
mc_fisher = scores.T @ scores / n
se = scores.T ** 2 @ scores ** 2 / n - mc_fisher ** 2
print("largest deviation in standard errors:",
      np.max(np.abs(mc_fisher - F) / np.sqrt(se / n)))

# The closed-form inverse.
print("max |F F^-1 - I|    =", np.abs(F @ gv.fisher_inverse(q) - np.eye(9)).max())

# The natural gradient never forms F^-1: it is Sigma grad h for the mean and
# C (bar(G2) - dg(bar(G2))/2) for the factor, with G2 = C^T bar(grad h z^T).
model, _ = make_conjugate_gaussian(np.zeros(3), np.eye(3), rng.standard_normal((5, 3)),
                                   1.0, rng.standard_normal(5))
z = rng.standard_normal(3)
closed = gv.natural_grad_cholesky(q, model, z).as_vector()
explicit = gv.fisher_inverse(q) @ gv.euclidean_grad(q, model, z).as_vector()
print("closed form vs F^-1 x Euclidean:", np.abs(closed - explicit).max())
