"""Gaussian variational approximation N(mu, C C^T) with a lower-triangular
Cholesky factor C.

Gradient estimators (all single-draw; average several for lower variance):

* :func:`score_function_grad`   -- log-derivative trick
* :func:`euclidean_grad`        -- reparametrisation, theta = C z + mu
* :func:`natural_grad_cholesky` -- closed-form natural gradient in (mu, vech C),
  first derivatives of h only
* :func:`natural_grad_natural_params` -- natural gradient in the Gaussian
  natural parameters, needs the Hessian of log p(y, theta)

The explicit Fisher matrix and its inverse are built densely for diagnostics
only; the update paths never form d^2 x d^2 operators.
"""
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import matcalc as mc
from .model import LOG_2PI, ExactGaussianPosterior, MissingHessianError

__all__ = [
    "GaussianApprox",
    "GradientEstimate",
    "NotPositiveDefiniteError",
    "ESTIMATOR_KINDS",
    "sample_reparam",
    "log_q",
    "grad_log_q",
    "h_value",
    "grad_h",
    "hess_h",
    "euclidean_grad",
    "score_function_grad",
    "score_vector",
    "fisher_matrix",
    "fisher_inverse",
    "natural_grad_cholesky",
    "natural_grad_natural_params",
    "cholesky_direction",
    "apply_cholesky_step",
    "apply_euclidean_step",
    "apply_natural_param_step",
    "step_algorithm1",
    "step_logdiag",
    "step_natural_params",
    "elbo_estimate",
    "gaussian_kl",
    "conjugate_elbo",
]

ESTIMATOR_KINDS = ("score", "euclid-reparam", "natgrad-cholesky", "natgrad-natural")


class NotPositiveDefiniteError(ValueError):
    """An updated precision/covariance matrix lost positive definiteness."""


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GaussianApprox:
    """Immutable snapshot of N(mean, chol @ chol.T)."""
    mean: np.ndarray
    chol: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        chol = np.atleast_2d(np.asarray(self.chol, dtype=float))
        d = mean.size
        if mean.ndim != 1 or chol.shape != (d, d):
            raise ValueError(f"mean of length {d} needs a {d}x{d} Cholesky factor, "
                             f"got {chol.shape}")
        if np.any(np.triu(chol, 1) != 0.0):
            raise ValueError("Cholesky factor must be lower triangular")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(chol))):
            raise ValueError("non-finite variational parameters")
        object.__setattr__(self, "mean", _readonly(mean))
        object.__setattr__(self, "chol", _readonly(chol))

    @classmethod
    def isotropic(cls, dim, scale=0.1, mean=None):
        mean = np.zeros(dim) if mean is None else mean
        return cls(mean, scale * np.eye(dim))

    @classmethod
    def from_cov(cls, mean, cov):
        return cls(mean, linalg.cholesky(np.atleast_2d(cov), lower=True))

    @property
    def dim(self):
        return self.mean.size

    @property
    def cov(self):
        return self.chol @ self.chol.T

    @property
    def precision(self):
        Cinv = self.chol_inverse()
        return Cinv.T @ Cinv

    def chol_inverse(self):
        _check_nonsingular(self.chol)
        return linalg.solve_triangular(self.chol, np.eye(self.dim), lower=True)

    def natural_params(self):
        """(Sigma^{-1} mu, -1/2 D^T vec(Sigma^{-1}))."""
        P = self.precision
        return P @ self.mean, -0.5 * mc.apply_duplication_transpose(mc.vec(P), self.dim)

    def to_vector(self):
        return np.concatenate([self.mean, mc.vech(self.chol)])

    def __eq__(self, other):
        if not isinstance(other, GaussianApprox):
            return NotImplemented
        return (np.array_equal(self.mean, other.mean)
                and np.array_equal(self.chol, other.chol))

    __hash__ = None


@dataclass(frozen=True)
class GradientEstimate:
    """Paired (mean block, vech block) gradient estimate.

    For ``natgrad-natural`` the blocks are the natural-parameter directions
    (for Sigma^{-1} mu and -1/2 D^T vec(Sigma^{-1})); otherwise they are with
    respect to (mu, vech C).
    """
    mean_block: np.ndarray
    cholvech_block: np.ndarray
    kind: str
    sample_count: int = 1

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        m = np.asarray(self.mean_block, dtype=float)
        v = np.asarray(self.cholvech_block, dtype=float)
        if v.size != mc.half_dim(m.size):
            raise ValueError("vech block length does not match the mean block")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(v))):
            raise FloatingPointError("non-finite gradient estimate")
        object.__setattr__(self, "mean_block", m)
        object.__setattr__(self, "cholvech_block", v)

    @property
    def dim(self):
        return self.mean_block.size

    def as_vector(self):
        return np.concatenate([self.mean_block, self.cholvech_block])

    @classmethod
    def average(cls, estimates):
        """Mean of independent estimates, reduced in the given order."""
        estimates = list(estimates)
        first = estimates[0]
        m = np.sum([e.mean_block for e in estimates], axis=0) / len(estimates)
        v = np.sum([e.cholvech_block for e in estimates], axis=0) / len(estimates)
        return cls(m, v, first.kind, sum(e.sample_count for e in estimates))


def _check_nonsingular(C):
    if np.any(np.diag(C) == 0.0):
        raise np.linalg.LinAlgError("Cholesky factor has a zero on its diagonal")


def _check_z(q, z):
    z = np.asarray(z, dtype=float)
    if z.shape != (q.dim,):
        raise ValueError(f"expected a draw of length {q.dim}, got shape {z.shape}")
    return z


# ---------------------------------------------------------------------------
# density and h
# ---------------------------------------------------------------------------

def sample_reparam(q, z):
    """theta = C z + mu."""
    z = _check_z(q, z)
    return q.chol @ z + q.mean


def _standardise(q, theta):
    _check_nonsingular(q.chol)
    return linalg.solve_triangular(q.chol, np.asarray(theta, dtype=float) - q.mean,
                                   lower=True)


def log_q(q, theta):
    z = _standardise(q, theta)
    return float(-0.5 * q.dim * LOG_2PI - np.sum(np.log(np.abs(np.diag(q.chol))))
                 - 0.5 * z @ z)


def grad_log_q(q, theta):
    """-C^{-T} C^{-1} (theta - mu) by two triangular solves."""
    z = _standardise(q, theta)
    return -linalg.solve_triangular(q.chol, z, lower=True, trans="T")


def h_value(q, model, theta):
    return model.log_joint(theta) - log_q(q, theta)


def grad_h(q, model, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (q.dim,):
        raise ValueError(f"theta must have length {q.dim}")
    return model.grad_log_joint(theta) - grad_log_q(q, theta)


def hess_h(q, model, theta):
    """Hessian of log p(y, theta) plus Sigma^{-1}; needs the model's Hessian."""
    return model.hessian(theta) + q.precision


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def euclidean_grad(q, model, z):
    """Reparametrisation estimate (grad_theta h, vech(bar(G1))), G1 = grad h z^T."""
    z = _check_z(q, z)
    g = grad_h(q, model, sample_reparam(q, z))
    rows, cols = mc.vech_indices(q.dim)
    return GradientEstimate(g, g[rows] * z[cols], "euclid-reparam")


def score_vector(q, theta):
    """grad_lambda log q(theta) for lambda = (mu, vech C)."""
    z = _standardise(q, theta)
    mean_part = linalg.solve_triangular(q.chol, z, lower=True, trans="T")
    M = np.outer(z, z)
    M[np.diag_indices(q.dim)] -= 1.0
    chol_part = mc.vech(linalg.solve_triangular(q.chol, M, lower=True, trans="T"))
    return mean_part, chol_part


def score_function_grad(q, model, theta):
    """grad_lambda log q(theta) * h(theta); no derivatives of the model."""
    theta = np.asarray(theta, dtype=float)
    s_mean, s_chol = score_vector(q, theta)
    h = h_value(q, model, theta)
    return GradientEstimate(s_mean * h, s_chol * h, "score")


def fisher_matrix(q):
    """Dense Fisher information of (mu, vech C):
    diag(Sigma^{-1}, 2 L (I kron C^{-T}) N (I kron C^{-1}) L^T)."""
    d = q.dim
    Cinv = q.chol_inverse()
    L = mc.elimination_matrix(d)
    I = np.eye(d)
    lower = 2.0 * L @ np.kron(I, Cinv.T) @ mc.n_matrix(d) @ np.kron(I, Cinv) @ L.T
    return linalg.block_diag(Cinv.T @ Cinv, lower)


def fisher_inverse(q):
    """Dense inverse Fisher:
    diag(Sigma, 1/2 L (I kron C) L^T (L N L^T)^{-1} L (I kron C^T) L^T)."""
    d = q.dim
    _check_nonsingular(q.chol)
    C = q.chol
    L = mc.elimination_matrix(d)
    I = np.eye(d)
    LNLt_inv = np.linalg.inv(L @ mc.n_matrix(d) @ L.T)
    lower = 0.5 * (L @ np.kron(I, C) @ L.T @ LNLt_inv @ L @ np.kron(I, C.T) @ L.T)
    return linalg.block_diag(q.cov, lower)


def cholesky_direction(C, gbar1):
    """C (bar(G2) - dg(bar(G2))/2) with G2 = C^T bar(G1); lower triangular."""
    G2 = np.tril(C.T @ gbar1)
    G2[np.diag_indices_from(G2)] *= 0.5
    return C @ G2


def natural_grad_cholesky(q, model, z):
    """Closed-form natural gradient (Sigma grad h, vech[C{bar(G2) - dg(bar(G2))/2}])."""
    z = _check_z(q, z)
    g = grad_h(q, model, sample_reparam(q, z))
    C = q.chol
    gbar1 = np.tril(np.outer(g, z))
    return GradientEstimate(C @ (C.T @ g), mc.vech(cholesky_direction(C, gbar1)),
                            "natgrad-cholesky")


def natural_grad_natural_params(q, model, theta):
    """(grad h - hess h mu, 1/2 D^T vec(hess h)) for the natural parameters."""
    if not model.has_hessian:
        raise MissingHessianError(
            f"estimator 'natgrad-natural' needs a Hessian, model {model.name!r} has none")
    theta = np.asarray(theta, dtype=float)
    g = grad_h(q, model, theta)
    H = hess_h(q, model, theta)
    return GradientEstimate(g - H @ q.mean,
                            0.5 * mc.apply_duplication_transpose(mc.vec(H), q.dim),
                            "natgrad-natural")


# ---------------------------------------------------------------------------
# updates
# ---------------------------------------------------------------------------

def _finite_or_raise(what, *arrays, context=""):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite {what}{context}")


def apply_cholesky_step(q, est, rho, log_diag=False, context=""):
    """lambda + rho * natural gradient; with ``log_diag`` the diagonal of C is
    stepped on the log scale with the J(C) Hadamard mask (diag C, ones below)."""
    if est.kind != "natgrad-cholesky":
        raise ValueError(f"expected a natgrad-cholesky estimate, got {est.kind!r}")
    with np.errstate(over="ignore", invalid="ignore"):
        mean, chol = _cholesky_update(q, est, rho, log_diag)
    _finite_or_raise("variational parameters", mean, chol, context=context)
    return GaussianApprox(mean, chol)


def _cholesky_update(q, est, rho, log_diag):
    mean = q.mean + rho * est.mean_block
    step = mc.vech_to_lower(est.cholvech_block, q.dim)
    if log_diag:
        C = q.chol
        diag = np.diag(C)
        if np.any(diag <= 0):
            raise ValueError("log-diagonal mode needs a positive Cholesky diagonal")
        # J(C) is diag(C) on the diagonal and one elsewhere
        new_log_diag = np.log(diag) + rho * diag * np.diag(step)
        chol = np.tril(C + rho * step, -1) + np.diag(np.exp(new_log_diag))
    else:
        chol = q.chol + rho * step
    return mean, chol


def apply_euclidean_step(q, step_mean, step_vech, context=""):
    """Add a precomputed (already scaled) step to (mu, vech C)."""
    mean = q.mean + step_mean
    chol = q.chol + mc.vech_to_lower(step_vech, q.dim)
    _finite_or_raise("variational parameters", mean, chol, context=context)
    return GaussianApprox(mean, chol)


def apply_natural_param_step(q, grad_h_vec, hess_h_mat, rho, context=""):
    """Sigma^{-1} <- Sigma^{-1} - rho hess_h, then mu <- mu + rho Sigma_new grad_h."""
    new_prec = q.precision - rho * hess_h_mat
    new_prec = 0.5 * (new_prec + new_prec.T)
    _finite_or_raise("precision update", new_prec, context=context)
    try:
        R = linalg.cholesky(new_prec, lower=True)
    except linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            f"updated precision is not positive definite{context}") from None
    mean = q.mean + rho * linalg.cho_solve((R, True), grad_h_vec)
    # Sigma = R^{-T} R^{-1}; its lower Cholesky factor comes from a fresh factorisation
    Rinv = linalg.solve_triangular(R, np.eye(q.dim), lower=True)
    cov = Rinv.T @ Rinv
    try:
        chol = linalg.cholesky(0.5 * (cov + cov.T), lower=True)
    except linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            f"updated covariance is not positive definite{context}") from None
    _finite_or_raise("variational parameters", mean, chol, context=context)
    return GaussianApprox(mean, chol)


def step_algorithm1(q, model, z, rho):
    """One natural-gradient step on (mu, C) from a single draw z."""
    if rho < 0:
        raise ValueError("step size must be nonnegative")
    return apply_cholesky_step(q, natural_grad_cholesky(q, model, z), rho)


def step_logdiag(q, model, z, rho):
    """As :func:`step_algorithm1` with diag(C) kept positive via log(C_ii)."""
    if rho < 0:
        raise ValueError("step size must be nonnegative")
    return apply_cholesky_step(q, natural_grad_cholesky(q, model, z), rho, log_diag=True)


def step_natural_params(q, model, theta, rho):
    """Natural-parameter step from a single draw theta (needs a Hessian)."""
    if not model.has_hessian:
        raise MissingHessianError(
            f"estimator 'natgrad-natural' needs a Hessian, model {model.name!r} has none")
    return apply_natural_param_step(q, grad_h(q, model, theta), hess_h(q, model, theta), rho)


# ---------------------------------------------------------------------------
# objectives and diagnostics
# ---------------------------------------------------------------------------

def elbo_estimate(q, model, n_samples, rng):
    """Monte-Carlo mean of h over reparametrised draws and its standard error."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    Z = rng.standard_normal((n_samples, q.dim))
    hs = np.array([h_value(q, model, sample_reparam(q, z)) for z in Z])
    se = hs.std(ddof=1) / np.sqrt(n_samples) if n_samples > 1 else float("nan")
    return float(hs.mean()), float(se)


def gaussian_kl(q, ref):
    """KL(N(mu, C C^T) || N(ref.mean, ref.cov))."""
    if not isinstance(ref, ExactGaussianPosterior):
        ref = ExactGaussianPosterior(*ref)
    if ref.dim != q.dim:
        raise ValueError("dimension mismatch")
    Ls = linalg.cholesky(ref.cov, lower=True)
    A = linalg.solve_triangular(Ls, q.chol, lower=True)
    r = linalg.solve_triangular(Ls, ref.mean - q.mean, lower=True)
    logdet_ref = 2.0 * np.sum(np.log(np.diag(Ls)))
    logdet_q = 2.0 * np.sum(np.log(np.abs(np.diag(q.chol))))
    kl = 0.5 * (np.sum(A * A) + r @ r - q.dim + logdet_ref - logdet_q)
    return float(max(kl, 0.0))


def conjugate_elbo(q, posterior):
    """Exact ELBO for a conjugate target: log p(y) - KL(q || posterior)."""
    if posterior.log_evidence is None:
        raise ValueError("posterior carries no log evidence")
    return posterior.log_evidence - gaussian_kl(q, posterior)
