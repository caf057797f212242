"""Target densities log p(y, theta) with analytic derivatives.

A :class:`TargetModel` only covers the log-joint part of
``h(theta) = log p(y, theta) - log q(theta)``; the approximation modules add
the ``-log q`` part because it depends on the current variational density.
"""
import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.special import expit

__all__ = [
    "TargetModel",
    "ExactGaussianPosterior",
    "MissingHessianError",
    "NonFiniteError",
    "make_conjugate_gaussian",
    "make_logistic_regression",
    "make_bimodal_target",
    "without_hessian",
    "fd_gradient",
    "fd_jacobian",
    "fd_hessian",
    "check_model_derivatives",
    "load_regression_csv",
]

LOG_2PI = np.log(2.0 * np.pi)


class MissingHessianError(ValueError):
    """Raised when an estimator needs second derivatives the model lacks."""


class NonFiniteError(FloatingPointError):
    """A function evaluation returned NaN or inf."""


@dataclass(frozen=True)
class TargetModel:
    dim: int
    log_joint: Callable[[np.ndarray], float]
    grad_log_joint: Callable[[np.ndarray], np.ndarray]
    hessian_log_joint: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "target"

    @property
    def has_hessian(self):
        return self.hessian_log_joint is not None

    def hessian(self, theta):
        if self.hessian_log_joint is None:
            raise MissingHessianError(
                f"model {self.name!r} provides no Hessian of log p(y, theta)")
        return self.hessian_log_joint(theta)


@dataclass(frozen=True)
class ExactGaussianPosterior:
    """Ground-truth Gaussian posterior N(mean, cov) for conjugate targets."""
    mean: np.ndarray
    cov: np.ndarray
    log_evidence: Optional[float] = None

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match the mean")
        _spd_cholesky(cov, "posterior covariance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.size


def _spd_cholesky(S, what):
    if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise ValueError(f"{what} is not symmetric")
    try:
        return linalg.cholesky(S, lower=True)
    except linalg.LinAlgError:
        raise ValueError(f"{what} is not positive definite") from None


def without_hessian(model):
    """Copy of ``model`` that advertises first derivatives only."""
    return TargetModel(model.dim, model.log_joint, model.grad_log_joint,
                       None, model.name)


# ---------------------------------------------------------------------------
# built-in targets
# ---------------------------------------------------------------------------

def make_conjugate_gaussian(prior_mean, prior_cov, design_matrix=None,
                            noise_var=1.0, observations=None):
    """Bayesian linear regression y = X theta + e, e ~ N(0, noise_var I),
    theta ~ N(prior_mean, prior_cov).

    Returns the target model and its exact posterior (including the log
    marginal likelihood, so ELBO estimates can be checked against it).
    """
    mu0 = np.atleast_1d(np.asarray(prior_mean, dtype=float))
    d = mu0.size
    S0 = np.atleast_2d(np.asarray(prior_cov, dtype=float))
    if S0.shape != (d, d):
        raise ValueError(f"prior covariance must be {d}x{d}")
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    L0 = _spd_cholesky(S0, "prior covariance")
    if design_matrix is None or observations is None or np.size(observations) == 0:
        X = np.zeros((0, d))
        y = np.zeros(0)
    else:
        X = np.atleast_2d(np.asarray(design_matrix, dtype=float))
        y = np.asarray(observations, dtype=float).ravel()
        if X.shape != (y.size, d):
            raise ValueError(
                f"design matrix shape {X.shape} does not conform with "
                f"{y.size} observations and d={d}")

    P0 = linalg.cho_solve((L0, True), np.eye(d))
    post_prec = P0 + X.T @ X / noise_var
    post_cov = linalg.cho_solve((linalg.cholesky(post_prec, lower=True), True), np.eye(d))
    post_cov = 0.5 * (post_cov + post_cov.T)
    post_mean = post_cov @ (P0 @ mu0 + X.T @ y / noise_var)

    n = y.size
    logdet0 = 2.0 * np.sum(np.log(np.diag(L0)))
    const = (-0.5 * (d + n) * LOG_2PI - 0.5 * logdet0
             - 0.5 * n * np.log(noise_var))

    def log_joint(theta):
        theta = np.asarray(theta, dtype=float)
        r0 = linalg.solve_triangular(L0, theta - mu0, lower=True)
        r = y - X @ theta
        return const - 0.5 * (r0 @ r0) - 0.5 * (r @ r) / noise_var

    def grad_log_joint(theta):
        theta = np.asarray(theta, dtype=float)
        return -P0 @ (theta - mu0) + X.T @ (y - X @ theta) / noise_var

    neg_prec = -post_prec

    def hessian_log_joint(theta):
        return neg_prec.copy()

    # y ~ N(X mu0, X S0 X^T + noise_var I)
    if n:
        marg_cov = X @ S0 @ X.T + noise_var * np.eye(n)
        Lm = linalg.cholesky(marg_cov, lower=True)
        rm = linalg.solve_triangular(Lm, y - X @ mu0, lower=True)
        log_evidence = (-0.5 * n * LOG_2PI - np.sum(np.log(np.diag(Lm)))
                        - 0.5 * rm @ rm)
    else:
        log_evidence = 0.0

    model = TargetModel(d, log_joint, grad_log_joint, hessian_log_joint,
                        name="conjugate-gaussian")
    return model, ExactGaussianPosterior(post_mean, post_cov, float(log_evidence))


def make_logistic_regression(design_matrix, labels, prior_precision=1.0):
    """Logistic regression with an isotropic N(0, I/prior_precision) prior."""
    X = np.atleast_2d(np.asarray(design_matrix, dtype=float))
    y = np.asarray(labels, dtype=float).ravel()
    if y.size == 0 or X.shape[0] == 0:
        raise ValueError("logistic regression needs at least one observation")
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} design rows but {y.size} labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if prior_precision <= 0:
        raise ValueError("prior precision must be positive")
    tau = float(prior_precision)
    d = X.shape[1]
    const = 0.5 * d * (np.log(tau) - LOG_2PI)

    def log_joint(theta):
        eta = X @ theta
        return float(y @ eta - np.sum(np.logaddexp(0.0, eta))
                     - 0.5 * tau * theta @ theta + const)

    def grad_log_joint(theta):
        return X.T @ (y - expit(X @ theta)) - tau * theta

    def hessian_log_joint(theta):
        p = expit(X @ theta)
        return -(X.T * (p * (1.0 - p))) @ X - tau * np.eye(d)

    return TargetModel(d, log_joint, grad_log_joint, hessian_log_joint,
                       name="logistic-regression")


def make_bimodal_target(centers, scales, weights):
    """Normalised Gaussian-mixture density sum_k w_k N(center_k, diag(scale_k^2)).

    ``scales`` holds one standard deviation per component (isotropic) or one
    vector per component (axis-aligned). Despite the name any number of
    components works; one component gives a plain Gaussian.
    """
    M = np.asarray(centers, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    K, d = M.shape
    s = np.asarray(scales, dtype=float)
    if s.ndim == 0:
        s = np.full((K, d), float(s))
    s = np.broadcast_to(s.reshape(K, -1), (K, d)).copy()
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != K:
        raise ValueError(f"{K} centers but {w.size} weights")
    if np.any(s <= 0):
        raise ValueError("component scales must be positive")
    if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be positive and sum to one")
    prec = 1.0 / s**2
    log_norm = np.log(w) - 0.5 * d * LOG_2PI - np.sum(np.log(s), axis=1)

    def _parts(theta):
        diff = np.asarray(theta, dtype=float)[None, :] - M
        comp = log_norm - 0.5 * np.sum(diff**2 * prec, axis=1)
        lp = np.logaddexp.reduce(comp)
        return diff, comp, lp

    def log_joint(theta):
        return float(_parts(theta)[2])

    def grad_log_joint(theta):
        diff, comp, lp = _parts(theta)
        r = np.exp(comp - lp)
        return -(r[:, None] * diff * prec).sum(axis=0)

    def hessian_log_joint(theta):
        diff, comp, lp = _parts(theta)
        r = np.exp(comp - lp)
        g = -diff * prec
        gbar = r @ g
        H = -np.diag(r @ prec) + (g.T * r) @ g
        return H - np.outer(gbar, gbar)

    return TargetModel(d, log_joint, grad_log_joint, hessian_log_joint,
                       name="gaussian-mixture")


# ---------------------------------------------------------------------------
# finite-difference oracles
# ---------------------------------------------------------------------------

def _steps(theta, step):
    return step * (1.0 + np.abs(theta))


def _eval(f, x, coord):
    val = f(x)
    if not np.all(np.isfinite(val)):
        raise NonFiniteError(f"non-finite function value when perturbing coordinate {coord}")
    return val


def fd_gradient(f, theta, step=1e-5):
    """Central differences with per-coordinate step ``step * (1 + |theta_i|)``."""
    theta = np.asarray(theta, dtype=float)
    hs = _steps(theta, step)
    g = np.empty(theta.size)
    for i, h in enumerate(hs):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (_eval(f, theta + e, i) - _eval(f, theta - e, i)) / (2 * h)
    return g


def fd_jacobian(g, theta, step=1e-5):
    """Central-difference Jacobian of a vector function (rows = outputs)."""
    theta = np.asarray(theta, dtype=float)
    hs = _steps(theta, step)
    cols = []
    for i, h in enumerate(hs):
        e = np.zeros_like(theta)
        e[i] = h
        cols.append((_eval(g, theta + e, i) - _eval(g, theta - e, i)) / (2 * h))
    return np.column_stack(cols)


def fd_hessian(f, theta, step=1e-4):
    """Second-order central differences of scalar ``f``, symmetrised.

    The default step is larger than for gradients: the error of a second
    difference scales with eps / step^2.
    """
    theta = np.asarray(theta, dtype=float)
    d = theta.size
    hs = _steps(theta, step)
    f0 = _eval(f, theta, "none")
    H = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = hs[i]
        H[i, i] = (_eval(f, theta + ei, i) - 2 * f0 + _eval(f, theta - ei, i)) / hs[i]**2
        for j in range(i):
            ej = np.zeros(d)
            ej[j] = hs[j]
            H[i, j] = (_eval(f, theta + ei + ej, (i, j)) - _eval(f, theta + ei - ej, (i, j))
                       - _eval(f, theta - ei + ej, (i, j))
                       + _eval(f, theta - ei - ej, (i, j))) / (4 * hs[i] * hs[j])
            H[j, i] = H[i, j]
    return 0.5 * (H + H.T)


def check_model_derivatives(model, points, rtol=1e-5):
    """Worst relative error of the analytic gradient (and Hessian) against
    finite differences over ``points``. Returns ``(grad_err, hess_err)``;
    ``hess_err`` is None for models without a Hessian."""
    grad_err = 0.0
    hess_err = None if model.hessian_log_joint is None else 0.0
    for theta in points:
        g = model.grad_log_joint(theta)
        g_fd = fd_gradient(model.log_joint, theta)
        grad_err = max(grad_err, _rel_err(g, g_fd))
        if hess_err is not None:
            H = model.hessian_log_joint(theta)
            H_fd = fd_jacobian(model.grad_log_joint, theta)
            hess_err = max(hess_err, _rel_err(H, 0.5 * (H_fd + H_fd.T)),
                           float(np.max(np.abs(H - H.T))))
    return grad_err, hess_err


def _rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


# ---------------------------------------------------------------------------
# data ingestion
# ---------------------------------------------------------------------------

def load_regression_csv(path, delimiter=","):
    """Read a delimited file with one observation per row and the response in
    the last column. A first row with no numeric fields is taken as a header.

    Returns ``(X, y)``.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter=delimiter), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if not rows and lineno == 1 and not any(_is_number(c) for c in row):
                continue
            values = []
            for col, cell in enumerate(row, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: row {lineno}, column {col}: cannot parse {cell!r} as a number"
                    ) from None
            if rows and len(values) != len(rows[0]):
                raise ValueError(
                    f"{path}: row {lineno}: expected {len(rows[0])} columns, got {len(values)}")
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no observations")
    if len(rows[0]) < 2:
        raise ValueError(f"{path}: need at least one covariate column and a response")
    data = np.array(rows)
    return data[:, :-1], data[:, -1]


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True
