"""Finite mixture-of-Gaussians variational approximation.

Weights are parametrised by logits relative to the last component,
``logits[c] = log(pi_c / pi_K)``. Component densities are
:class:`~natvi.gauss_vi.GaussianApprox` snapshots, so every single-Gaussian
routine applies per component. With K = 1 each routine here performs the
same floating-point operations, on the same random stream, as its
single-Gaussian counterpart.
"""
import logging
from dataclasses import dataclass

import numpy as np

from . import gauss_vi as gv
from .model import MissingHessianError

__all__ = [
    "MixtureApprox",
    "mixture_density_parts",
    "log_weights",
    "mixture_log_density",
    "mixture_grad_log_density",
    "mixture_hess_log_density",
    "mixture_h",
    "mixture_grad_h",
    "sample_mixture",
    "logit_natural_grad",
    "apply_logit_update",
    "component_natparam_update",
    "component_cholesky_natgrad",
    "apply_component_cholesky_steps",
    "mixture_elbo_estimate",
    "joint_scores",
]

log = logging.getLogger(__name__)

MAX_HALVINGS = 10


@dataclass(frozen=True, eq=False)
class MixtureApprox:
    components: tuple
    logits: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a mixture needs at least one component")
        d = comps[0].dim
        if any(c.dim != d for c in comps):
            raise ValueError("all components must share one dimension")
        logits = np.asarray(self.logits, dtype=float).ravel()
        if logits.size != len(comps) - 1:
            raise ValueError(f"{len(comps)} components need {len(comps) - 1} logits")
        if not np.all(np.isfinite(logits)):
            raise ValueError("non-finite mixture logits")
        logits.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "logits", logits)

    @classmethod
    def from_weights(cls, components, weights):
        w = np.asarray(weights, dtype=float)
        return cls(components, np.log(w[:-1]) - np.log(w[-1]))

    @classmethod
    def initial(cls, dim, n_components, rng, scale=0.1, spread=1.0):
        """Means from N(0, spread^2 I), C = scale I, uniform weights."""
        comps = [gv.GaussianApprox.isotropic(dim, scale, spread * rng.standard_normal(dim))
                 for _ in range(n_components)]
        return cls(comps, np.zeros(n_components - 1))

    @property
    def n_components(self):
        return len(self.components)

    @property
    def dim(self):
        return self.components[0].dim

    @property
    def weights(self):
        return np.exp(log_weights(self))

    def __eq__(self, other):
        if not isinstance(other, MixtureApprox):
            return NotImplemented
        return (np.array_equal(self.logits, other.logits)
                and all(a == b for a, b in zip(self.components, other.components))
                and self.n_components == other.n_components)

    __hash__ = None


def log_weights(mix):
    full = np.append(mix.logits, 0.0)
    return full - np.logaddexp.reduce(full)


def _component_logs(mix, theta):
    return log_weights(mix) + np.array([gv.log_q(c, theta) for c in mix.components])


def mixture_density_parts(mix, theta):
    """(log q(theta), delta) with delta_c = q_c(theta) / q(theta), in log space."""
    log_comp = np.array([gv.log_q(c, theta) for c in mix.components])
    log_joint = log_weights(mix) + log_comp
    lq = np.logaddexp.reduce(log_joint)
    return float(lq), np.exp(log_comp - lq)


def mixture_log_density(mix, theta):
    return mixture_density_parts(mix, theta)[0]


def _posterior_weights(mix, theta):
    lj = _component_logs(mix, theta)
    return np.exp(lj - np.logaddexp.reduce(lj))


def mixture_grad_log_density(mix, theta):
    """sum_c r_c grad log q_c(theta), r_c = pi_c delta_c."""
    if mix.n_components == 1:
        return gv.grad_log_q(mix.components[0], theta)
    r = _posterior_weights(mix, theta)
    g = r[0] * gv.grad_log_q(mix.components[0], theta)
    for rc, comp in zip(r[1:], mix.components[1:]):
        g = g + rc * gv.grad_log_q(comp, theta)
    return g


def mixture_hess_log_density(mix, theta):
    """sum_c r_c (g_c g_c^T - P_c) - gbar gbar^T."""
    if mix.n_components == 1:
        return -mix.components[0].precision
    r = _posterior_weights(mix, theta)
    gs = [gv.grad_log_q(c, theta) for c in mix.components]
    gbar = sum(rc * g for rc, g in zip(r, gs))
    H = sum(rc * (np.outer(g, g) - c.precision) for rc, g, c in zip(r, gs, mix.components))
    return H - np.outer(gbar, gbar)


def mixture_h(mix, model, theta):
    return model.log_joint(theta) - mixture_log_density(mix, theta)


def mixture_grad_h(mix, model, theta):
    theta = np.asarray(theta, dtype=float)
    return model.grad_log_joint(theta) - mixture_grad_log_density(mix, theta)


def _mixture_hess_h(mix, model, theta):
    return model.hessian(theta) - mixture_hess_log_density(mix, theta)


def _draw_component(mix, rng):
    # K = 1 consumes no categorical draw so the stream matches a single Gaussian
    if mix.n_components == 1:
        return 0
    return int(rng.choice(mix.n_components, p=mix.weights))


def sample_mixture(mix, rng):
    """(theta, w): w ~ Categorical(pi), theta = C_w z + mu_w."""
    w = _draw_component(mix, rng)
    comp = mix.components[w]
    return gv.sample_reparam(comp, rng.standard_normal(comp.dim)), w


# ---------------------------------------------------------------------------
# weight updates
# ---------------------------------------------------------------------------

def logit_natural_grad(mix, model, theta, baseline=0.0):
    """(delta_c - delta_K)(h(theta) - baseline) for c = 1..K-1."""
    if mix.n_components == 1:
        return np.zeros(0)
    lq, delta = mixture_density_parts(mix, theta)
    h = model.log_joint(theta) - lq
    return (delta[:-1] - delta[-1]) * (h - baseline)


def apply_logit_update(mix, grad, rho):
    if rho < 0:
        raise ValueError("step size must be nonnegative")
    logits = mix.logits + rho * np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite mixture logits after update")
    return MixtureApprox(mix.components, logits)


# ---------------------------------------------------------------------------
# component updates
# ---------------------------------------------------------------------------

def component_natparam_update(mix, model, theta, rho, grad=None, hess=None):
    """Natural-parameter update of every component from one shared draw.

    Sigma_c^{-1} <- Sigma_c^{-1} - rho delta_c hess_h; mu_c <- mu_c + rho delta_c
    Sigma_c,new grad_h, with h against the full mixture density. ``grad`` and
    ``hess`` override the evaluated derivatives of h (e.g. averaged over
    several draws; then ``theta`` only sets the responsibilities).
    A step that breaks positive definiteness is retried with rho halved, up to
    ten times, after which the component is left unchanged.
    """
    if not model.has_hessian:
        raise MissingHessianError(
            f"estimator 'natgrad-natural' needs a Hessian, model {model.name!r} has none")
    theta = np.asarray(theta, dtype=float)
    _, delta = mixture_density_parts(mix, theta)
    g = mixture_grad_h(mix, model, theta) if grad is None else grad
    H = _mixture_hess_h(mix, model, theta) if hess is None else hess
    return _natparam_with_delta(mix, g, H, delta, rho)


def _natparam_with_delta(mix, g, H, delta, rho):
    new = []
    for c, (comp, dc) in enumerate(zip(mix.components, delta)):
        if dc == 0.0:
            new.append(comp)
            continue
        step = rho * dc
        for _ in range(MAX_HALVINGS + 1):
            try:
                new.append(gv.apply_natural_param_step(comp, g, H, step,
                                                       context=f" (component {c})"))
                break
            except gv.NotPositiveDefiniteError:
                step *= 0.5
        else:
            log.warning("component %d: precision update not positive definite after "
                        "%d halvings, step skipped", c, MAX_HALVINGS)
            new.append(comp)
    return MixtureApprox(new, mix.logits)


def component_cholesky_natgrad(mix, model, zs):
    """Per-component closed-form natural gradients in (mu_c, vech C_c), one
    standard-normal draw per component, h taken against the full mixture."""
    out = []
    for comp, z in zip(mix.components, zs):
        z = np.asarray(z, dtype=float)
        theta = gv.sample_reparam(comp, z)
        g = mixture_grad_h(mix, model, theta)
        C = comp.chol
        gbar1 = np.tril(np.outer(g, z))
        out.append(gv.GradientEstimate(C @ (C.T @ g),
                                       gv.mc.vech(gv.cholesky_direction(C, gbar1)),
                                       "natgrad-cholesky"))
    return out


def apply_component_cholesky_steps(mix, estimates, rho, log_diag=False, context=""):
    comps = [gv.apply_cholesky_step(comp, est, rho, log_diag=log_diag,
                                    context=f"{context} (component {c})")
             for c, (comp, est) in enumerate(zip(mix.components, estimates))]
    return MixtureApprox(comps, mix.logits)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def mixture_elbo_estimate(mix, model, n_samples, rng):
    """Monte-Carlo ELBO over mixture draws with its standard error."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if mix.n_components == 1:
        ws = np.zeros(n_samples, dtype=int)
    else:
        ws = rng.choice(mix.n_components, size=n_samples, p=mix.weights)
    Z = rng.standard_normal((n_samples, mix.dim))
    hs = np.array([mixture_h(mix, model, gv.sample_reparam(mix.components[w], z))
                   for w, z in zip(ws, Z)])
    se = hs.std(ddof=1) / np.sqrt(n_samples) if n_samples > 1 else float("nan")
    return float(hs.mean()), float(se)


def joint_scores(mix, thetas, ws):
    """Scores of log q(theta, w) = log pi_w + log q_w(theta) for a batch of joint
    draws. Returns ``(component_scores, logit_scores)``: the first stacks the
    (mu_c, vech C_c) scores of every component, the second the logit scores
    1{w = c} - pi_c, c < K."""
    pi = mix.weights
    K = mix.n_components
    blocks = []
    for c, comp in enumerate(mix.components):
        rows = []
        for theta, w in zip(thetas, ws):
            if w == c:
                sm, sc = gv.score_vector(comp, theta)
                rows.append(np.concatenate([sm, sc]))
            else:
                rows.append(np.zeros(comp.dim + gv.mc.half_dim(comp.dim)))
        blocks.append(np.array(rows))
    comp_scores = np.hstack(blocks)
    onehot = (np.asarray(ws)[:, None] == np.arange(K - 1)[None, :]).astype(float)
    return comp_scores, onehot - pi[:-1]
