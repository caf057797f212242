"""Stochastic gradient ascent driver for Gaussian and mixture approximations.

Randomness is counter-based: the generator for sample ``s`` of iteration ``t``
is derived from ``SeedSequence(seed, spawn_key=(0, t, s))`` and the ELBO
evaluation at iteration ``t`` from ``spawn_key=(1, t)``. Results therefore do
not depend on how many worker threads evaluate samples.
"""
import math
import time
from contextlib import nullcontext
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gauss_vi as gv
from . import mixture_vi as mv
from .model import MissingHessianError

__all__ = [
    "StepSchedule",
    "AdamState",
    "RunConfig",
    "TraceRecord",
    "ConvergenceStatus",
    "OptimizationAborted",
    "schedule_rate",
    "convergence_check",
    "validate_config",
    "iteration_rng",
    "run_sga",
    "iterations_to_kl",
    "compare_ng_adam",
]

SCHEDULE_KINDS = ("constant", "robbins-monro", "adam")
NG_KINDS = ("natgrad-cholesky", "natgrad-natural")


@dataclass(frozen=True)
class StepSchedule:
    kind: str = "constant"
    base_rate: float = 0.05
    decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule {self.kind!r}; choose from {SCHEDULE_KINDS}")
        if self.base_rate < 0 or self.decay < 0:
            raise ValueError("base rate and decay must be nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam moment parameters")

    def rate(self, t):
        """Scalar rate at iteration t (the base rate for Adam)."""
        if self.kind == "robbins-monro":
            return self.base_rate / (1.0 + self.decay * t)
        return self.base_rate


class AdamState:
    """First and second moment accumulators for one flat parameter vector."""

    def __init__(self, size):
        self.m = np.zeros(size)
        self.v = np.zeros(size)


def schedule_rate(schedule, t, grad=None, state=None):
    """Effective step at iteration t >= 1.

    constant / robbins-monro return a scalar rate. Adam updates ``state`` with
    ``grad`` and returns the elementwise step vector
    ``base * m_hat / (sqrt(v_hat) + eps)``.
    """
    if t < 1:
        raise ValueError("iterations are counted from 1")
    if schedule.kind != "adam":
        return schedule.rate(t)
    grad = np.asarray(grad, dtype=float)
    if state is None:
        state = AdamState(grad.size)
    b1, b2 = schedule.beta1, schedule.beta2
    state.m = b1 * state.m + (1 - b1) * grad
    state.v = b2 * state.v + (1 - b2) * grad**2
    m_hat = state.m / (1 - b1**t)
    v_hat = state.v / (1 - b2**t)
    return schedule.base_rate * m_hat / (np.sqrt(v_hat) + schedule.eps)


@dataclass(frozen=True)
class RunConfig:
    estimator: str = "natgrad-cholesky"
    schedule: StepSchedule = field(default_factory=StepSchedule)
    iterations: int = 5000
    samples_per_iter: int = 1
    seed: int = 0
    eval_every: int = 50
    eval_samples: int = 200
    log_diag: bool = False
    workers: int = 1
    logit_baseline: bool = False
    baseline_decay: float = 0.9
    convergence_window: int = 0
    convergence_tol: float = 1e-4
    min_iterations: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        sched = data.pop("schedule", {})
        if not isinstance(sched, StepSchedule):
            sched = StepSchedule(**sched)
        return cls(schedule=sched, **data)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    elbo: float
    elbo_se: float
    param_norm_mu: float
    param_norm_c: float
    stepsize: float
    wall_time_ms: float
    components: tuple = ()  # per component (weight, |mu_c|, |vech C_c|)


@dataclass(frozen=True)
class ConvergenceStatus:
    converged: bool
    improvement: float
    threshold: float


class OptimizationAborted(RuntimeError):
    """Non-finite parameters; ``last_good`` and ``trace`` hold the state
    before the failing iteration."""

    def __init__(self, message, last_good, trace, iteration):
        super().__init__(message)
        self.last_good = last_good
        self.trace = trace
        self.iteration = iteration


def convergence_check(elbos, rel_tol=1e-4, min_iterations=0, last_iteration=None):
    """Plateau test on a window of ELBO values: compare the mean of the second
    half with the mean of the first half and call it converged when the gain is
    below ``rel_tol * |mean|``. Never converges before ``min_iterations``."""
    values = np.array([getattr(e, "elbo", e) for e in elbos], dtype=float)
    if values.size < 2:
        raise ValueError("convergence check needs at least two records")
    half = values.size // 2
    prev, cur = values[:half].mean(), values[-half:].mean()
    improvement = cur - prev
    threshold = rel_tol * abs(cur)
    if last_iteration is None and elbos and hasattr(elbos[-1], "iteration"):
        last_iteration = elbos[-1].iteration
    early = last_iteration is not None and last_iteration < min_iterations
    return ConvergenceStatus(bool(improvement < threshold and not early),
                             float(improvement), float(threshold))


def validate_config(config, model, family="gaussian"):
    errors = []
    if config.estimator not in gv.ESTIMATOR_KINDS:
        errors.append(f"unknown estimator {config.estimator!r}; choose from "
                      f"{', '.join(gv.ESTIMATOR_KINDS)}")
    if config.estimator in NG_KINDS and config.schedule.kind == "adam":
        errors.append(f"estimator {config.estimator!r} takes a scalar step schedule; "
                      "Adam is reserved for Euclidean estimators")
    if config.estimator == "natgrad-natural" and not model.has_hessian:
        errors.append(f"estimator 'natgrad-natural' needs a Hessian but model "
                      f"{model.name!r} provides none")
    if family == "mixture" and config.estimator not in NG_KINDS:
        errors.append(f"mixture approximations support {', '.join(NG_KINDS)}, "
                      f"not {config.estimator!r}")
    if config.log_diag and config.estimator != "natgrad-cholesky":
        errors.append("log_diag applies to the natgrad-cholesky estimator only")
    for name in ("iterations", "samples_per_iter", "eval_every", "eval_samples", "workers"):
        if getattr(config, name) < 1:
            errors.append(f"{name} must be at least 1")
    if config.convergence_window == 1:
        errors.append("convergence_window must be 0 (off) or at least 2")
    if errors:
        raise ValueError("; ".join(errors))


def iteration_rng(seed, t, s=0):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, t, s)))


def _eval_rng(seed, t):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, t)))


def _map(fn, items, pool=None):
    if pool is None:
        return [fn(x) for x in items]
    return list(pool.map(fn, items))  # map preserves input order


# ---------------------------------------------------------------------------
# per-family steppers
# ---------------------------------------------------------------------------

class _GaussianStepper:
    family = "gaussian"
    pool = None

    def __init__(self, config, model, q):
        self.config = config
        self.model = model
        self.adam = AdamState(q.dim + gv.mc.half_dim(q.dim))

    def _sample(self, q, t, s):
        rng = iteration_rng(self.config.seed, t, s)
        z = rng.standard_normal(q.dim)
        kind = self.config.estimator
        if kind == "natgrad-cholesky":
            return gv.natural_grad_cholesky(q, self.model, z)
        if kind == "euclid-reparam":
            return gv.euclidean_grad(q, self.model, z)
        theta = gv.sample_reparam(q, z)
        if kind == "score":
            return gv.score_function_grad(q, self.model, theta)
        return gv.grad_h(q, self.model, theta), gv.hess_h(q, self.model, theta)

    def step(self, q, t):
        cfg = self.config
        parts = _map(lambda s: self._sample(q, t, s), range(cfg.samples_per_iter), self.pool)
        ctx = f" at iteration {t}"
        if cfg.estimator == "natgrad-natural":
            n = len(parts)
            g = np.sum([p[0] for p in parts], axis=0) / n
            H = np.sum([p[1] for p in parts], axis=0) / n
            rho = schedule_rate(cfg.schedule, t)
            return gv.apply_natural_param_step(q, g, H, rho, context=ctx), rho
        est = parts[0] if len(parts) == 1 else gv.GradientEstimate.average(parts)
        if cfg.estimator == "natgrad-cholesky":
            rho = schedule_rate(cfg.schedule, t)
            return gv.apply_cholesky_step(q, est, rho, cfg.log_diag, context=ctx), rho
        grad = est.as_vector()
        if cfg.schedule.kind == "adam":
            step = schedule_rate(cfg.schedule, t, grad, self.adam)
            rho = cfg.schedule.base_rate
        else:
            rho = schedule_rate(cfg.schedule, t)
            step = rho * grad
        d = q.dim
        return gv.apply_euclidean_step(q, step[:d], step[d:], context=ctx), rho

    def evaluate(self, q, rng):
        return gv.elbo_estimate(q, self.model, self.config.eval_samples, rng)

    @staticmethod
    def norms(q):
        return float(np.linalg.norm(q.mean)), float(np.linalg.norm(gv.mc.vech(q.chol))), ()


class _MixtureStepper:
    family = "mixture"
    pool = None

    def __init__(self, config, model, mix):
        self.config = config
        self.model = model
        self.baseline = 0.0
        self._baseline_init = False

    def _sample(self, mix, t, s):
        rng = iteration_rng(self.config.seed, t, s)
        if self.config.estimator == "natgrad-cholesky":
            # the weight draw comes first; K = 1 consumes nothing for it
            theta, _ = (sample_mixture_or_none(mix, rng))
            zs = [rng.standard_normal(mix.dim) for _ in range(mix.n_components)]
            return theta, mv.component_cholesky_natgrad(mix, self.model, zs)
        theta, _ = mv.sample_mixture(mix, rng)
        _, delta = mv.mixture_density_parts(mix, theta)
        g = mv.mixture_grad_h(mix, self.model, theta)
        H = mv._mixture_hess_h(mix, self.model, theta)
        return theta, (delta, g, H)

    def _logit_grad(self, mix, thetas):
        if mix.n_components == 1:
            return np.zeros(0)
        cfg = self.config
        b = self.baseline if cfg.logit_baseline else 0.0
        grads, hs = [], []
        for theta in thetas:
            lq, delta = mv.mixture_density_parts(mix, theta)
            h = self.model.log_joint(theta) - lq
            hs.append(h)
            grads.append((delta[:-1] - delta[-1]) * (h - b))
        if cfg.logit_baseline:
            mean_h = float(np.mean(hs))
            if not self._baseline_init:
                self.baseline, self._baseline_init = mean_h, True
            else:
                a = cfg.baseline_decay
                self.baseline = a * self.baseline + (1 - a) * mean_h
        return np.sum(grads, axis=0) / len(grads)

    def step(self, mix, t):
        cfg = self.config
        parts = _map(lambda s: self._sample(mix, t, s), range(cfg.samples_per_iter),
                     self.pool)
        rho = schedule_rate(cfg.schedule, t)
        ctx = f" at iteration {t}"
        thetas = [p[0] for p in parts if p[0] is not None]
        logit_grad = self._logit_grad(mix, thetas)
        if cfg.estimator == "natgrad-cholesky":
            per_comp = list(zip(*[p[1] for p in parts]))
            ests = [e[0] if len(e) == 1 else gv.GradientEstimate.average(e) for e in per_comp]
            new = mv.apply_component_cholesky_steps(mix, ests, rho, cfg.log_diag, ctx)
        else:
            n = len(parts)
            if n == 1:
                delta, g, H = parts[0][1]
                new = mv._natparam_with_delta(mix, g, H, delta, rho)
            else:
                # average delta_c-weighted derivatives per component
                comps = []
                for c, comp in enumerate(mix.components):
                    dg = np.sum([p[1][0][c] * p[1][1] for p in parts], axis=0) / n
                    dH = np.sum([p[1][0][c] * p[1][2] for p in parts], axis=0) / n
                    single = mv.MixtureApprox([comp], [])
                    comps.append(mv._natparam_with_delta(single, dg, dH, [1.0], rho)
                                 .components[0])
                new = mv.MixtureApprox(comps, mix.logits)
        if logit_grad.size:
            new = mv.apply_logit_update(new, logit_grad, rho)
        return new, rho

    def evaluate(self, mix, rng):
        return mv.mixture_elbo_estimate(mix, self.model, self.config.eval_samples, rng)

    @staticmethod
    def norms(mix):
        mus = [float(np.linalg.norm(c.mean)) for c in mix.components]
        cs = [float(np.linalg.norm(gv.mc.vech(c.chol))) for c in mix.components]
        comps = tuple((float(w), m, c) for w, m, c in zip(mix.weights, mus, cs))
        return float(np.hypot.reduce(mus)), float(np.hypot.reduce(cs)), comps


def sample_mixture_or_none(mix, rng):
    if mix.n_components == 1:
        return None, 0
    return mv.sample_mixture(mix, rng)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def run_sga(config, model, initial, callback=None, timing=True):
    """Run ``config.iterations`` stochastic natural/Euclidean gradient steps.

    ``initial`` is a GaussianApprox or MixtureApprox. A trace record is taken at
    iteration 0, every ``eval_every`` iterations and at the last iteration.
    ``callback(t, approx)`` is called after every step; a true return value
    stops the run early. Returns ``(final_approx, trace)``; raises
    :class:`OptimizationAborted` on non-finite parameters.
    """
    family = "mixture" if isinstance(initial, mv.MixtureApprox) else "gaussian"
    validate_config(config, model, family)
    if initial.dim != model.dim:
        raise ValueError(f"approximation has dimension {initial.dim}, model {model.dim}")
    stepper = (_MixtureStepper if family == "mixture" else _GaussianStepper)(
        config, model, initial)
    trace = []
    start = time.perf_counter()

    def record(t, approx, rho):
        elbo, se = stepper.evaluate(approx, _eval_rng(config.seed, t))
        mu_n, c_n, comps = stepper.norms(approx)
        wall = (time.perf_counter() - start) * 1e3 if timing else 0.0
        trace.append(TraceRecord(t, elbo, se, mu_n, c_n, rho, wall, comps))

    parallel = config.workers > 1 and config.samples_per_iter > 1
    with ThreadPoolExecutor(max_workers=config.workers) if parallel else nullcontext() as pool:
        stepper.pool = pool
        return _loop(config, stepper, initial, record, trace, callback)


def _loop(config, stepper, initial, record, trace, callback):
    approx = initial
    record(0, approx, 0.0)
    rho = 0.0
    window = config.convergence_window
    for t in range(1, config.iterations + 1):
        try:
            # overflow surfaces as a non-finite check with iteration context
            with np.errstate(over="ignore", invalid="ignore"):
                new, rho = stepper.step(approx, t)
        except (FloatingPointError, ValueError, np.linalg.LinAlgError) as err:
            if isinstance(err, MissingHessianError):
                raise
            raise OptimizationAborted(f"optimisation aborted at iteration {t}: {err}",
                                      approx, trace, t) from err
        approx = new
        stop = bool(callback(t, approx)) if callback is not None else False
        if t % config.eval_every == 0 or t == config.iterations or stop:
            record(t, approx, rho)
            if window and len(trace) >= window and t >= config.min_iterations:
                status = convergence_check(trace[-window:], config.convergence_tol,
                                           config.min_iterations)
                stop = stop or status.converged
        if stop:
            break
    return approx, trace


def iterations_to_kl(config, model, initial, posterior, threshold=0.1):
    """First iteration at which KL(q || posterior) drops below ``threshold``
    (None if it never does within ``config.iterations``)."""
    hit = {}

    def cb(t, q):
        if gv.gaussian_kl(q, posterior) < threshold:
            hit["t"] = t
            return True
        return False

    run_sga(config, model, initial, callback=cb, timing=False)
    return hit.get("t")


def compare_ng_adam(model, posterior, initial, seed=42, iterations=5000,
                    ng_rate=0.05, adam_rate=0.01, threshold=0.1):
    """Iterations to reach KL < threshold for the closed-form natural gradient
    (constant rate) and for Euclidean reparametrisation gradients with Adam."""
    big_eval = max(iterations, 1)
    ng = RunConfig("natgrad-cholesky", StepSchedule("constant", ng_rate),
                   iterations, seed=seed, eval_every=big_eval, eval_samples=2)
    adam = RunConfig("euclid-reparam", StepSchedule("adam", adam_rate),
                     iterations, seed=seed, eval_every=big_eval, eval_samples=2)
    t_ng = iterations_to_kl(ng, model, initial, posterior, threshold)
    t_adam = iterations_to_kl(adam, model, initial, posterior, threshold)
    ratio = (t_adam / t_ng) if (t_ng and t_adam) else math.nan
    return {"natgrad_cholesky": t_ng, "euclid_adam": t_adam, "ratio": ratio}
