"""Self-check suite runnable from the command line.

``fast`` covers exact algebraic identities and per-sample oracle checks;
``full`` adds Monte-Carlo consistency checks. Each property reports its
observed residual against a tolerance. Callables under test can be swapped
through ``overrides`` (e.g. a deliberately broken Fisher matrix) to check
that the harness itself catches faults.
"""
from dataclasses import dataclass

import numpy as np

from . import gauss_vi as gv
from . import matcalc as mc
from . import mixture_vi as mv
from . import model as md

__all__ = ["PropertyResult", "VerifyReport", "verify_suite", "random_chol",
           "random_conjugate"]


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    residual: float
    tolerance: float
    detail: str = ""

    def line(self):
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.name:<40s} residual={self.residual:.3e}  tol={self.tolerance:.1e}"


@dataclass(frozen=True)
class VerifyReport:
    level: str
    results: tuple

    @property
    def ok(self):
        return all(r.passed for r in self.results)

    @property
    def failures(self):
        return [r for r in self.results if not r.passed]


def random_chol(rng, d, positive=True):
    C = np.tril(rng.standard_normal((d, d)))
    diag = np.abs(np.diag(C)) + 0.5 if positive else np.diag(C)
    C[np.diag_indices(d)] = diag
    return C


def random_conjugate(rng, d, n=10):
    A = rng.standard_normal((d, d))
    return md.make_conjugate_gaussian(rng.standard_normal(d), A @ A.T + d * np.eye(d),
                                      rng.standard_normal((n, d)), 1.0 + rng.random(),
                                      rng.standard_normal(n))


def _result(name, residual, tol):
    return PropertyResult(name, bool(residual <= tol), float(residual), tol)


def _mc_result(name, z_scores, limit=3.0):
    worst = float(np.max(np.abs(z_scores)))
    return PropertyResult(name, worst <= limit, worst, limit, "max |estimate - target| / SE")


# ---------------------------------------------------------------------------
# fast checks
# ---------------------------------------------------------------------------

def _matrix_identities(rng, dims=range(1, 7), reps=20):
    worst = {k: 0.0 for k in ("LLt=I", "inv(LNLt)=2I-LKLt", "N=DLN", "LtL(PtxQ)Lt",
                              "L(PtxQ)Lt=Dt(PtxQ)Lt", "K^2=I", "D+D=I", "I+K=2DD+")}
    for d in dims:
        K, D, L = mc.commutation_matrix(d), mc.duplication_matrix(d), mc.elimination_matrix(d)
        N, Dp = mc.n_matrix(d), mc.mp_duplication(d)
        m = mc.half_dim(d)
        for _ in range(reps):
            P = np.tril(rng.standard_normal((d, d)))
            Q = np.tril(rng.standard_normal((d, d)))
            PQ = np.kron(P.T, Q)
            res = {
                "LLt=I": L @ L.T - np.eye(m),
                "inv(LNLt)=2I-LKLt": np.linalg.inv(L @ N @ L.T) - (2 * np.eye(m) - L @ K @ L.T),
                "N=DLN": N - D @ L @ N,
                "LtL(PtxQ)Lt": L.T @ L @ PQ @ L.T - PQ @ L.T,
                "L(PtxQ)Lt=Dt(PtxQ)Lt": L @ PQ @ L.T - D.T @ PQ @ L.T,
                "K^2=I": K @ K - np.eye(d * d),
                "D+D=I": Dp @ D - np.eye(m),
                "I+K=2DD+": np.eye(d * d) + K - 2 * D @ Dp,
            }
            for k, v in res.items():
                worst[k] = max(worst[k], float(np.max(np.abs(v))))
    return [_result(f"matcalc: {k}", v, 1e-10) for k, v in worst.items()]


def _implicit_ops(rng):
    worst = 0.0
    for d in range(1, 7):
        A = rng.standard_normal((d, d))
        v = mc.vec(A)
        h = rng.standard_normal(mc.half_dim(d))
        pairs = [
            (mc.commutation_matrix(d) @ v, mc.apply_commutation(v, d)),
            (mc.duplication_matrix(d) @ h, mc.apply_duplication(h, d)),
            (mc.duplication_matrix(d).T @ v, mc.apply_duplication_transpose(v, d)),
            (mc.elimination_matrix(d) @ v, mc.apply_elimination(v, d)),
            (mc.elimination_matrix(d).T @ h, mc.apply_elimination_transpose(h, d)),
            (mc.mp_duplication(d) @ v, mc.apply_mp_duplication(v, d)),
            (mc.n_matrix(d) @ v, mc.apply_n(v, d)),
        ]
        for dense, implicit in pairs:
            worst = max(worst, float(np.max(np.abs(dense - implicit))))
    return [_result("matcalc: implicit == dense operators", worst, 1e-12)]


def _fisher_inverse(rng, fisher_matrix, fisher_inverse):
    worst = 0.0
    for d in range(2, 9):
        for _ in range(50 if d <= 4 else 10):
            q = gv.GaussianApprox(rng.standard_normal(d), random_chol(rng, d))
            F, Fi = fisher_matrix(q), fisher_inverse(q)
            worst = max(worst, float(np.max(np.abs(F @ Fi - np.eye(F.shape[0])))))
    return [_result("gauss_vi: Fisher x inverse Fisher = I", worst, 1e-9)]


def _ng_oracle(rng, fisher_inverse, natural_grad_cholesky):
    worst = 0.0
    for i in range(100):
        d = 1 + i % 8
        model, _ = random_conjugate(rng, d)
        q = gv.GaussianApprox(rng.standard_normal(d), random_chol(rng, d))
        z = rng.standard_normal(d)
        closed = natural_grad_cholesky(q, model, z).as_vector()
        explicit = fisher_inverse(q) @ gv.euclidean_grad(q, model, z).as_vector()
        worst = max(worst, float(np.max(np.abs(closed - explicit))))
    return [_result("gauss_vi: closed-form NG == I^-1 x Euclidean", worst, 1e-10)]


def _model_derivatives(rng):
    X = rng.standard_normal((20, 4))
    models = [
        random_conjugate(rng, 3)[0],
        md.make_logistic_regression(X, (rng.random(20) < 0.5).astype(float), 1.0),
        md.make_bimodal_target([[-1.0, 0.5], [1.5, -0.5]], [[0.7, 0.7], [0.5, 1.2]], [0.4, 0.6]),
    ]
    worst = 0.0
    for m in models:
        pts = [rng.standard_normal(m.dim) for _ in range(20)]
        g, h = md.check_model_derivatives(m, pts)
        worst = max(worst, g, h or 0.0)
    return [_result("model: analytic derivatives vs finite differences", worst, 1e-5)]


def _mixture_invariants(rng):
    worst_simplex, worst_resp = 0.0, 0.0
    comps = [gv.GaussianApprox(rng.standard_normal(2), random_chol(rng, 2)) for _ in range(3)]
    mix = mv.MixtureApprox(comps, np.zeros(2))
    for _ in range(1000):
        mix = mv.apply_logit_update(mix, rng.standard_normal(2), 0.1)
        w = mix.weights
        if np.any(w <= 0) or np.any(w >= 1):
            worst_simplex = np.inf
        worst_simplex = max(worst_simplex, abs(w.sum() - 1.0))
        _, delta = mv.mixture_density_parts(mix, 3 * rng.standard_normal(2))
        worst_resp = max(worst_resp, abs(w @ delta - 1.0))
    return [_result("mixture_vi: weights on the simplex", worst_simplex, 1e-12),
            _result("mixture_vi: sum_c pi_c delta_c = 1", worst_resp, 1e-10)]


# ---------------------------------------------------------------------------
# Monte-Carlo checks
# ---------------------------------------------------------------------------

def _batch_scores(q, Z):
    """Scores of log q in (mu, vech C) for standard-normal draws Z (n x d)."""
    d = q.dim
    Cinv = q.chol_inverse()
    mean_part = Z @ Cinv  # rows: C^{-T} z
    rows, cols = mc.vech_indices(d)
    # C^{-T}(z z^T - I), lower entries: sum_k Cinv[k, i] (z_k z_j - delta_kj)
    outer = Z[:, :, None] * Z[:, None, :] - np.eye(d)[None]
    full = np.einsum("ki,nkj->nij", Cinv, outer)
    return np.hstack([mean_part, full[:, rows, cols]])


def _fisher_mc(rng, fisher_matrix, n=100_000):
    worst = 0.0
    for d in (1, 2, 3):
        q = gv.GaussianApprox(rng.standard_normal(d), random_chol(rng, d))
        S = _batch_scores(q, rng.standard_normal((n, d)))
        prods = S[:, :, None] * S[:, None, :]
        est = prods.mean(axis=0)
        se = prods.std(axis=0, ddof=1) / np.sqrt(n)
        F = fisher_matrix(q)
        z = np.where(se > 0, (est - F) / np.where(se > 0, se, 1.0), np.abs(est - F) * 1e12)
        worst = max(worst, float(np.max(np.abs(z))))
    return [PropertyResult("gauss_vi: Fisher == MC score covariance", worst <= 3.0, worst, 3.0)]


def _stationarity(rng, n=10_000):
    model, post = random_conjugate(rng, 2)
    q = gv.GaussianApprox.from_cov(post.mean, post.cov)
    Z = rng.standard_normal((n, 2))
    out = []
    for kind in gv.ESTIMATOR_KINDS:
        vals = []
        for z in Z:
            theta = gv.sample_reparam(q, z)
            if kind == "score":
                e = gv.score_function_grad(q, model, theta)
            elif kind == "euclid-reparam":
                e = gv.euclidean_grad(q, model, z)
            elif kind == "natgrad-cholesky":
                e = gv.natural_grad_cholesky(q, model, z)
            else:
                e = gv.natural_grad_natural_params(q, model, theta)
            vals.append(e.as_vector())
        vals = np.array(vals)
        mean = vals.mean(axis=0)
        se = vals.std(axis=0, ddof=1) / np.sqrt(n)
        # zero-variance blocks must be exactly (numerically) zero
        z = np.where(se > 1e-12, mean / np.where(se > 1e-12, se, 1.0),
                     np.where(np.abs(mean) < 1e-9, 0.0, np.inf))
        out.append(_mc_result(f"gauss_vi: stationarity ({kind})", z))
    return out


def _score_cross_covariance(rng, n=100_000):
    comps = [gv.GaussianApprox([-1.0], [[0.7]]), gv.GaussianApprox([1.5], [[1.2]])]
    mix = mv.MixtureApprox.from_weights(comps, [0.35, 0.65])
    ws = rng.choice(2, size=n, p=mix.weights)
    thetas = np.array([[comps[w].mean[0] + comps[w].chol[0, 0] * rng.standard_normal()]
                       for w in ws])
    s_theta, s_w = mv.joint_scores(mix, thetas, ws)
    prods = s_theta * s_w
    cross = prods.mean(axis=0) / (prods.std(axis=0, ddof=1) / np.sqrt(n))
    fw = s_w[:, 0] ** 2
    target = mix.weights[0] * (1 - mix.weights[0])
    z_fw = (fw.mean() - target) / (fw.std(ddof=1) / np.sqrt(n))
    return [_mc_result("mixture_vi: theta/w Fisher block cross term = 0", cross),
            _mc_result("mixture_vi: logit Fisher = pi1 (1 - pi1)", np.array([z_fw]))]


def verify_suite(level="fast", seed=0, overrides=None, stream=None):
    """Run the property suite and return a :class:`VerifyReport`.

    ``overrides`` may replace ``fisher_matrix``, ``fisher_inverse`` or
    ``natural_grad_cholesky``. Each result line is printed to ``stream`` when
    given.
    """
    if level not in ("fast", "full"):
        raise ValueError("level must be 'fast' or 'full'")
    fns = {"fisher_matrix": gv.fisher_matrix, "fisher_inverse": gv.fisher_inverse,
           "natural_grad_cholesky": gv.natural_grad_cholesky}
    unknown = set(overrides or {}) - set(fns)
    if unknown:
        raise ValueError(f"cannot override {sorted(unknown)}")
    fns.update(overrides or {})
    rng = np.random.default_rng(seed)
    checks = [
        lambda: _matrix_identities(rng),
        lambda: _implicit_ops(rng),
        lambda: _fisher_inverse(rng, fns["fisher_matrix"], fns["fisher_inverse"]),
        lambda: _ng_oracle(rng, fns["fisher_inverse"], fns["natural_grad_cholesky"]),
        lambda: _model_derivatives(rng),
        lambda: _mixture_invariants(rng),
    ]
    if level == "full":
        checks += [
            lambda: _fisher_mc(rng, fns["fisher_matrix"]),
            lambda: _stationarity(rng),
            lambda: _score_cross_covariance(rng),
        ]
    results = []
    for check in checks:
        for r in check():
            results.append(r)
            if stream is not None:
                print(r.line(), file=stream, flush=True)
    return VerifyReport(level, tuple(results))
