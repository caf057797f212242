import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import quad

from natvi import gauss_vi as gv
from natvi import mixture_vi as mv
from natvi import model as md

from conftest import random_approx, random_chol, random_conjugate


def two_component():
    comps = [gv.GaussianApprox([-1.0], [[0.8]]), gv.GaussianApprox([1.5], [[0.6]])]
    return mv.MixtureApprox.from_weights(comps, [0.35, 0.65])


def quad_elbo(mix, model):
    def integrand(t):
        th = np.array([t])
        lq = mv.mixture_log_density(mix, th)
        return np.exp(lq) * (model.log_joint(th) - lq)
    return quad(integrand, -12, 12, points=[-2, 0, 2], limit=200, epsabs=1e-12)[0]


BIMODAL = md.make_bimodal_target([-2.0, 2.0], 0.5, [0.3, 0.7])


# ---------------------------------------------------------------------------
# container and density
# ---------------------------------------------------------------------------

def test_weights_from_logits():
    mix = mv.MixtureApprox([gv.GaussianApprox.isotropic(1)] * 3, [0.0, np.log(2.0)])
    np.testing.assert_allclose(mix.weights, [0.25, 0.5, 0.25])
    np.testing.assert_allclose(two_component().weights, [0.35, 0.65])


def test_mixture_validation():
    q1, q2 = gv.GaussianApprox.isotropic(1), gv.GaussianApprox.isotropic(2)
    with pytest.raises(ValueError, match="dimension"):
        mv.MixtureApprox((q1, q2), [0.0])
    with pytest.raises(ValueError, match="logits"):
        mv.MixtureApprox((q1, q1), [0.0, 1.0])
    with pytest.raises(ValueError, match="at least one"):
        mv.MixtureApprox((), [])


def test_responsibility_examples():
    comps = [gv.GaussianApprox([-1.0], [[1.0]]), gv.GaussianApprox([1.0], [[1.0]])]
    mix = mv.MixtureApprox.from_weights(comps, [0.5, 0.5])
    lq, delta = mv.mixture_density_parts(mix, np.zeros(1))
    np.testing.assert_allclose(delta, [1.0, 1.0])
    assert lq == pytest.approx(stats.norm.logpdf(1.0))
    _, delta = mv.mixture_density_parts(mix, np.array([1.0]))
    q1, q2 = stats.norm(-1).pdf(1.0), stats.norm(1).pdf(1.0)
    np.testing.assert_allclose(delta, np.array([q1, q2]) / (0.5 * q1 + 0.5 * q2))


def test_responsibilities_far_in_tail_stay_finite():
    mix = two_component()
    lq, delta = mv.mixture_density_parts(mix, np.array([60.0]))
    assert np.isfinite(lq) and np.all(np.isfinite(delta))
    assert mix.weights @ delta == pytest.approx(1.0)


def test_mixture_density_matches_scipy(rng):
    mix = two_component()
    for t in rng.standard_normal(5) * 2:
        expected = np.log(0.35 * stats.norm(-1, 0.8).pdf(t) + 0.65 * stats.norm(1.5, 0.6).pdf(t))
        assert mv.mixture_log_density(mix, np.array([t])) == pytest.approx(expected)


def test_mixture_derivatives_match_fd(rng):
    comps = [random_approx(rng, 2) for _ in range(3)]
    mix = mv.MixtureApprox(comps, rng.standard_normal(2))
    for _ in range(5):
        th = rng.standard_normal(2)
        np.testing.assert_allclose(mv.mixture_grad_log_density(mix, th),
                                   md.fd_gradient(lambda t: mv.mixture_log_density(mix, t), th),
                                   atol=1e-6)
        np.testing.assert_allclose(
            mv.mixture_hess_log_density(mix, th),
            md.fd_jacobian(lambda t: mv.mixture_grad_log_density(mix, t), th), atol=1e-6)


def test_sampling_frequencies():
    r = np.random.default_rng(3)
    comps = [gv.GaussianApprox([float(i)], [[1.0]]) for i in range(3)]
    mix = mv.MixtureApprox.from_weights(comps, [0.2, 0.3, 0.5])
    ws = np.array([mv.sample_mixture(mix, r)[1] for _ in range(10_000)])
    freq = np.bincount(ws, minlength=3) / ws.size
    se = np.sqrt(mix.weights * (1 - mix.weights) / ws.size)
    assert np.all(np.abs(freq - mix.weights) < 4 * se)


# ---------------------------------------------------------------------------
# K = 1 reduces to a single Gaussian
# ---------------------------------------------------------------------------

def test_single_component_reductions(rng):
    q = random_approx(rng, 3)
    mix = mv.MixtureApprox((q,), [])
    model, _ = random_conjugate(rng, 3)
    th = rng.standard_normal(3)
    assert mv.mixture_log_density(mix, th) == gv.log_q(q, th)
    np.testing.assert_array_equal(mv.mixture_grad_log_density(mix, th), gv.grad_log_q(q, th))
    np.testing.assert_array_equal(mv.mixture_hess_log_density(mix, th), -q.precision)
    assert mv.logit_natural_grad(mix, model, th).size == 0
    z = rng.standard_normal(3)
    a = mv.component_cholesky_natgrad(mix, model, [z])[0]
    b = gv.natural_grad_cholesky(q, model, z)
    np.testing.assert_array_equal(a.as_vector(), b.as_vector())


def test_single_component_elbo_estimate_bitwise(rng):
    q = random_approx(rng, 2)
    model, _ = random_conjugate(rng, 2)
    a = gv.elbo_estimate(q, model, 100, np.random.default_rng(5))
    b = mv.mixture_elbo_estimate(mv.MixtureApprox((q,), []), model, 100,
                                 np.random.default_rng(5))
    assert a == b


# ---------------------------------------------------------------------------
# weight updates
# ---------------------------------------------------------------------------

def test_logit_grad_example():
    comps = [gv.GaussianApprox([-1.0], [[1.0]]), gv.GaussianApprox([1.0], [[1.0]])]
    mix = mv.MixtureApprox.from_weights(comps, [0.5, 0.5])
    # at theta = 0 both responsibilities are one, so the logit gradient vanishes
    assert mv.logit_natural_grad(mix, BIMODAL, np.zeros(1))[0] == 0.0
    th = np.array([1.0])
    lq, delta = mv.mixture_density_parts(mix, th)
    h = BIMODAL.log_joint(th) - lq
    assert mv.logit_natural_grad(mix, BIMODAL, th)[0] == pytest.approx((delta[0] - delta[1]) * h)


def test_logit_gradient_matches_crn_finite_differences():
    # The logit direction is pi_1 (1 - pi_1) times d ELBO / d logit. The finite
    # difference uses a stratified estimator, sum_c pi_c mean_i h(C_c z_i + mu_c),
    # with the same z_i on both sides.
    mix = two_component()
    pi1 = mix.weights[0]
    n = 20_000
    r = np.random.default_rng(11)
    draws = [mv.sample_mixture(mix, r)[0] for _ in range(n)]
    est = np.array([mv.logit_natural_grad(mix, BIMODAL, th)[0] for th in draws])

    Z = r.standard_normal(n)
    eps = 1e-5

    def log_mix(t, centers, scales, weights):
        return np.logaddexp(*(np.log(w) + stats.norm(m, s).logpdf(t)
                              for m, s, w in zip(centers, scales, weights)))

    def per_sample(logit):
        m = mv.MixtureApprox(mix.components, [logit])
        means = [c.mean[0] for c in m.components]
        sds = [c.chol[0, 0] for c in m.components]
        out = np.zeros(n)
        for mu, sd, w in zip(means, sds, m.weights):
            th = mu + sd * Z
            out += w * (log_mix(th, [-2, 2], [0.5, 0.5], [0.3, 0.7])
                        - log_mix(th, means, sds, m.weights))
        return out

    fd = (per_sample(mix.logits[0] + eps) - per_sample(mix.logits[0] - eps)) / (2 * eps)
    nat_fd = fd / (pi1 * (1 - pi1))
    se = np.hypot(est.std(ddof=1), nat_fd.std(ddof=1)) / np.sqrt(n)
    assert abs(est.mean() - nat_fd.mean()) < 3 * se

    # and against a deterministic quadrature ELBO
    exact = (quad_elbo(mv.MixtureApprox(mix.components, mix.logits + eps), BIMODAL)
             - quad_elbo(mv.MixtureApprox(mix.components, mix.logits - eps), BIMODAL)) / (2 * eps)
    assert abs(est.mean() - exact / (pi1 * (1 - pi1))) < 3 * est.std(ddof=1) / np.sqrt(n)


def test_apply_logit_update():
    mix = two_component()
    new = mv.apply_logit_update(mix, [1.0], 0.5)
    np.testing.assert_allclose(new.logits, mix.logits + 0.5)
    with pytest.raises(ValueError):
        mv.apply_logit_update(mix, [1.0], -0.1)


@settings(max_examples=50, deadline=None)
@given(K=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
def test_simplex_and_responsibilities(K, seed):
    r = np.random.default_rng(seed)
    mix = mv.MixtureApprox([gv.GaussianApprox(r.standard_normal(2), random_chol(r, 2))
                            for _ in range(K)], r.standard_normal(K - 1) * 3)
    for _ in range(5):
        mix = mv.apply_logit_update(mix, r.standard_normal(K - 1), 0.5)
        w = mix.weights
        assert np.all(w > 0) and w.sum() == pytest.approx(1.0, abs=1e-12)
        _, delta = mv.mixture_density_parts(mix, r.standard_normal(2) * 3)
        assert np.all(delta >= 0)
        assert w @ delta == pytest.approx(1.0, abs=1e-10)


# ---------------------------------------------------------------------------
# component updates
# ---------------------------------------------------------------------------

def test_component_natgrad_expectation():
    # E[component natural gradient] = I(lambda_c)^-1 grad_{lambda_c} ELBO / pi_c
    mix = two_component()
    n = 10_000
    r = np.random.default_rng(5)
    ests = np.array([[e.as_vector() for e in
                      mv.component_cholesky_natgrad(mix, BIMODAL, r.standard_normal((2, 1)))]
                     for _ in range(n)])
    eps = 1e-4
    for c, comp in enumerate(mix.components):
        lam = comp.to_vector()
        grad = np.zeros(2)
        for k in range(2):
            vals = []
            for sgn in (1, -1):
                l2 = lam.copy()
                l2[k] += sgn * eps
                comps = list(mix.components)
                comps[c] = gv.GaussianApprox([l2[0]], [[l2[1]]])
                vals.append(quad_elbo(mv.MixtureApprox(comps, mix.logits), BIMODAL))
            grad[k] = (vals[0] - vals[1]) / (2 * eps)
        target = gv.fisher_inverse(comp) @ grad / mix.weights[c]
        mean = ests[:, c].mean(axis=0)
        se = ests[:, c].std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(mean - target) < 3 * se + 1e-6), (c, mean, target, se)


def test_natparam_step_halving():
    mix = mv.MixtureApprox((gv.GaussianApprox([0.0], [[1.0]]),), [])
    model = md.make_conjugate_gaussian([0.0], [[1.0]])[0]
    # precision 1 - rho * 5 needs three halvings to stay positive: 1 - 5/8
    new = mv.component_natparam_update(mix, model, np.zeros(1), 1.0,
                                       grad=np.zeros(1), hess=np.array([[5.0]]))
    np.testing.assert_allclose(new.components[0].cov, [[1 / 0.375]])


def test_natparam_step_skipped_after_ten_halvings(caplog):
    mix = mv.MixtureApprox((gv.GaussianApprox([0.3], [[1.0]]),), [])
    model = md.make_conjugate_gaussian([0.0], [[1.0]])[0]
    with caplog.at_level(logging.WARNING):
        new = mv.component_natparam_update(mix, model, np.zeros(1), 1.0,
                                           grad=np.ones(1), hess=np.array([[1e6]]))
    assert new == mix
    assert "10 halvings" in caplog.text


def test_natparam_single_component_converges_to_posterior():
    r = np.random.default_rng(8)
    model, post = random_conjugate(r, 2)
    mix = mv.MixtureApprox((gv.GaussianApprox.isotropic(2, 0.5),), [])
    for _ in range(20):
        q = mix.components[0]
        thetas = r.standard_normal((2_000, 2)) @ q.chol.T + q.mean
        g = np.mean([mv.mixture_grad_h(mix, model, t) for t in thetas], axis=0)
        H = model.hessian(q.mean) - mv.mixture_hess_log_density(mix, q.mean)
        mix = mv.component_natparam_update(mix, model, q.mean, 0.5, grad=g, hess=H)
    assert gv.gaussian_kl(mix.components[0], post) < 1e-3


def test_natparam_needs_hessian():
    mix = two_component()
    with pytest.raises(md.MissingHessianError):
        mv.component_natparam_update(mix, md.without_hessian(BIMODAL), np.zeros(1), 0.1)


def test_joint_score_means_vanish():
    mix = two_component()
    r = np.random.default_rng(2)
    n = 20_000
    draws = [mv.sample_mixture(mix, r) for _ in range(n)]
    s_theta, s_w = mv.joint_scores(mix, np.array([d[0] for d in draws]), [d[1] for d in draws])
    assert s_theta.shape == (n, 4) and s_w.shape == (n, 1)
    for s in (s_theta, s_w):
        se = s.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(s.mean(axis=0)) < 4 * se)
