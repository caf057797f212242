import numpy as np
import pytest

from natvi import gauss_vi as gv
from natvi import mixture_vi as mv
from natvi import model as md
from natvi import optim as op

from conftest import conjugate_d2


def cfg(estimator="natgrad-cholesky", kind="constant", rate=0.05, **kw):
    kw.setdefault("iterations", 50)
    kw.setdefault("eval_every", 10)
    kw.setdefault("eval_samples", 20)
    return op.RunConfig(estimator, op.StepSchedule(kind, rate), **kw)


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

def test_schedule_examples():
    assert op.schedule_rate(op.StepSchedule("constant", 0.05), 100) == 0.05
    assert op.schedule_rate(op.StepSchedule("robbins-monro", 1.0, 1.0), 9) == pytest.approx(0.1)
    assert op.schedule_rate(op.StepSchedule("robbins-monro", 0.5, 0.0), 9) == 0.5
    with pytest.raises(ValueError):
        op.schedule_rate(op.StepSchedule(), 0)
    with pytest.raises(ValueError, match="unknown schedule"):
        op.StepSchedule("cosine")


def test_adam_zero_gradient_gives_zero_step():
    state = op.AdamState(3)
    step = op.schedule_rate(op.StepSchedule("adam", 0.01), 1, np.zeros(3), state)
    np.testing.assert_array_equal(step, np.zeros(3))


def test_adam_first_step_is_signed_base_rate():
    step = op.schedule_rate(op.StepSchedule("adam", 0.01), 1, np.array([4.0, -0.5]))
    np.testing.assert_allclose(step, [0.01, -0.01], rtol=1e-6)


def test_adam_bias_correction_constant_gradient():
    s, state = op.StepSchedule("adam", 0.1), op.AdamState(1)
    for t in range(1, 6):
        step = op.schedule_rate(s, t, np.array([2.0]), state)
    np.testing.assert_allclose(step, [0.1], rtol=1e-6)


# ---------------------------------------------------------------------------
# configuration checks
# ---------------------------------------------------------------------------

def test_validate_config_conflicts():
    model, _ = conjugate_d2()
    with pytest.raises(ValueError, match="Adam"):
        op.validate_config(cfg(kind="adam"), model)
    with pytest.raises(ValueError, match="Hessian"):
        op.validate_config(cfg("natgrad-natural"), md.without_hessian(model))
    with pytest.raises(ValueError, match="mixture"):
        op.validate_config(cfg("score"), model, "mixture")
    with pytest.raises(ValueError, match="log_diag"):
        op.validate_config(cfg("euclid-reparam", log_diag=True), model)
    with pytest.raises(ValueError, match="iterations"):
        op.validate_config(cfg(iterations=0), model)
    with pytest.raises(ValueError, match="unknown estimator"):
        op.validate_config(cfg("newton"), model)
    op.validate_config(cfg("euclid-reparam", kind="adam"), model)


def test_run_config_round_trip():
    c = cfg("euclid-reparam", "adam", 0.02, seed=3, workers=2)
    assert op.RunConfig.from_dict(c.to_dict()) == c


# ---------------------------------------------------------------------------
# convergence monitor
# ---------------------------------------------------------------------------

def test_convergence_check_examples():
    assert op.convergence_check([-10.0] * 6).converged
    rising = op.convergence_check([-10.0, -9.0, -8.0, -7.0])
    assert not rising.converged and rising.improvement == pytest.approx(2.0)
    assert not op.convergence_check([-10.0] * 6, min_iterations=100, last_iteration=50).converged
    with pytest.raises(ValueError):
        op.convergence_check([1.0])


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def test_zero_rate_is_a_null_run():
    model, _ = conjugate_d2()
    q0 = gv.GaussianApprox.isotropic(2, 0.3)
    q, trace = op.run_sga(cfg(rate=0.0), model, q0)
    assert q == q0
    assert [r.iteration for r in trace] == [0, 10, 20, 30, 40, 50]


def test_trace_schedule_includes_final_iteration():
    model, _ = conjugate_d2()
    _, trace = op.run_sga(cfg(iterations=25), model, gv.GaussianApprox.isotropic(2, 0.3))
    assert [r.iteration for r in trace] == [0, 10, 20, 25]
    assert trace[0].stepsize == 0.0 and trace[-1].stepsize == 0.05


@pytest.mark.parametrize("estimator,kind,rate", [
    ("natgrad-cholesky", "constant", 0.05),
    ("natgrad-natural", "constant", 0.05),
    ("euclid-reparam", "adam", 0.01),
    ("score", "robbins-monro", 0.002),
])
def test_runs_are_deterministic(estimator, kind, rate):
    model, _ = conjugate_d2()
    q0 = gv.GaussianApprox.isotropic(2, 0.3)
    c = cfg(estimator, kind, rate, seed=9, samples_per_iter=3)
    a = op.run_sga(c, model, q0, timing=False)
    b = op.run_sga(c, model, q0, timing=False)
    par = op.run_sga(cfg(estimator, kind, rate, seed=9, samples_per_iter=3, workers=4),
                     model, q0, timing=False)
    assert a[0] == b[0] == par[0]
    assert a[1] == b[1] == par[1]
    other = op.run_sga(cfg(estimator, kind, rate, seed=10, samples_per_iter=3), model, q0)
    assert other[0] != a[0]


@pytest.mark.parametrize("estimator,kind,rate,iters", [
    ("natgrad-cholesky", "constant", 0.05, 600),
    ("natgrad-cholesky", "robbins-monro", 0.1, 600),
    ("natgrad-natural", "constant", 0.05, 600),
    ("euclid-reparam", "adam", 0.02, 1500),
])
def test_estimators_approach_posterior(estimator, kind, rate, iters):
    model, post = conjugate_d2()
    q0 = gv.GaussianApprox.isotropic(2, 0.3)
    c = cfg(estimator, kind, rate, iterations=iters, eval_every=iters, seed=1)
    q, _ = op.run_sga(c, model, q0)
    assert gv.gaussian_kl(q, post) < 0.05


def test_log_diag_run_keeps_positive_diagonal():
    model, post = conjugate_d2()
    q, _ = op.run_sga(cfg(log_diag=True, iterations=400, rate=0.1), model,
                      gv.GaussianApprox.isotropic(2, 0.3))
    assert np.all(np.diag(q.chol) > 0)
    assert gv.gaussian_kl(q, post) < 0.05


def test_callback_stops_early():
    model, _ = conjugate_d2()
    seen = []
    _, trace = op.run_sga(cfg(), model, gv.GaussianApprox.isotropic(2, 0.3),
                          callback=lambda t, q: seen.append(t) or t == 7)
    assert seen[-1] == 7 and trace[-1].iteration == 7


def test_convergence_window_stops_run():
    model, _ = conjugate_d2()
    c = cfg(iterations=5000, eval_every=20, eval_samples=200, convergence_window=10,
            convergence_tol=1e-3, min_iterations=400, seed=42)
    _, trace = op.run_sga(c, model, gv.GaussianApprox.isotropic(2, 0.3))
    assert 400 <= trace[-1].iteration < 5000


def test_non_finite_gradient_aborts_with_last_good_state():
    q0 = gv.GaussianApprox.isotropic(1, 1.0)
    bad = md.TargetModel(1, lambda t: 0.0, lambda t: np.array([np.nan]), name="broken")
    with pytest.raises(op.OptimizationAborted, match="iteration 1") as info:
        op.run_sga(cfg(), bad, q0)
    assert info.value.last_good == q0
    assert len(info.value.trace) == 1 and info.value.iteration == 1


def test_missing_hessian_is_a_config_error():
    model, _ = conjugate_d2()
    with pytest.raises(ValueError, match="Hessian"):
        op.run_sga(cfg("natgrad-natural"), md.without_hessian(model),
                   gv.GaussianApprox.isotropic(2))


def test_dimension_mismatch():
    model, _ = conjugate_d2()
    with pytest.raises(ValueError, match="dimension"):
        op.run_sga(cfg(), model, gv.GaussianApprox.isotropic(3))


@pytest.mark.parametrize("estimator", ["natgrad-cholesky", "natgrad-natural"])
def test_single_component_mixture_matches_gaussian_run(estimator):
    model, _ = conjugate_d2()
    q0 = gv.GaussianApprox.isotropic(2, 0.3)
    c = cfg(estimator, iterations=100, seed=4, samples_per_iter=2)
    q, trace = op.run_sga(c, model, q0)
    mix, mtrace = op.run_sga(c, model, mv.MixtureApprox((q0,), []))
    assert mix.components[0] == q
    assert [r.elbo for r in trace] == [r.elbo for r in mtrace]


def test_mixture_run_records_components():
    target = md.make_bimodal_target([-2.0, 2.0], 0.5, [0.3, 0.7])
    mix0 = mv.MixtureApprox.initial(1, 3, np.random.default_rng(0), 0.5)
    for est in ("natgrad-cholesky", "natgrad-natural"):
        mix, trace = op.run_sga(cfg(est, iterations=30, samples_per_iter=2,
                                    logit_baseline=True), target, mix0)
        assert len(trace[-1].components) == 3
        assert mix.weights.sum() == pytest.approx(1.0)


def test_iterations_to_kl_and_comparison():
    model, post = conjugate_d2()
    q0 = gv.GaussianApprox.isotropic(2, 0.1)
    t = op.iterations_to_kl(cfg(iterations=2000, eval_every=2000, seed=42), model, q0, post)
    assert t is not None and 1 <= t < 2000
    never = op.iterations_to_kl(cfg(rate=0.0, iterations=20), model, q0, post)
    assert never is None
    res = op.compare_ng_adam(model, post, q0, iterations=3000)
    assert res["natgrad_cholesky"] == t
    assert res["ratio"] == pytest.approx(res["euclid_adam"] / t)
