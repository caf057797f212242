import numpy as np
import pytest
from scipy import stats

from natvi import model as md

from conftest import random_conjugate


def test_conjugate_scalar_posterior():
    model, post = md.make_conjugate_gaussian([0.0], [[1.0]], [[1.0]], 1.0, [2.0])
    np.testing.assert_allclose(post.mean, [1.0])
    np.testing.assert_allclose(post.cov, [[0.5]])
    # p(y) = N(2; 0, 2)
    assert post.log_evidence == pytest.approx(stats.norm(0, np.sqrt(2)).logpdf(2.0))
    assert model.log_joint(np.array([1.0])) == pytest.approx(
        stats.norm(0, 1).logpdf(1.0) + stats.norm(1.0, 1).logpdf(2.0))


def test_conjugate_without_data_is_prior():
    model, post = md.make_conjugate_gaussian([1.0, -1.0], np.diag([2.0, 3.0]))
    np.testing.assert_allclose(post.mean, [1.0, -1.0])
    np.testing.assert_allclose(post.cov, np.diag([2.0, 3.0]))
    assert post.log_evidence == pytest.approx(0.0, abs=1e-12)


def test_conjugate_log_evidence_matches_marginal(rng):
    d, n = 3, 7
    A = rng.standard_normal((d, d))
    S0 = A @ A.T + np.eye(d)
    mu0 = rng.standard_normal(d)
    X = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    _, post = md.make_conjugate_gaussian(mu0, S0, X, 0.7, y)
    marginal = stats.multivariate_normal(X @ mu0, X @ S0 @ X.T + 0.7 * np.eye(n))
    assert post.log_evidence == pytest.approx(marginal.logpdf(y), rel=1e-10)


def test_conjugate_hessian_is_minus_posterior_precision(rng):
    model, post = random_conjugate(rng, 3)
    H = model.hessian(rng.standard_normal(3))
    np.testing.assert_allclose(-H, np.linalg.inv(post.cov), rtol=1e-10)
    np.testing.assert_allclose(model.grad_log_joint(post.mean), 0.0, atol=1e-10)


def test_conjugate_shape_errors():
    with pytest.raises(ValueError, match="conform"):
        md.make_conjugate_gaussian(np.zeros(2), np.eye(2), np.ones((3, 3)), 1.0, np.ones(3))
    with pytest.raises(ValueError, match="positive definite"):
        md.make_conjugate_gaussian(np.zeros(2), -np.eye(2))
    with pytest.raises(ValueError, match="noise"):
        md.make_conjugate_gaussian(np.zeros(1), np.eye(1), [[1.0]], 0.0, [1.0])


def test_logistic_at_origin():
    model = md.make_logistic_regression([[1.0]], [1.0], 1.0)
    np.testing.assert_allclose(model.grad_log_joint(np.zeros(1)), [0.5])
    expected = -np.log(2.0) - 0.5 * np.log(2 * np.pi)
    assert model.log_joint(np.zeros(1)) == pytest.approx(expected)
    np.testing.assert_allclose(model.hessian(np.zeros(1)), [[-1.25]])


def test_logistic_validation():
    with pytest.raises(ValueError, match="at least one"):
        md.make_logistic_regression(np.zeros((0, 2)), [], 1.0)
    with pytest.raises(ValueError, match="0 or 1"):
        md.make_logistic_regression([[1.0]], [2.0], 1.0)
    with pytest.raises(ValueError, match="precision"):
        md.make_logistic_regression([[1.0]], [1.0], 0.0)


def test_bimodal_symmetric_origin():
    model = md.make_bimodal_target([-2.0, 2.0], 0.5, [0.5, 0.5])
    assert model.dim == 1
    np.testing.assert_allclose(model.grad_log_joint(np.zeros(1)), [0.0], atol=1e-14)
    lp = model.log_joint(np.array([2.0]))
    assert lp == pytest.approx(np.log(0.5 * stats.norm(2, 0.5).pdf(2.0)
                                      + 0.5 * stats.norm(-2, 0.5).pdf(2.0)))


def test_bimodal_normalised():
    from scipy.integrate import quad
    model = md.make_bimodal_target([-2.0, 2.0], [0.5, 1.0], [0.3, 0.7])
    total, _ = quad(lambda t: np.exp(model.log_joint(np.array([t]))), -20, 20)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_bimodal_validation():
    with pytest.raises(ValueError, match="sum to one"):
        md.make_bimodal_target([-1.0, 1.0], 1.0, [0.5, 0.6])
    with pytest.raises(ValueError, match="scales"):
        md.make_bimodal_target([-1.0, 1.0], [1.0, -1.0], [0.5, 0.5])


@pytest.mark.parametrize("which", ["conjugate", "logistic", "bimodal"])
def test_derivatives_match_finite_differences(rng, which):
    if which == "conjugate":
        model = random_conjugate(rng, 3)[0]
    elif which == "logistic":
        X = rng.standard_normal((15, 3))
        model = md.make_logistic_regression(X, (rng.random(15) < 0.4).astype(float), 2.0)
    else:
        model = md.make_bimodal_target([[-1.0, 0.0], [1.0, 0.5]], [[0.8, 0.6], [1.0, 0.7]],
                                       [0.4, 0.6])
    for _ in range(10):
        theta = rng.standard_normal(model.dim)
        np.testing.assert_allclose(model.grad_log_joint(theta),
                                   md.fd_gradient(model.log_joint, theta), atol=1e-6)
        np.testing.assert_allclose(model.hessian(theta),
                                   md.fd_jacobian(model.grad_log_joint, theta), atol=1e-6)


def test_fd_helpers_on_quadratic():
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    f = lambda x: 0.5 * x @ A @ x
    x = np.array([0.3, -1.2])
    np.testing.assert_allclose(md.fd_gradient(f, x), A @ x, atol=1e-8)
    np.testing.assert_allclose(md.fd_hessian(f, x), A, atol=1e-5)


def test_fd_reports_non_finite_coordinate():
    f = lambda x: np.sqrt(x[1])
    with np.errstate(invalid="ignore"), pytest.raises(md.NonFiniteError, match="coordinate 1"):
        md.fd_gradient(f, np.array([1.0, 0.0]))


def test_missing_hessian():
    model = md.without_hessian(md.make_conjugate_gaussian([0.0], [[1.0]])[0])
    assert not model.has_hessian
    with pytest.raises(md.MissingHessianError):
        model.hessian(np.zeros(1))


def test_load_regression_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x1,x2,y\n1,2,3\n4,5,6\n")
    X, y = md.load_regression_csv(p)
    np.testing.assert_array_equal(X, [[1, 2], [4, 5]])
    np.testing.assert_array_equal(y, [3, 6])


def test_load_regression_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1,2,3\n4,oops,6\n")
    with pytest.raises(ValueError, match="row 2, column 2"):
        md.load_regression_csv(p)
    p.write_text("1,2,3\n4,5\n")
    with pytest.raises(ValueError, match="row 2"):
        md.load_regression_csv(p)
    p.write_text("")
    with pytest.raises(ValueError, match="no observations"):
        md.load_regression_csv(p)
