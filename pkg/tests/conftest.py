import numpy as np
import pytest

from natvi import gauss_vi as gv
from natvi import model as md

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_chol(rng, d, positive=True):
    C = np.tril(rng.standard_normal((d, d)))
    if positive:
        C[np.diag_indices(d)] = np.abs(np.diag(C)) + 0.5
    return C


def random_approx(rng, d):
    return gv.GaussianApprox(rng.standard_normal(d), random_chol(rng, d))


def conjugate_d2():
    """The conjugate d=2 regression target used by the presets."""
    rng = np.random.default_rng(2024)
    X = rng.standard_normal((20, 2))
    y = X @ np.array([1.0, -0.5]) + rng.standard_normal(20)
    return md.make_conjugate_gaussian(np.zeros(2), np.eye(2), X, 1.0, y)


def random_conjugate(rng, d, n=10):
    A = rng.standard_normal((d, d))
    return md.make_conjugate_gaussian(rng.standard_normal(d), A @ A.T + d * np.eye(d),
                                      rng.standard_normal((n, d)), 1.0 + rng.random(),
                                      rng.standard_normal(n))
