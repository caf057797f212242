"""Natural-gradient variational inference with Gaussian and Gaussian-mixture
approximations parametrised by means and Cholesky factors."""
from .gauss_vi import (GaussianApprox, GradientEstimate, elbo_estimate, euclidean_grad,
                       fisher_inverse, fisher_matrix, gaussian_kl, natural_grad_cholesky,
                       natural_grad_natural_params, score_function_grad, step_algorithm1,
                       step_logdiag)
from .mixture_vi import MixtureApprox, mixture_elbo_estimate
from .model import (ExactGaussianPosterior, TargetModel, make_bimodal_target,
                    make_conjugate_gaussian, make_logistic_regression)
from .optim import RunConfig, StepSchedule, run_sga

__version__ = "0.1.0"

__all__ = [
    "GaussianApprox", "GradientEstimate", "MixtureApprox", "TargetModel",
    "ExactGaussianPosterior", "RunConfig", "StepSchedule",
    "make_conjugate_gaussian", "make_logistic_regression", "make_bimodal_target",
    "euclidean_grad", "score_function_grad", "natural_grad_cholesky",
    "natural_grad_natural_params", "fisher_matrix", "fisher_inverse",
    "step_algorithm1", "step_logdiag", "elbo_estimate", "mixture_elbo_estimate",
    "gaussian_kl", "run_sga",
]
