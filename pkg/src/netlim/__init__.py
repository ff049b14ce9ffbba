"""Mean-field limit law of a discrete-time stochastic network with correlated weights."""
from .limit_law import (LimitLaw, NumericalError, apply_Q, mc_moment_oracle, pair_marginal,
                        sample_limit_law, single_marginal, solve_limit_law, window_covariance)
from .model import (CovFunction, InitialLaw, ModelParams, ParamsError, SigmoidSpec,
                    lambda_psd_check, psi_forward, psi_inverse, psi_inverse_coeffs,
                    validate_params)
from .quadrature import QuadratureConfig

__all__ = [
    "CovFunction", "InitialLaw", "LimitLaw", "ModelParams", "NumericalError", "ParamsError",
    "QuadratureConfig", "SigmoidSpec", "apply_Q", "lambda_psd_check", "mc_moment_oracle",
    "pair_marginal", "psi_forward", "psi_inverse", "psi_inverse_coeffs", "sample_limit_law",
    "single_marginal", "solve_limit_law", "validate_params", "window_covariance",
]
