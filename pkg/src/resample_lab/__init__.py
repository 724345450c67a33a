"""Latent-diffusion inverse-problem solvers with hard data consistency, at desk scale.

The learned pieces of a latent diffusion model are replaced by exactly
tractable stand-ins: a Gaussian-mixture prior with analytic score and
posterior, and a decoder that is either affine or a small tanh network.
"""

from .errors import (CGBreakdown, ConfigError, EncoderConvergenceWarning, NonFiniteLoss,
                     SolverAbort, TensorFileError, UnsupportedOperation)
from .latentmap import LatentMap, identity_map, linear_map, mlp_map
from .metrics import MCMoments, mc_moments, measurement_residual, psnr, ssim
from .operators import (ForwardOperator, Measurement, add_noise, fbp_reconstruct, make_radon,
                        pseudoinverse_apply)
from .optim import (ConsistencyConfig, latent_consistency, pixel_consistency_cg,
                    pixel_consistency_closed_form)
from .prior import GaussianMixturePrior, isotropic_mixture, posterior_z0_given_zt, score_t
from .sampler import (ReconstructionReport, SamplerConfig, ddim_sample, ddim_step,
                      latent_dps_solve, resample_solve, stochastic_encode, stochastic_resample,
                      tweedie_estimate)
from .schedule import NoiseSchedule, ResampleTimetable, build_linear_schedule, build_timetable

__version__ = "0.1.0"

__all__ = [
    "CGBreakdown", "ConfigError", "EncoderConvergenceWarning", "NonFiniteLoss", "SolverAbort",
    "TensorFileError", "UnsupportedOperation", "LatentMap", "identity_map", "linear_map",
    "mlp_map", "MCMoments", "mc_moments", "measurement_residual", "psnr", "ssim",
    "ForwardOperator", "Measurement", "add_noise", "fbp_reconstruct", "make_radon",
    "pseudoinverse_apply", "ConsistencyConfig", "latent_consistency", "pixel_consistency_cg",
    "pixel_consistency_closed_form", "GaussianMixturePrior", "isotropic_mixture",
    "posterior_z0_given_zt", "score_t", "ReconstructionReport", "SamplerConfig", "ddim_sample",
    "ddim_step", "latent_dps_solve", "resample_solve", "stochastic_encode",
    "stochastic_resample", "tweedie_estimate", "NoiseSchedule", "ResampleTimetable",
    "build_linear_schedule", "build_timetable",
]
