"""Exact filtering, smoothing and Monte Carlo inference for dynamic probit
state-space models built on unified skew-normal distributions.

The state posterior of a linear-Gaussian state equation observed through
dichotomized Gaussian utilities stays in the unified skew-normal family, with
parameters that update by closed-form recursions.  This package implements
those recursions, the batch smoothing construction, exact i.i.d. samplers,
an optimal-proposal particle filter, baseline filters, and an evaluation
harness, behind both a library API and a CLI (``sunfilter``).
"""

from .errors import (ConfigError, ConvergenceError, DegeneracyError, DimensionError,
                     IdentifiabilityError, InfeasibleRegionError, MatrixError,
                     NumericalError, SunFilterError, ValidationError)
from .gauss import (OrthantProblem, SampleMatrix, bvn_cdf, chol_spd, mvn_cdf,
                    mvn_cdf_batch, orthant_prob, tmvn_sample, trandn)
from .model import BinarySeries, LatentPath, ModelSpec, sign_matrix, simulate, validate
from .sun import SunParams, density, density_batch, marginal, mc_moments, sample
from .filtering import (init_filter, obs_predictive, optimal_proposal, predict_step,
                        predictive_series, run_filter, update_step)
from .smoothing import (StackedSystem, build_stacked, joint_smoothing,
                        marginal_likelihood, marginal_smoothing, marglik_grid)
from .samplers import (ParticleCloud, bootstrap_pf, ekf, filtering_sampler, optimal_pf,
                       predictive_sampler, rb_pf, resample, smoothing_sampler)
from .evaluate import (GridDensity, classification_report, functional_estimate,
                       grid_density, ranking_experiment, wasserstein1d)

__version__ = "0.1.0"
