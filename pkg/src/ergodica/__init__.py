"""Numerical laboratory for random dynamical systems with unbounded shocks:
invariant laws, bounded-Lipschitz distances, approximation metrics and
state-space likelihoods."""

__version__ = "0.1.0"

from .approx import (ApproximationFamily, ControlledPerturbation, ExhaustingCompacts, GridInterp,
                     MetricEstimate, TestFunctionBank, default_bank, metric_d, metric_dC1, metric_transport,
                     operator_strong_convergence, realize, realize_model)
from .blmetric import BLDistanceResult, bl_distance
from .dynsys import (MeasurementMap, StateSpaceModel, TransitionMap, linear_gaussian_model, model_from_config,
                     simulate_observations, simulate_path, solve_shocks, step, zoo_ar1, zoo_contraction,
                     zoo_linear_gaussian, zoo_log_growth)
from .errors import *  # noqa: F401,F403
from .kernels import LogNormalKernel, MixtureKernel, NormalKernel, ProductKernel, ShockKernel
from .likelihood import (JacobianSpec, LikelihoodEstimate, ObservationSeries, conditional_density,
                         jacobian_det, kalman_loglik, likelihood_convergence_sweep, smc_loglik)
from .measure import (BoundReport, EmpiricalMeasure, GeometricRateFit, check_error_bound, estimate_invariant,
                      fit_geometric_rate, invariant_convergence_sweep, pushforward)
from .rng import RandomStream
