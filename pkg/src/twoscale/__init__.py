"""Particle harness for slow-fast distribution-dependent diffusions.

The package simulates an interacting particle system with a fast
mean-reverting component, builds the corresponding averaged equation
(from a closed form or by sampling the frozen dynamics' invariant
measure), and measures how fast the slow component of the two-scale
system approaches the averaged one as the scale separation shrinks.
"""

__version__ = "0.1.0"

from .noise import (NoiseError, NoiseStream, Role, aggregate_increments,
                    gaussian_increment, philox4x32)
from .measures import (MeasureError, ParticleCloud, w2_1d, w2_exact_smallN,
                       w2_sliced)
from .models import (AssumptionReport, CoefficientSet, LinearBenchmarkParams,
                     ModelError, convolution_example, linear_benchmark,
                     probe_assumptions)
from .solvers import (AveragedEnsemble, AveragedRun, AuxiliaryRun,
                      BbarEstimate, BbarSource, DecayCurve, ErgodicConfig,
                      SlowFastEnsemble, SlowFastRun, SolverError, TimeGrid,
                      ergodic_decay, estimate_bbar, sample_invariant,
                      simulate_auxiliary, simulate_averaged, simulate_frozen,
                      simulate_slowfast, step_averaged, step_slowfast)
from .poisson import PhiEstimate, PoissonError, estimate_phi, residual_check
from .experiments import (ConvergenceReport, DiagnosticsConfig,
                          DiagnosticsReport, ExperimentError, RateFit,
                          convergence_study, deviation_matrix,
                          diagnostics_suite, rate_fit, stable_step,
                          strong_error, study_from_matrices)

__all__ = [
    "__version__",
    "NoiseError", "NoiseStream", "Role", "aggregate_increments", "philox4x32",
    "gaussian_increment", "MeasureError", "ParticleCloud", "w2_1d", "w2_exact_smallN", "w2_sliced",
    "AssumptionReport", "CoefficientSet", "LinearBenchmarkParams",
    "ModelError", "convolution_example", "linear_benchmark",
    "probe_assumptions",
    "AveragedEnsemble", "AveragedRun", "AuxiliaryRun", "BbarEstimate",
    "BbarSource", "DecayCurve", "ErgodicConfig", "SlowFastEnsemble",
    "SlowFastRun", "SolverError", "TimeGrid", "ergodic_decay",
    "estimate_bbar", "sample_invariant", "simulate_auxiliary",
    "simulate_averaged", "simulate_frozen", "simulate_slowfast",
    "step_averaged", "step_slowfast",
    "PhiEstimate", "PoissonError", "estimate_phi", "residual_check",
    "ConvergenceReport", "DiagnosticsConfig", "DiagnosticsReport",
    "ExperimentError", "RateFit", "convergence_study", "deviation_matrix",
    "diagnostics_suite", "rate_fit", "stable_step", "strong_error",
    "study_from_matrices",
]
