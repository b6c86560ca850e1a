"""Expectation-value models of quantum-dot lasers: dynamics, steady states,
thresholds, coherence and laser frequency."""

__version__ = "0.1.0"

from .model import (CimState, ModelParams, TpmState, cim_rhs, cim_rhs_lab, decorrelate3,
                    decorrelate4, generalized_std, tpm_rhs, tpm_rhs_lab)
from .integrator import IntegrationError, IntegratorConfig, Trajectory, integrate
from .steady_state import (Branch, ConvergenceError, FixedPoint, ThresholdReport,
                           continue_branch, lasing_fixed_point, newton_fixed_point,
                           nonlasing_fixed_point_cim, nonlasing_fixed_point_tpm,
                           tpm_threshold_analytic)
from .coherence import (CorrelationSeries, RegressionSystem, g1_from_regression,
                        regression_system_cim_nl, regression_system_tpm_nl, schawlow_townes)
from .spectrum import SpectrumResult, laser_frequency, power_spectrum, time_average_frequency

__all__ = [
    "Branch", "CimState", "ConvergenceError", "CorrelationSeries", "FixedPoint",
    "IntegrationError", "IntegratorConfig", "ModelParams", "RegressionSystem",
    "SpectrumResult", "ThresholdReport", "TpmState", "Trajectory", "cim_rhs", "cim_rhs_lab",
    "continue_branch", "decorrelate3", "decorrelate4", "g1_from_regression",
    "generalized_std", "integrate", "laser_frequency", "lasing_fixed_point",
    "newton_fixed_point", "nonlasing_fixed_point_cim", "nonlasing_fixed_point_tpm",
    "power_spectrum", "regression_system_cim_nl", "regression_system_tpm_nl",
    "schawlow_townes", "time_average_frequency", "tpm_rhs", "tpm_rhs_lab",
    "tpm_threshold_analytic",
]
