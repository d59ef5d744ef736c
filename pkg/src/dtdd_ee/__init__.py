"""Energy-efficiency optimization of dynamic-TDD cell-free massive MIMO.

The package simulates a cell-free network whose UL/DL switching point,
power-control coefficients and large-scale fading decoding weights are
jointly tuned for maximum energy efficiency by successive convex
approximation, and benchmarks the result against heuristic switching-point
baselines over Monte-Carlo channel realizations.
"""

from .config import SystemConfig, default_system, thermal_noise_power_w
from .convexify import (OPTIMIZE, ScaState, SwitchMode, build_subproblem,
                        compose_dl_terms, compose_ul_terms, fixed_switch)
from .harness import (CASES, CampaignConfig, CampaignSummary, CaseSpec,
                      run_campaign, sample_qos, summarize)
from .netmodel import (LargeScale, NetworkGeometry, PlacementError,
                       draw_large_scale, estimate_quality, generate_geometry,
                       large_scale_fading, toroidal_distance)
from .perfeval import (OperatingPoint, PerformanceReport, QosRequirements,
                       evaluate, sinr_downlink, sinr_uplink,
                       spectral_efficiencies, total_power)
from .program import ConvexProgram, VariableCatalog
from .sca import (InfeasibilityVerdict, RoundingReport, ScaOptions,
                  SchemeOutcome, baseline_switch, initialize, round_switch,
                  run, run_scheme)
from .solver import Solution, phase1, solve
from .surrogates import bilinear_lower, bilinear_upper, log_sinr_lower

__version__ = "0.1.0"

__all__ = [
    "SystemConfig", "default_system", "thermal_noise_power_w",
    "LargeScale", "NetworkGeometry", "PlacementError", "draw_large_scale",
    "estimate_quality", "generate_geometry", "large_scale_fading",
    "toroidal_distance",
    "OperatingPoint", "PerformanceReport", "QosRequirements", "evaluate",
    "sinr_downlink", "sinr_uplink", "spectral_efficiencies", "total_power",
    "bilinear_lower", "bilinear_upper", "log_sinr_lower",
    "ConvexProgram", "VariableCatalog",
    "OPTIMIZE", "ScaState", "SwitchMode", "build_subproblem",
    "compose_dl_terms", "compose_ul_terms", "fixed_switch",
    "Solution", "phase1", "solve",
    "InfeasibilityVerdict", "RoundingReport", "ScaOptions", "SchemeOutcome",
    "baseline_switch", "initialize", "round_switch", "run", "run_scheme",
    "CASES", "CampaignConfig", "CampaignSummary", "CaseSpec", "run_campaign",
    "sample_qos", "summarize",
]
