"""Generalized one-fiber left-ventricle model with a closed circulation."""

from .kernels import KPA_TO_MMHG, USING_NUMBA
from .parameters import (CardiacState, CirculationParameters, CorrectionFactors,
                         FACTOR_NAMES, ROMParameters, default_parameters)
from .relations import (active_fiber_stress, cavity_pressure, f_cylindrical,
                        f_generalized, f_iso, f_rsym, f_twitch, fiber_strain,
                        linearization_error_scan, passive_fiber_stress,
                        sarcomere_length, taylor_coefficients,
                        total_fiber_stress)
from .simulate import (HemodynamicSummary, PVTrace, SimulationResult,
                       circulation_step, contractile_step, init_end_diastole,
                       run_simulation, simulate, summarize, write_traces_csv)

__all__ = [
    "KPA_TO_MMHG", "USING_NUMBA",
    "CardiacState", "CirculationParameters", "CorrectionFactors",
    "FACTOR_NAMES", "ROMParameters", "default_parameters",
    "active_fiber_stress", "cavity_pressure", "f_cylindrical", "f_generalized",
    "f_iso", "f_rsym", "f_twitch", "fiber_strain", "linearization_error_scan",
    "passive_fiber_stress", "sarcomere_length", "taylor_coefficients",
    "total_fiber_stress",
    "HemodynamicSummary", "PVTrace", "SimulationResult", "circulation_step",
    "contractile_step", "init_end_diastole", "run_simulation", "simulate",
    "summarize", "write_traces_csv",
]
