"""Tri-hybrid beamforming with radiation-center reconfigurable antenna arrays.

Digital and phase-shifter precoders are designed for spectral or energy
efficiency at a fixed selection of radiation centers, and a coordinate
search picks which radiation centers feed the antenna ports.
"""
from .ee_solvers import EeOptions, solve_ee_dqtfp, solve_ee_ldtfp
from .harness import ExperimentSpec, ResultRow, emit_csv, emit_plotdata, run_experiment
from .metrics import BeamformerSet, PowerModel, energy_efficiency, sinr_per_user, spectral_efficiency, total_power
from .oracles import enumerate_feasible, exhaustive_rc_opt, finite_difference_gradient
from .pdd import SeOptions, solve_se, solve_se_batch
from .rc_cod import CodOptions, ee_inner_solver, init_selection, run_cod, se_inner_solver
from .system_model import (ExtendedChannel, RcSelection, Structure, SystemConfig, apply_selection,
                           check_feasible, fpa_baseline_selection, generate_extended_channel)

__version__ = "0.1.0"

__all__ = [
    "BeamformerSet", "CodOptions", "EeOptions", "ExperimentSpec", "ExtendedChannel", "PowerModel",
    "RcSelection", "ResultRow", "SeOptions", "Structure", "SystemConfig", "apply_selection",
    "check_feasible", "ee_inner_solver", "emit_csv", "emit_plotdata", "energy_efficiency", "enumerate_feasible",
    "exhaustive_rc_opt", "finite_difference_gradient", "fpa_baseline_selection",
    "generate_extended_channel", "init_selection", "run_cod", "run_experiment", "se_inner_solver", "sinr_per_user",
    "solve_ee_dqtfp", "solve_ee_ldtfp", "solve_se", "solve_se_batch", "spectral_efficiency", "total_power",
]
