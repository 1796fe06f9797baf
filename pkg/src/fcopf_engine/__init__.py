"""Fault-current constrained optimal power flow for unbalanced distribution networks."""
from .fcopf import build_fcopf, compute_objective_scaling, solve_fcopf
from .netmodel import Network, NetworkError, build_cigre_lv_fixture, load_network, parse_network
from .nlp import SolveDiagnostics, SolveStatus, solve_nlp
from .opf import build_opf, solve_opf
from .powerflow import PhasorState, PowerFlowError, run_power_flow
from .results import StudyResult
from .shortcircuit import fault_studies, solve_short_circuit

__version__ = "0.1.0"

__all__ = [
    "Network",
    "NetworkError",
    "PhasorState",
    "PowerFlowError",
    "SolveDiagnostics",
    "SolveStatus",
    "StudyResult",
    "build_cigre_lv_fixture",
    "build_fcopf",
    "build_opf",
    "compute_objective_scaling",
    "fault_studies",
    "load_network",
    "parse_network",
    "run_power_flow",
    "solve_fcopf",
    "solve_nlp",
    "solve_opf",
    "solve_short_circuit",
]
