"""Two-stage robust economic dispatch where curtailment caps shape the uncertainty set."""

from importlib.resources import files

from .accg import DispatchSolution, IterationLog, check_run_invariants, run_accg
from .active_set import ActiveSet, identify_active, recover_scenario
from .case import DispatchCase, case_from_dict, case_to_dict, load_case, save_case
from .ddu import Scenario, UncertaintyModel, enumerate_vertices, membership
from .errors import DispatchError, MaxIterations
from .evaluator import compare_models, evaluate_out_of_sample, run_model2
from .generate import gen_case
from .nccg import run_nccg
from .predispatch import FirstStageDecision
from .recourse import solve_fcp, solve_recourse, solve_sp

__version__ = "0.1.0"


def bundled_case(name: str) -> DispatchCase:
    """Load a case shipped in the package data directory, e.g. ``"toy_two_rg"``."""
    return load_case(files(__package__) / "data" / f"{name}.json")


__all__ = [
    "ActiveSet", "DispatchCase", "DispatchError", "DispatchSolution", "FirstStageDecision",
    "IterationLog", "MaxIterations", "Scenario", "UncertaintyModel", "check_run_invariants",
    "bundled_case", "case_from_dict", "case_to_dict", "compare_models", "enumerate_vertices",
    "evaluate_out_of_sample", "gen_case", "identify_active", "load_case", "membership",
    "recover_scenario", "run_accg", "run_model2", "run_nccg", "save_case", "solve_fcp",
    "solve_recourse", "solve_sp",
]
