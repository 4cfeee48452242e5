"""Runtime-verified self-adaptation.

Parametric Markov models verified at runtime drive a MAPE controller whose
own correctness is model-checked at design time; every adaptation decision
is backed by an assurance argument built from the verification evidence.
"""

from .automata import DeadlockFree, Invariant, LeadsTo, check, compose_and_explore, load_network
from .controller import ControllerReport, verify_controller, verify_generic_suite
from .fx import FxApplication, FxConfig, make_fx_application
from .gsn import ArgumentEngine, instantiate_full, instantiate_partial, load_gsn_pattern, render, validate
from .mape import Adapt, Failsafe, Keep, KnowledgeRepository, analyze, run_loop
from .models import Bound, CumulReward, MarkovModel, ModelKind, ModelTemplate, ProbReach, ReachReward
from .runner import RunManifest, run_scenario, summarize_archive
from .uuv import UuvApplication, UuvConfig, make_uuv_application
from .verifier import evaluate, verify_config_space

__version__ = "0.1.0"

__all__ = [
    "Adapt",
    "ArgumentEngine",
    "Bound",
    "ControllerReport",
    "CumulReward",
    "DeadlockFree",
    "Failsafe",
    "FxApplication",
    "FxConfig",
    "Invariant",
    "Keep",
    "KnowledgeRepository",
    "LeadsTo",
    "MarkovModel",
    "ModelKind",
    "ModelTemplate",
    "ProbReach",
    "ReachReward",
    "RunManifest",
    "UuvApplication",
    "UuvConfig",
    "analyze",
    "check",
    "compose_and_explore",
    "evaluate",
    "instantiate_full",
    "instantiate_partial",
    "load_gsn_pattern",
    "load_network",
    "make_fx_application",
    "make_uuv_application",
    "render",
    "run_loop",
    "run_scenario",
    "summarize_archive",
    "validate",
    "verify_config_space",
    "verify_controller",
    "verify_generic_suite",
]
