"""Mix-and-check batched secure inference: planning, simulation and verification."""
__version__ = "0.1.0"

from .combinatorics import GameParams, Prob, binom_log2, cheat_bound, prob_cheat_success
from .datamix import prepare_mixed, unmix
from .model import FixedPointNetwork, ReverseSigmoid, load_model
from .planner import SecurityPlan, search_params
from .protocol import MixAndCheck, RunReport, run_protocol
from .verify import VerificationReport, VerifyConfig, verdict

__all__ = [
    "GameParams",
    "Prob",
    "binom_log2",
    "cheat_bound",
    "prob_cheat_success",
    "prepare_mixed",
    "unmix",
    "FixedPointNetwork",
    "ReverseSigmoid",
    "load_model",
    "SecurityPlan",
    "search_params",
    "MixAndCheck",
    "RunReport",
    "run_protocol",
    "VerificationReport",
    "VerifyConfig",
    "verdict",
]
