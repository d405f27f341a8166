"""Periodically driven Markov jump processes: simulation, steady states,
level 2.5 rate functionals, entropy flows and contraction."""

__version__ = "0.1.0"

from .model import (Graph, ProtocolError, RateProtocol, build_example, complete_graph,
                    dual_reversed_protocol, load_protocol, reversed_protocol, two_state_graph,
                    validate_protocol)
from .grid import PeriodicCurrent, PeriodicDensity, PeriodicFlow, continuity_residual
from .steady import accompanying_distribution, oscillatory_state, propagator, two_state_pi
from .simulate import accumulate, path_entropy_flows, sample_path
from .ldp import RateValue, q_from_current, rate_I, rate_I_hat
from .entropy import gc_check, s_ex, s_naive, s_tot
from .contract import ContractionProblem, contract, scgf

__all__ = [
    "Graph", "ProtocolError", "RateProtocol", "build_example", "complete_graph",
    "dual_reversed_protocol", "load_protocol", "reversed_protocol", "two_state_graph",
    "validate_protocol", "PeriodicCurrent", "PeriodicDensity", "PeriodicFlow",
    "continuity_residual", "accompanying_distribution", "oscillatory_state", "propagator",
    "two_state_pi", "accumulate", "path_entropy_flows", "sample_path", "RateValue",
    "q_from_current", "rate_I", "rate_I_hat", "gc_check", "s_ex", "s_naive", "s_tot",
    "ContractionProblem", "contract", "scgf",
]
