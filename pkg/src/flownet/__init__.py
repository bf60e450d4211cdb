"""Dynamic flow networks under stochastic cyber-physical disruptions."""

from .network import Network, build_network, access_sets, min_cut, max_flow_p1
from .flow import FlowFunction, ModedFlow, FlowTable, mode_capacity
from .modes import ModeSystem, steady_state, sample_path, observe
from .dynamics import System
from .invariant import InvariantBox

__all__ = [
    "Network",
    "build_network",
    "access_sets",
    "min_cut",
    "max_flow_p1",
    "FlowFunction",
    "ModedFlow",
    "FlowTable",
    "mode_capacity",
    "ModeSystem",
    "steady_state",
    "sample_path",
    "observe",
    "System",
    "InvariantBox",
]

__version__ = "0.1.0"
