"""Discrete-event NDN forwarding simulator with stochastic adaptive forwarding."""
from .harness import SingleNodeHarness, golden_checks
from .ndn import ContentStore, Data, Fib, FibEntry, Interest, Name, Pit
from .saf import DROP_FACE, ForwardingTable, SafParams, apply_period_update, convergence_bound, select_face
from .scenario import ScenarioConfig, load_config, parse_config, run_scenario
from .sim import SimConfig, Simulation
from .strategies import STRATEGIES
from .topology import Topology, TopologySpec, connectivity, generate

__version__ = "0.1.0"

__all__ = [
    "Name", "Interest", "Data", "Pit", "ContentStore", "Fib", "FibEntry",
    "DROP_FACE", "SafParams", "ForwardingTable", "apply_period_update", "select_face",
    "convergence_bound", "SingleNodeHarness", "golden_checks",
    "Topology", "TopologySpec", "generate", "connectivity",
    "STRATEGIES", "Simulation", "SimConfig",
    "ScenarioConfig", "parse_config", "load_config", "run_scenario",
]
