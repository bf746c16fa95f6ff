"""Decentralized stochastic gradient tracking with heavy-ball momentum over
time-varying directed networks, with the tools to check its analysis."""

from .engine import RunSetup, run, step_dsgd, step_dsgt, step_dsgtm_tv
from .graph import Digraph, DigraphSeq, GeneratorSpec, generate_sequence, graph_stats
from .harness import ExperimentConfig, load_config, run_experiment
from .mixing import MixingPair, build_mixing, validate_mixing

__all__ = [
    "Digraph", "DigraphSeq", "ExperimentConfig", "GeneratorSpec", "MixingPair", "RunSetup",
    "build_mixing", "generate_sequence", "graph_stats", "load_config", "run", "run_experiment",
    "step_dsgd", "step_dsgt", "step_dsgtm_tv", "validate_mixing",
]
