"""Genome-programmed self-replicating agents on a simulated network."""

from .codec import AttrDict, Genome, decode, encode, format_text, parse_text, validate
from .netsim import Metrics, Scenario, Simulation, load_scenario, parse_scenario, run

__version__ = "0.1.0"

__all__ = [
    "AttrDict",
    "Genome",
    "Metrics",
    "Scenario",
    "Simulation",
    "decode",
    "encode",
    "format_text",
    "load_scenario",
    "parse_scenario",
    "parse_text",
    "run",
    "validate",
]
