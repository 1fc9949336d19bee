"""Discrete-event simulator of SDN-assisted networked music performance."""

from .controller import Controller, ControllerConfig, TransitionEvent
from .delay import (
    AudioConfig,
    DelayBreakdown,
    SoundcardProfile,
    blocking_delay,
    blocking_delta_both_sides,
    gain,
    mouth_to_ear,
)
from .netsim import LatencyInjection, Link, Network, PathRoute, Simulator, Topology, enumerate_paths
from .runner import compare_modes, run_scenario
from .scenario import Scenario, load_paper_scenario, load_scenario, validate_scenario

__version__ = "0.1.0"

__all__ = [
    "AudioConfig",
    "Controller",
    "ControllerConfig",
    "DelayBreakdown",
    "LatencyInjection",
    "Link",
    "Network",
    "PathRoute",
    "Scenario",
    "Simulator",
    "SoundcardProfile",
    "Topology",
    "TransitionEvent",
    "blocking_delay",
    "blocking_delta_both_sides",
    "compare_modes",
    "enumerate_paths",
    "gain",
    "load_paper_scenario",
    "load_scenario",
    "mouth_to_ear",
    "run_scenario",
    "validate_scenario",
]
