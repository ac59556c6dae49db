"""Discrete-event simulator for Cognitive Packet Network routing with RNN learning."""

from .config import ConfigError, RunConfig, default_config, load_config, parse_config
from .core import (FlowKey, FlowSpec, GeneratorKind, GeneratorSpec, LinkSpec, NodeId,
                   QosGoal, Scenario, ScenarioError, Topology, testbed8, validate_scenario)
from .simnet import BufferParams, SimParams, SimResult, Simulator, simulate

__version__ = "0.1.0"

__all__ = [
    "BufferParams", "ConfigError", "FlowKey", "FlowSpec", "GeneratorKind", "GeneratorSpec",
    "LinkSpec", "NodeId", "QosGoal", "RunConfig", "Scenario", "ScenarioError", "SimParams",
    "SimResult", "Simulator", "Topology", "default_config", "load_config", "parse_config",
    "simulate", "testbed8", "validate_scenario",
]
