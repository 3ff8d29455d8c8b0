"""Packet-level simulator and analytic models for TCP over DiffServ Assured Forwarding."""

from .config import ConfigError, ScenarioConfig, load_scenario, validate
from .core import FlowSpec, Packet, PacketColor, ProvisioningRegime, classify_provisioning
from .sim import RunResult, run_scenario

__all__ = [
    "ConfigError", "FlowSpec", "Packet", "PacketColor", "ProvisioningRegime", "RunResult",
    "ScenarioConfig", "classify_provisioning", "load_scenario", "run_scenario", "validate",
]
__version__ = "0.1.0"
