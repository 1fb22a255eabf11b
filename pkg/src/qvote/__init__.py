"""Deterministic simulator of anonymous quantum key distribution and a quantum election built on it."""
from .bits import BitString
from .election import Election, ElectionConfig, ElectionResult
from .errors import ConfigError, InvalidArgument, ProtocolViolation, QvoteError, Rejected, SessionAborted
from .harness import Scenario, estimate_detection_rate, load_scenario, run_scenario, verify_transcript

__all__ = [
    "BitString", "Election", "ElectionConfig", "ElectionResult", "ConfigError", "InvalidArgument",
    "ProtocolViolation", "QvoteError", "Rejected", "SessionAborted", "Scenario",
    "estimate_detection_rate", "load_scenario", "run_scenario", "verify_transcript",
]
__version__ = "0.1.0"
