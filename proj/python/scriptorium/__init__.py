"""Scribal error detection and gap filling over a masked language model."""

from ._scriptorium import (
    CapabilityError,
    ConfigError,
    IngestionError,
    NgramModel,
    ScriptoriumError,
    TransportError,
    canonical_fill,
    check_config,
    commands,
    count_letters,
    dkw_epsilon,
    normalize,
    replay,
    run,
    scribal_distance,
)

__version__ = "0.1.0"

__all__ = [
    "CapabilityError",
    "ConfigError",
    "IngestionError",
    "NgramModel",
    "ScriptoriumError",
    "TransportError",
    "canonical_fill",
    "check_config",
    "commands",
    "count_letters",
    "dkw_epsilon",
    "normalize",
    "replay",
    "run",
    "scribal_distance",
]
