"""Attribute-based V2V/V2I authorization engine and cloudlet relay simulator."""

__version__ = "0.1.0"

from .attributes import (
    AttributeSchema,
    AttributeStore,
    AttType,
    EntityId,
    EntityKind,
    SYSTEM,
    load_config,
    load_config_file,
)
from .policy import PolicyEngine, parse_policies, parse_policy

__all__ = [
    "AttributeSchema",
    "AttributeStore",
    "AttType",
    "EntityId",
    "EntityKind",
    "PolicyEngine",
    "SYSTEM",
    "load_config",
    "load_config_file",
    "parse_policies",
    "parse_policy",
    "__version__",
]
