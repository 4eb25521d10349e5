"""Exception hierarchy shared across the package.

Every domain failure derives from CloudletSimError so callers (CLI, TCP
server) can map "domain error" to exit code 1 / an error frame without
enumerating subtypes.
"""

from __future__ import annotations


class CloudletSimError(Exception):
    """Base class for all domain errors."""


# --- attribute model ---------------------------------------------------------

class DuplicateAttribute(CloudletSimError):
    pass


class EmptyRange(CloudletSimError):
    pass


class UnknownAttribute(CloudletSimError):
    pass


class OutOfRange(CloudletSimError):
    pass


class TypeMismatch(CloudletSimError):
    pass


class UnknownEntity(CloudletSimError):
    pass


class DuplicateEntity(CloudletSimError):
    pass


class InvalidAssociation(CloudletSimError):
    pass


# --- policy language ---------------------------------------------------------

class PolicySyntaxError(CloudletSimError):
    """Parse failure with source position and the expectation that failed."""

    def __init__(self, message: str, line: int, col: int, expected: str = ""):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col
        self.expected = expected


class UnboundVariable(PolicySyntaxError):
    pass


class UnknownFormal(PolicySyntaxError):
    pass


class UnknownOperation(CloudletSimError):
    pass


class ArityMismatch(CloudletSimError):
    pass


class DuplicateOperation(CloudletSimError):
    pass


# --- alert rules -------------------------------------------------------------

class UnknownAlertType(CloudletSimError):
    pass


class MalformedCommand(CloudletSimError):
    pass


class Unauthorized(CloudletSimError):
    pass


# --- broker ------------------------------------------------------------------

class NotRegistered(CloudletSimError):
    pass


class DuplicateName(CloudletSimError):
    pass


class NotMember(CloudletSimError):
    pass


class SendDenied(CloudletSimError):
    """Send authorization failed; carries the time spent deciding (us)."""

    def __init__(self, message: str, policy_us: float = 0.0):
        super().__init__(message)
        self.policy_us = policy_us


class CapacityExceeded(CloudletSimError):
    pass


class QueueOverflow(CloudletSimError):
    pass


class UnknownTopic(CloudletSimError):
    pass


class MalformedMessage(CloudletSimError):
    pass


# --- geo / scenario ----------------------------------------------------------

class UnknownVehicle(CloudletSimError):
    pass


class EmptyPath(CloudletSimError):
    pass


class ConfigError(CloudletSimError):
    """Scenario/config validation failure; `path` is the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
