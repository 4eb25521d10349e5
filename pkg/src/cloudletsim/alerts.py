"""Alert classification rules: tire-slip thresholding, accident routing and
the rogue deny list.

A tire-slip report escalates to a High notification when at least two
distinct vehicles report it inside the counting window, or immediately when
police or a medical vehicle reports it; a single regular vehicle yields a Low
notification.  Accidents route to the police and medical topics regardless of
source.  Messages from rogue-listed vehicles are suppressed outright.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .errors import MalformedCommand, UnknownAlertType

#: Topic names are bit-exact as used on the wire.
TOPIC_DEVICES = "test/devices"
TOPIC_MEDICAL = "test/medical"
TOPIC_POLICE = "test/police"
TOPIC_ROGUE = "test/Rogue-Vehicle"

RESERVED_TOPICS = (TOPIC_DEVICES, TOPIC_MEDICAL, TOPIC_POLICE, TOPIC_ROGUE)

_NULL_ALERTS = {None, "", "null", "none"}


def normalize_alert(value) -> Optional[str]:
    """Map a raw BSM Alert field to 'TireSlip' | 'Accident' | None."""
    if isinstance(value, str) and value.lower() in _NULL_ALERTS:
        return None
    if value is None:
        return None
    if isinstance(value, str):
        lowered = value.lower()
        if lowered == "tireslip":
            return "TireSlip"
        if lowered == "accident":
            return "Accident"
    raise UnknownAlertType(f"unrecognized Alert value {value!r}")


class DecisionKind(Enum):
    DROP = "drop"
    LOG_ONLY = "log_only"
    NOTIFY = "notify"
    ROGUE = "rogue_detected"


@dataclass(frozen=True)
class Notification:
    topic: str
    text: str


@dataclass(frozen=True)
class Decision:
    kind: DecisionKind
    notifications: tuple[Notification, ...] = ()
    detail: str = ""


@dataclass(frozen=True)
class AlertCondition:
    source_types: Optional[tuple[str, ...]]  # None matches any source
    min_count: int
    text: str
    topics: tuple[str, ...]

    def matches(self, source_type: str, count: int) -> bool:
        if self.source_types is not None and source_type not in self.source_types:
            return False
        return count >= self.min_count


@dataclass(frozen=True)
class AlertRule:
    alert_type: str
    conditions: tuple[AlertCondition, ...]


class AlertRuleSet:
    """Ordered rule table; the first matching condition of the matching alert
    type decides the outcome."""

    def __init__(
        self,
        rules: Sequence[AlertRule],
        rogue_vehicles: Sequence[str] = (),
        window_seconds: float = 10.0,
    ):
        self.rules = {rule.alert_type: rule for rule in rules}
        self.initial_rogues = tuple(rogue_vehicles)
        self.window_seconds = float(window_seconds)

    def decide(self, alert_type: str, source_type: str, count: int) -> Decision:
        rule = self.rules.get(alert_type)
        if rule is None:
            raise UnknownAlertType(f"no rule configured for alert {alert_type!r}")
        for cond in rule.conditions:
            if cond.matches(source_type, count):
                return Decision(
                    DecisionKind.NOTIFY,
                    tuple(Notification(t, cond.text) for t in cond.topics),
                    detail=f"{alert_type} count={count} source={source_type}",
                )
        return Decision(
            DecisionKind.LOG_ONLY,
            detail=f"{alert_type} count={count} source={source_type}: no rule matched",
        )

    @classmethod
    def from_config(cls, config: dict, known_topics: Sequence[str] = RESERVED_TOPICS):
        rules = []
        rogues: tuple[str, ...] = ()
        for i, entry in enumerate(config.get("alerts", [])):
            alert_type = entry.get("Alert")
            if not isinstance(alert_type, str):
                raise MalformedCommand(f"alerts[{i}].Alert: missing alert type")
            if alert_type == "Rogue":
                rogues = tuple(entry.get("vehicles", []))
                continue
            conditions = []
            for j, cond in enumerate(entry.get("conditions", [])):
                topics = tuple(cond.get("topics", ()))
                unknown = [t for t in topics if t not in known_topics]
                if unknown:
                    raise MalformedCommand(
                        f"alerts[{i}].conditions[{j}]: undeclared topic(s) {unknown}"
                    )
                source = cond.get("Source")
                conditions.append(
                    AlertCondition(
                        tuple(source) if source is not None else None,
                        int(cond.get("Number", 1)),
                        cond["notification"],
                        topics,
                    )
                )
            rules.append(AlertRule(alert_type, tuple(conditions)))
        return cls(rules, rogues, config.get("window_seconds", 10.0))

    @classmethod
    def from_file(cls, path: str, known_topics: Sequence[str] = RESERVED_TOPICS):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_config(json.load(fh), known_topics)

    @classmethod
    def default(cls) -> "AlertRuleSet":
        return cls.from_config(DEFAULT_RULES_CONFIG)


#: Mirrors the deployed JSON rule table: tire-slip escalation by reporter
#: count and source, accident routing to police/medical, seed rogue list.
DEFAULT_RULES_CONFIG = {
    "window_seconds": 10.0,
    "alerts": [
        {
            "Alert": "TireSlip",
            "conditions": [
                {
                    "Source": ["Vehicle"],
                    "Number": 2,
                    "notification": "Ice-threat High",
                    "topics": [TOPIC_DEVICES],
                },
                {
                    "Source": ["Police", "Medical"],
                    "Number": 1,
                    "notification": "Ice-threat High",
                    "topics": [TOPIC_DEVICES],
                },
                {
                    "Source": ["Vehicle"],
                    "Number": 1,
                    "notification": "Ice Threat - Low",
                    "topics": [TOPIC_DEVICES],
                },
            ],
        },
        {
            "Alert": "Accident",
            "conditions": [
                {
                    "Number": 1,
                    "notification": "Accident- Require Assistance",
                    "topics": [TOPIC_MEDICAL, TOPIC_POLICE],
                }
            ],
        },
        {"Alert": "Rogue", "vehicles": ["Car-X", "Car-Y", "Vehicle-Z"]},
    ],
}


class AlertWindow:
    """Distinct-reporter counting with time-based eviction.

    A vehicle counts once per window no matter how often it reports; entries
    whose last report is older than the window length are evicted before any
    count is taken.
    """

    def __init__(self, window_seconds: float = 10.0):
        self.window_seconds = float(window_seconds)
        self._reports: dict[str, dict[str, float]] = {}  # alert_type -> {vehicle: last_t}

    def record(self, alert_type: str, vehicle: str, now: float) -> int:
        """Record a report and return the distinct-reporter count after
        eviction (the reporting vehicle included)."""
        self.evict(now)
        bucket = self._reports.setdefault(alert_type, {})
        bucket[vehicle] = max(now, bucket.get(vehicle, now))
        return len(bucket)

    def distinct_count(self, alert_type: str, now: float) -> int:
        self.evict(now)
        return len(self._reports.get(alert_type, {}))

    def evict(self, now: float) -> "AlertWindow":
        for bucket in self._reports.values():
            stale = [v for v, t in bucket.items() if now - t > self.window_seconds]
            for v in stale:
                del bucket[v]
        return self


def evict_window(window: AlertWindow, now: float) -> AlertWindow:
    return window.evict(now)


class RogueList:
    """Exact-match vehicle deny list; the revision counter bumps on every
    ADD/DELETE command processed."""

    def __init__(self, names: Sequence[str] = ()):
        self._names = set(names)
        self.revision = 0
        self._lock = threading.Lock()

    def __contains__(self, name: str) -> bool:
        return name in self._names

    def names(self) -> list[str]:
        return sorted(self._names)

    def add(self, name: str) -> None:
        with self._lock:
            self._names.add(name)
            self.revision += 1

    def delete(self, name: str) -> None:
        with self._lock:
            self._names.discard(name)
            self.revision += 1


def apply_rogue_update(cmd: dict, rogues: RogueList) -> dict:
    """Apply an ADD/DELETE/LIST command; returns the JSON-shaped response.

    The update is effective for the next message processed by the pipeline
    that owns `rogues`.  Authorization of the publisher happens upstream.
    """
    if not isinstance(cmd, dict) or "Alert" not in cmd:
        raise MalformedCommand("rogue command must be {'Alert': ..., 'myVehicle': ...}")
    op = cmd.get("Alert")
    vehicle = cmd.get("myVehicle")
    if op in ("ADD", "DELETE"):
        if not isinstance(vehicle, str) or not vehicle:
            raise MalformedCommand(f"{op} requires a vehicle name in 'myVehicle'")
        if op == "ADD":
            rogues.add(vehicle)
        else:
            rogues.delete(vehicle)
        return {"Alert": op, "myVehicle": vehicle, "revision": rogues.revision}
    if op == "LIST":
        if vehicle is not None:
            raise MalformedCommand("LIST takes myVehicle = null")
        return {"Alert": "LIST", "myVehicle": None, "vehicles": rogues.names()}
    raise MalformedCommand(f"unknown rogue operation {op!r}")


def classify_and_decide(
    sender: str,
    alert_value,
    source_type: str,
    window: AlertWindow,
    rules: AlertRuleSet,
    rogues: RogueList,
    now: float,
) -> Decision:
    """Pure-ish decision step of the pipeline (it records into `window`).

    Rogue senders are suppressed before anything else, including their
    no-alert traffic, and their reports never feed the counting window.
    """
    if sender in rogues:
        return Decision(DecisionKind.ROGUE, detail=f"sender {sender} is rogue-listed")
    alert_type = normalize_alert(alert_value)  # raises UnknownAlertType
    if alert_type is None:
        return Decision(DecisionKind.LOG_ONLY, detail="no alert")
    count = window.record(alert_type, sender, now)
    return rules.decide(alert_type, source_type, count)
