"""Per-cloudlet pub/sub broker with the policy enforcement pipeline.

A published BSM runs, in order: send authorization, rogue check, no-alert
logging, rule decision, anonymization, then per-subscriber forward
authorization and delivery.  Subscribers only ever receive the two-field
anonymized notification {"message", "myEvent"}; everything else in the BSM
stays at the edge.

The event log is deterministic (logical sequence numbers and simulated time
only); wall-clock durations live in PipelineResult and delivery records,
which metrics consume but the log omits.
"""

from __future__ import annotations

import json
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .alerts import (
    AlertRuleSet,
    AlertWindow,
    DecisionKind,
    RogueList,
    TOPIC_DEVICES,
    TOPIC_MEDICAL,
    TOPIC_POLICE,
    TOPIC_ROGUE,
    RESERVED_TOPICS,
    apply_rogue_update,
)
from .attributes import AttributeStore, EntityId, EntityKind
from .errors import (
    CapacityExceeded,
    CloudletSimError,
    MalformedMessage,
    NotMember,
    NotRegistered,
    QueueOverflow,
    SendDenied,
    Unauthorized,
    UnknownAlertType,
    UnknownEntity,
    UnknownOperation,
    UnknownTopic,
)
from .policy import PolicyEngine
from .registration import CentralController

MAX_MEMBERS = 200
MAX_QUEUE_BYTES = 2_500_000  # 2.5 MB

#: Entity types that get extra reserved-topic subscriptions on join.
_TYPE_TOPICS = {"Police": TOPIC_POLICE, "Medical": TOPIC_MEDICAL}

_KIND_BY_TYPE = {
    "Vehicle": EntityKind.VEHICLE,
    "Police": EntityKind.VEHICLE,
    "Medical": EntityKind.VEHICLE,
    "Infrastructure": EntityKind.INFRASTRUCTURE,
    "User": EntityKind.USER,
}


def shadow_topic(name: str) -> str:
    return f"$aws/things/{name}/shadow/update"


@dataclass(frozen=True)
class BsmMessage:
    """Inbound basic safety message plus its envelope."""

    sender: str
    topic: str
    latitude: float
    longitude: float
    time: str
    velocity: float = 0.0
    direction: str = ""
    elevation: float = 0.0
    posit_accuracy: float = 0.0
    steering_wheel_angle: float = 0.0
    alert: Optional[str] = None
    received_at: float = 0.0

    @classmethod
    def parse(cls, sender: str, topic: str, payload: dict, received_at: float = 0.0):
        reported = _reported_fields(payload)
        lat = _number(reported, "Latitude")
        lon = _number(reported, "Longitude")
        if not (-90.0 <= lat <= 90.0):
            raise MalformedMessage(f"Latitude {lat} outside [-90, 90]")
        if not (-180.0 <= lon <= 180.0):
            raise MalformedMessage(f"Longitude {lon} outside [-180, 180]")
        if "Time" not in reported:
            raise MalformedMessage("missing Time field")
        alert = reported.get("Alert")
        return cls(
            sender=sender,
            topic=topic,
            latitude=lat,
            longitude=lon,
            time=str(reported["Time"]),
            velocity=_number(reported, "Velocity", 0.0),
            direction=str(reported.get("Direction", "")),
            elevation=_number(reported, "Elevation", 0.0),
            posit_accuracy=_number(reported, "Posit. Accuracy", 0.0),
            steering_wheel_angle=_number(reported, "Steering Wheel Angle", 0.0),
            alert=alert,
            received_at=received_at,
        )


def _reported_fields(payload: dict) -> dict:
    try:
        reported = payload["state"]["reported"]
    except (KeyError, TypeError):
        raise MalformedMessage("payload must be {'state': {'reported': {...}}}") from None
    if not isinstance(reported, dict):
        raise MalformedMessage("state.reported must be an object")
    return reported


def _number(reported: dict, key: str, default: Optional[float] = None) -> float:
    if key not in reported:
        if default is None:
            raise MalformedMessage(f"missing {key} field")
        return default
    value = reported[key]
    try:
        return float(value)
    except (TypeError, ValueError):
        raise MalformedMessage(f"{key} is not numeric: {value!r}") from None


def is_position_only(payload: dict) -> bool:
    """Shadow GPS updates carry only position; full BSMs carry more."""
    try:
        reported = payload["state"]["reported"]
    except (KeyError, TypeError):
        return False
    return isinstance(reported, dict) and set(reported) <= {"Latitude", "Longitude"}


@dataclass(frozen=True)
class AlertNotification:
    """Anonymized outbound alert: notification text plus the originating
    BSM's event time, and nothing else."""

    message: str
    my_event: str

    def to_payload(self) -> dict:
        return {"message": self.message, "myEvent": self.my_event}


@dataclass(frozen=True)
class DeliveryRecord:
    subscriber: str
    topic: str
    payload: dict
    cloudlet: str
    sim_time: float
    seq: int
    wall_time: float  # perf_counter at append; metrics only


@dataclass
class PipelineResult:
    status: str  # notified | log_only | rogue | send_denied | dropped_unknown
    cloudlet: str
    delivered: int = 0
    blocked_forward: int = 0
    dropped: int = 0
    notifications: tuple = ()
    policy_us: float = 0.0
    pipeline_us: float = 0.0
    timings: dict = field(default_factory=dict)


class Cloudlet:
    """One edge broker: topic table, member set, rogue list, alert window and
    a byte-bounded inbound queue.  The pipeline is serialized per cloudlet."""

    def __init__(
        self,
        name: str,
        network: "CloudletNetwork",
        max_members: int = MAX_MEMBERS,
        max_queue_bytes: int = MAX_QUEUE_BYTES,
        auto_drain: bool = True,
    ):
        self.name = name
        self.network = network
        self.entity = network.store.register_entity(EntityKind.CLOUDLET, name)
        self.max_members = max_members
        self.max_queue_bytes = max_queue_bytes
        self.auto_drain = auto_drain
        self.topics: dict[str, set[str]] = {t: set() for t in RESERVED_TOPICS}
        self.members: set[str] = set()
        self.rogues = RogueList(network.rules.initial_rogues)
        self.window = AlertWindow(network.rules.window_seconds)
        self.queue: deque = deque()
        self.queued_bytes = 0
        self.stats: Counter = Counter()
        self._lock = threading.RLock()

    # -- membership -----------------------------------------------------------

    def join(self, name: str) -> None:
        if not self.network.controller.is_registered(name):
            raise NotRegistered(f"{name!r} must register with the central controller")
        with self._lock:
            if name in self.members:
                self.network.store.associate(self.network.entity_of(name), self.entity)
                return
            if len(self.members) >= self.max_members:
                raise CapacityExceeded(
                    f"{self.name} is at its {self.max_members}-member limit"
                )
            self.members.add(name)
            self.topics.setdefault(shadow_topic(name), set())
            self.topics[TOPIC_DEVICES].add(name)
            extra = _TYPE_TOPICS.get(self.network.controller.entity_type(name))
            if extra:
                self.topics[extra].add(name)
            self.network.store.associate(self.network.entity_of(name), self.entity)
            self.network.log("join", cloudlet=self.name, entity=name)

    def leave(self, name: str) -> None:
        with self._lock:
            if name not in self.members:
                return
            self.members.discard(name)
            self.topics.pop(shadow_topic(name), None)
            for subscribers in self.topics.values():
                subscribers.discard(name)
            self.network.store.dissociate(self.network.entity_of(name), self.entity)
            self.network.log("leave", cloudlet=self.name, entity=name)

    def subscribe(self, name: str, topic: str) -> None:
        with self._lock:
            if topic not in self.topics:
                raise UnknownTopic(f"{topic!r} does not exist on {self.name}")
            self.topics[topic].add(name)

    # -- publishing -----------------------------------------------------------

    def submit_bsm(self, sender: str, payload: dict, now: float) -> PipelineResult:
        """Enqueue one BSM and (in auto-drain mode) run the pipeline for it.

        Raises NotMember / QueueOverflow; policy denial is reported in the
        result, not raised (the dispatch layer aggregates across cloudlets).
        """
        with self._lock:
            if sender not in self.members:
                raise NotMember(f"{sender!r} is not a member of {self.name}")
            self._enqueue(sender, payload, now)
            if not self.auto_drain:
                return PipelineResult(status="queued", cloudlet=self.name)
            results = self.drain()
        return results[-1]

    def publish_bsm(self, sender: str, payload: dict, now: float) -> PipelineResult:
        """submit_bsm plus the publisher-facing error contract: a policy
        denial raises SendDenied carrying the time spent deciding."""
        result = self.submit_bsm(sender, payload, now)
        if result.status == "send_denied":
            raise SendDenied(
                f"send authorization denied for {sender!r} at {self.name}",
                policy_us=result.policy_us,
            )
        return result

    def _enqueue(self, sender: str, payload: dict, now: float) -> None:
        frame = json.dumps(payload, separators=(",", ":")).encode("utf-8")
        if len(frame) > self.max_queue_bytes:
            raise QueueOverflow(
                f"frame of {len(frame)} bytes exceeds the {self.max_queue_bytes}-byte queue"
            )
        self.queue.append((sender, payload, len(frame), now))
        self.queued_bytes += len(frame)
        while self.queued_bytes > self.max_queue_bytes:
            old_sender, _, old_size, old_now = self.queue.popleft()
            self.queued_bytes -= old_size
            self.stats["queue_dropped"] += 1
            self.network.log(
                "queue_dropped", cloudlet=self.name, sender=old_sender, enqueued_at=old_now
            )

    def drain(self) -> list[PipelineResult]:
        """Process every queued message in receipt order."""
        results = []
        with self._lock:
            while self.queue:
                sender, payload, size, now = self.queue.popleft()
                self.queued_bytes -= size
                results.append(self._process(sender, payload, now))
        return results

    def _process(self, sender: str, payload: dict, now: float) -> PipelineResult:
        t_start = time.perf_counter()
        policy_us = 0.0
        timings: dict[str, float] = {}
        self.network.log("publish", cloudlet=self.name, sender=sender)

        # 1. send authorization
        t0 = time.perf_counter()
        allowed = self._authorize("send", [self.network.entity_of(sender), self.entity])
        timings["authorize_send_us"] = (time.perf_counter() - t0) * 1e6
        policy_us += timings["authorize_send_us"]
        if not allowed:
            self.stats["send_denied"] += 1
            self.network.log("send_denied", cloudlet=self.name, sender=sender)
            return PipelineResult(
                status="send_denied", cloudlet=self.name, dropped=1,
                policy_us=policy_us,
                pipeline_us=(time.perf_counter() - t_start) * 1e6,
                timings=timings,
            )

        try:
            msg = BsmMessage.parse(sender, shadow_topic(sender), payload, now)
        except MalformedMessage as err:
            self.stats["dropped_malformed"] += 1
            self.network.log(
                "dropped_malformed", cloudlet=self.name, sender=sender, reason=str(err)
            )
            return PipelineResult(
                status="dropped_malformed", cloudlet=self.name, dropped=1,
                policy_us=policy_us,
                pipeline_us=(time.perf_counter() - t_start) * 1e6,
                timings=timings,
            )

        # 2-4. rogue check, no-alert logging, rule decision
        t0 = time.perf_counter()
        try:
            decision = self.network.classify(self, msg, now)
        except UnknownAlertType as err:
            self.stats["dropped_unknown"] += 1
            self.network.log(
                "dropped_unknown", cloudlet=self.name, sender=sender, reason=str(err)
            )
            return PipelineResult(
                status="dropped_unknown", cloudlet=self.name, dropped=1,
                policy_us=policy_us,
                pipeline_us=(time.perf_counter() - t_start) * 1e6,
                timings=timings,
            )
        timings["decide_us"] = (time.perf_counter() - t0) * 1e6

        if decision.kind is DecisionKind.ROGUE:
            self.stats["rogue"] += 1
            # operator-visible event with the rogue's last reported position,
            # so law enforcement in the area can be informed
            self.network.log(
                "rogue_detected",
                cloudlet=self.name,
                vehicle=sender,
                latitude=msg.latitude,
                longitude=msg.longitude,
            )
            return PipelineResult(
                status="rogue", cloudlet=self.name, dropped=1,
                policy_us=policy_us,
                pipeline_us=(time.perf_counter() - t_start) * 1e6,
                timings=timings,
            )

        if decision.kind is not DecisionKind.NOTIFY:
            self.stats["log_only"] += 1
            self.network.log(
                "log_only", cloudlet=self.name, sender=sender, detail=decision.detail
            )
            return PipelineResult(
                status="log_only", cloudlet=self.name, dropped=1,
                policy_us=policy_us,
                pipeline_us=(time.perf_counter() - t_start) * 1e6,
                timings=timings,
            )

        # 5-6. anonymize and fan out with forward authorization
        self.stats["notified"] += 1
        self.network.log(
            "decision",
            cloudlet=self.name,
            alert=decision.detail,
            notifications=[(n.topic, n.text) for n in decision.notifications],
        )
        delivered = 0
        blocked = 0
        t0 = time.perf_counter()
        for notification in decision.notifications:
            note = AlertNotification(notification.text, msg.time)
            subscribers = sorted(self.topics.get(notification.topic, ()))
            for subscriber in subscribers:
                if subscriber == sender:
                    continue  # the originator is excluded from fan-out
                ta = time.perf_counter()
                ok = self._authorize(
                    "forward", [self.entity, self.network.entity_of(subscriber)]
                )
                policy_us += (time.perf_counter() - ta) * 1e6
                if not ok:
                    blocked += 1
                    self.stats["forward_denied"] += 1
                    self.network.log(
                        "forward_denied",
                        cloudlet=self.name,
                        topic=notification.topic,
                        subscriber=subscriber,
                    )
                    continue
                self.network.deliver_one(
                    self, notification.topic, subscriber, note.to_payload(),
                    sender=sender, sim_time=now,
                )
                delivered += 1
        timings["fanout_us"] = (time.perf_counter() - t0) * 1e6

        pipeline_us = (time.perf_counter() - t_start) * 1e6
        self.stats["delivered"] += delivered
        return PipelineResult(
            status="notified",
            cloudlet=self.name,
            delivered=delivered,
            blocked_forward=blocked,
            notifications=decision.notifications,
            policy_us=policy_us,
            pipeline_us=pipeline_us,
            timings=timings,
        )

    def publish_rogue_command(self, sender: str, cmd: dict) -> dict:
        """Administrative update on test/Rogue-Vehicle; effective for the next
        message this cloudlet processes."""
        allowed = self._authorize(
            "rogue_update", [self.network.entity_of(sender), self.entity]
        )
        if not allowed:
            raise Unauthorized(
                f"{sender!r} may not administer the rogue list of {self.name}"
            )
        with self._lock:
            response = apply_rogue_update(cmd, self.rogues)
        self.network.log(
            "rogue_update",
            cloudlet=self.name,
            op=cmd.get("Alert"),
            vehicle=cmd.get("myVehicle"),
            revision=self.rogues.revision,
        )
        return response

    def deliver(self, topic: str, payload: dict, now: float = 0.0) -> list[DeliveryRecord]:
        """Fan a payload out to every current subscriber of a topic (operator
        plumbing; the BSM pipeline applies forward authorization itself)."""
        with self._lock:
            if topic not in self.topics:
                raise UnknownTopic(f"{topic!r} does not exist on {self.name}")
            subscribers = sorted(self.topics[topic])
        return [
            self.network.deliver_one(self, topic, s, payload, sender=None, sim_time=now)
            for s in subscribers
        ]

    def _authorize(self, op: str, actuals) -> bool:
        # UnknownOperation propagates: a missing policy is a configuration
        # error, not a deny
        return self.network.engine.authorize(op, actuals)


class CloudletNetwork:
    """All cloudlets of one deployment plus shared state: the attribute
    store, policy engine, central controller, inboxes and the event log."""

    def __init__(
        self,
        store: AttributeStore,
        engine: PolicyEngine,
        controller: Optional[CentralController] = None,
        rules: Optional[AlertRuleSet] = None,
        type_attribute: str = "type",
    ):
        self.store = store
        self.engine = engine
        self.controller = controller or CentralController()
        self.rules = rules or AlertRuleSet.default()
        self.type_attribute = type_attribute
        self.cloudlets: dict[str, Cloudlet] = {}
        self.inboxes: dict[str, list[DeliveryRecord]] = {}
        self.events: list[dict] = []
        self.clock = 0.0
        self._entities: dict[str, EntityId] = {}
        self._seq = 0
        self._lock = threading.RLock()

    # -- world construction ------------------------------------------------------

    def create_cloudlet(self, name: str, **kwargs) -> Cloudlet:
        cloudlet = Cloudlet(name, self, **kwargs)
        self.cloudlets[name] = cloudlet
        self.log("create_cloudlet", cloudlet=name)
        return cloudlet

    def register(self, name: str, entity_type: str):
        """One-time registration; creates the store entity and its type."""
        registration = self.controller.register(name, entity_type)
        entity = self.store.register_entity(_KIND_BY_TYPE[entity_type], name)
        self._entities[name] = entity
        self.store.set_attribute(entity, self.type_attribute, entity_type)
        self.inboxes.setdefault(name, [])
        self.log("register", entity=name, entity_type=entity_type)
        return registration

    def entity_of(self, name: str) -> EntityId:
        try:
            return self._entities[name]
        except KeyError:
            raise UnknownEntity(f"{name!r} is not a registered entity") from None

    def cloudlet(self, name: str) -> Cloudlet:
        try:
            return self.cloudlets[name]
        except KeyError:
            raise UnknownEntity(f"no cloudlet named {name!r}") from None

    # -- message routing ----------------------------------------------------------

    def publish(self, sender: str, topic: str, payload: dict, now: Optional[float] = None):
        """Transport-level dispatch: shadow-topic payloads run the BSM
        pipeline at every cloudlet the sender is a member of; rogue commands
        apply to every cloudlet (central-authority semantics)."""
        if now is None:
            now = self.clock
        self.clock = now
        if topic == TOPIC_ROGUE:
            cloudlets = self._cloudlets_sorted()
            if not cloudlets:
                raise UnknownEntity("no cloudlets exist")
            for c in cloudlets:
                if not c._authorize("rogue_update", [self.entity_of(sender), c.entity]):
                    raise Unauthorized(
                        f"{sender!r} may not administer the rogue list of {c.name}"
                    )
            responses = [c.publish_rogue_command(sender, payload) for c in cloudlets]
            merged = responses[-1]
            if merged.get("Alert") == "LIST":
                names = sorted({v for r in responses for v in r.get("vehicles", [])})
                merged = {"Alert": "LIST", "myVehicle": None, "vehicles": names}
            return merged
        if topic != shadow_topic(sender):
            raise UnknownTopic(f"{sender!r} may only publish to its shadow topic")
        results = []
        for cloudlet in self._cloudlets_sorted():
            if sender in cloudlet.members:
                results.append(cloudlet.submit_bsm(sender, payload, now))
        if not results:
            raise NotMember(f"{sender!r} is not a member of any cloudlet")
        return results

    def _cloudlets_sorted(self) -> list[Cloudlet]:
        return [self.cloudlets[n] for n in sorted(self.cloudlets)]

    def classify(self, cloudlet: Cloudlet, msg: BsmMessage, now: float):
        from .alerts import classify_and_decide

        source_type = self.store.effective_atomic_attribute(
            self.entity_of(msg.sender), self.type_attribute
        )
        return classify_and_decide(
            msg.sender,
            msg.alert,
            source_type if source_type is not None else "",
            cloudlet.window,
            self.rules,
            cloudlet.rogues,
            now,
        )

    def deliver_one(
        self,
        cloudlet: Cloudlet,
        topic: str,
        subscriber: str,
        payload: dict,
        sender: Optional[str],
        sim_time: float,
    ) -> DeliveryRecord:
        with self._lock:
            seq = self._seq
            self._seq += 1
        record = DeliveryRecord(
            subscriber=subscriber,
            topic=topic,
            payload=payload,
            cloudlet=cloudlet.name,
            sim_time=sim_time,
            seq=seq,
            wall_time=time.perf_counter(),
        )
        self.inboxes.setdefault(subscriber, []).append(record)
        self.log(
            "delivery",
            cloudlet=cloudlet.name,
            topic=topic,
            subscriber=subscriber,
            sender=sender,
        )
        return record

    # -- the model-level communication check ----------------------------------------

    def communicate(self, source: str, target: str) -> bool:
        """True iff some shared cloudlet authorizes send and forward, and all
        system-wide policies hold.  A missing send/forward policy means no
        communication is possible (the query itself never raises)."""
        try:
            source_entity = self.entity_of(source)
            target_entity = self.entity_of(target)
        except UnknownEntity:
            return False
        if not self.engine.system_policies_ok():
            return False
        shared = self.store.associated_cloudlets(
            source_entity
        ) & self.store.associated_cloudlets(target_entity)
        for tc in shared:
            try:
                if self.engine.authorize("send", [source_entity, tc]) and \
                        self.engine.authorize("forward", [tc, target_entity]):
                    return True
            except (UnknownOperation, CloudletSimError):
                return False
        return False

    # -- event log -------------------------------------------------------------------

    def log(self, kind: str, **fields) -> None:
        with self._lock:
            entry = {"seq": self._seq, "t": round(self.clock, 9), "kind": kind}
            entry.update(fields)
            self._seq += 1
            self.events.append(entry)

    def event_log_lines(self) -> list[str]:
        return [json.dumps(e, sort_keys=True) for e in self.events]
