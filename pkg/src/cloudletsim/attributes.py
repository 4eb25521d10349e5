"""Entity registry and attribute semantics.

Entities (vehicles, infrastructure, users, cloudlets, plus one system-wide
pseudo-entity) carry set-valued or atomic attributes drawn from a declared
finite range.  Sources inherit attributes from the cloudlets they are
associated with: set attributes by union, atomic attributes from the cloudlet
whose non-null value was assigned most recently.

Recency is a store-wide monotonic counter that ticks on every non-null atomic
assignment to a cloudlet.  It is not wall-clock time, so replays are
deterministic and ties are impossible by construction.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Union

from .errors import (
    DuplicateAttribute,
    DuplicateEntity,
    EmptyRange,
    InvalidAssociation,
    OutOfRange,
    TypeMismatch,
    UnknownAttribute,
    UnknownEntity,
)

AtomicValue = Union[str, int, float]


class EntityKind(Enum):
    VEHICLE = "vehicle"
    INFRASTRUCTURE = "infrastructure"
    USER = "user"
    CLOUDLET = "cloudlet"
    SYSTEM_WIDE = "system"


@dataclass(frozen=True)
class EntityId:
    kind: EntityKind
    name: str

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.name}"


#: The singleton system-wide entity; holds attributes set by administrators
#: that reflect the state of the whole transportation system.
SYSTEM = EntityId(EntityKind.SYSTEM_WIDE, "system")

#: Entity kinds that can act as message sources (everything but cloudlets).
SOURCE_KINDS = frozenset(
    {EntityKind.VEHICLE, EntityKind.INFRASTRUCTURE, EntityKind.USER}
)


class AttType(Enum):
    SET = "set"
    ATOMIC = "atomic"


@dataclass(frozen=True)
class AttributeSchema:
    name: str
    att_type: AttType
    range: tuple[AtomicValue, ...]

    def __post_init__(self) -> None:
        if not self.range:
            raise EmptyRange(f"attribute {self.name!r} declared with empty range")
        if len(set(self.range)) != len(self.range):
            raise EmptyRange(
                f"attribute {self.name!r} range contains duplicate values"
            )


class AttributeStore:
    """All attribute state for one deployment: schemas, valuations, SEA.

    Writers are serialized by an internal lock; readers take the same lock so
    every effective-attribute computation sees a consistent snapshot of the
    association table and the valuations.
    """

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._schemas: dict[str, AttributeSchema] = {}
        self._entities: dict[tuple[EntityKind, str], EntityId] = {
            (SYSTEM.kind, SYSTEM.name): SYSTEM
        }
        # (entity, attName) -> frozenset (set-typed) | scalar | None (atomic)
        self._values: dict[tuple[EntityId, str], object] = {}
        # (cloudlet, attName) -> tick of the last non-null atomic assignment
        self._atomic_stamp: dict[tuple[EntityId, str], int] = {}
        # source -> {cloudlet: join tick}
        self._assoc: dict[EntityId, dict[EntityId, int]] = {}
        self._clock = 0

    # -- entities -------------------------------------------------------------

    def register_entity(self, kind: EntityKind, name: str) -> EntityId:
        if not name:
            raise UnknownEntity("entity name must be non-empty")
        if kind is EntityKind.SYSTEM_WIDE:
            raise DuplicateEntity("the system-wide entity is a fixed singleton")
        with self._lock:
            key = (kind, name)
            if key in self._entities:
                raise DuplicateEntity(f"entity {kind.value}:{name} already registered")
            entity = EntityId(kind, name)
            self._entities[key] = entity
            return entity

    def entity(self, kind: EntityKind, name: str) -> EntityId:
        try:
            return self._entities[(kind, name)]
        except KeyError:
            raise UnknownEntity(f"no entity {kind.value}:{name}") from None

    def has_entity(self, entity: EntityId) -> bool:
        return (entity.kind, entity.name) in self._entities

    def entities(self) -> list[EntityId]:
        with self._lock:
            return list(self._entities.values())

    def find_by_name(self, name: str) -> EntityId:
        """Resolve a bare name to an entity; names are unique per kind and in
        practice unique globally (the central controller enforces it)."""
        with self._lock:
            matches = [e for (_, n), e in self._entities.items() if n == name]
        if not matches:
            raise UnknownEntity(f"no entity named {name!r}")
        if len(matches) > 1:
            raise UnknownEntity(f"name {name!r} is ambiguous across kinds")
        return matches[0]

    # -- schemas ----------------------------------------------------------------

    def declare_attribute(self, schema: AttributeSchema) -> None:
        with self._lock:
            if schema.name in self._schemas:
                raise DuplicateAttribute(f"attribute {schema.name!r} already declared")
            self._schemas[schema.name] = schema

    def schema(self, att_name: str) -> AttributeSchema:
        try:
            return self._schemas[att_name]
        except KeyError:
            raise UnknownAttribute(f"attribute {att_name!r} not declared") from None

    def schemas(self) -> dict[str, AttributeSchema]:
        return dict(self._schemas)

    # -- valuations ---------------------------------------------------------------

    def set_attribute(
        self,
        entity: EntityId,
        att_name: str,
        value: Union[AtomicValue, Iterable[AtomicValue], None],
    ) -> None:
        schema = self.schema(att_name)
        with self._lock:
            self._require_entity(entity)
            if schema.att_type is AttType.SET:
                if value is None:
                    raise TypeMismatch(
                        f"set attribute {att_name!r} cannot be null; use an empty set"
                    )
                if isinstance(value, (str, int, float)):
                    raise TypeMismatch(
                        f"set attribute {att_name!r} assigned an atomic value"
                    )
                members = frozenset(value)
                bad = members - set(schema.range)
                if bad:
                    raise OutOfRange(
                        f"{sorted(map(repr, bad))} not in range of {att_name!r}"
                    )
                self._values[(entity, att_name)] = members
            else:
                if value is not None and not isinstance(value, (str, int, float)):
                    raise TypeMismatch(
                        f"atomic attribute {att_name!r} assigned a set value"
                    )
                if value is not None and value not in schema.range:
                    raise OutOfRange(f"{value!r} not in range of {att_name!r}")
                self._values[(entity, att_name)] = value
                if entity.kind is EntityKind.CLOUDLET and value is not None:
                    self._clock += 1
                    self._atomic_stamp[(entity, att_name)] = self._clock

    def get_attribute(
        self, entity: EntityId, att_name: str
    ) -> Union[frozenset, AtomicValue, None]:
        """Direct value; defaults to the empty set / null when never assigned."""
        schema = self.schema(att_name)
        with self._lock:
            self._require_entity(entity)
            default = frozenset() if schema.att_type is AttType.SET else None
            return self._values.get((entity, att_name), default)

    # -- associations (SEA) -------------------------------------------------------

    def associate(self, source: EntityId, cloudlet: EntityId) -> None:
        with self._lock:
            self._require_entity(source)
            self._require_entity(cloudlet)
            if source.kind is EntityKind.CLOUDLET or source.kind is EntityKind.SYSTEM_WIDE:
                raise InvalidAssociation(f"{source} cannot appear as a source")
            if cloudlet.kind is not EntityKind.CLOUDLET:
                raise InvalidAssociation(f"{cloudlet} is not a cloudlet")
            self._clock += 1
            self._assoc.setdefault(source, {})[cloudlet] = self._clock

    def dissociate(self, source: EntityId, cloudlet: EntityId) -> None:
        with self._lock:
            self._require_entity(source)
            self._require_entity(cloudlet)
            self._assoc.get(source, {}).pop(cloudlet, None)

    def associated_cloudlets(self, source: EntityId) -> frozenset[EntityId]:
        with self._lock:
            self._require_entity(source)
            return frozenset(self._assoc.get(source, {}))

    # -- effective attributes -----------------------------------------------------

    def effective_set_attribute(
        self, source: EntityId, att_name: str
    ) -> frozenset[AtomicValue]:
        """Direct value unioned with the values of every associated cloudlet."""
        schema = self.schema(att_name)
        if schema.att_type is not AttType.SET:
            raise TypeMismatch(f"{att_name!r} is atomic; use effective_atomic_attribute")
        with self._lock:
            self._require_source(source)
            result = set(self._set_value(source, att_name))
            for tc in self._assoc.get(source, {}):
                result |= self._set_value(tc, att_name)
            return frozenset(result)

    def effective_atomic_attribute(
        self, source: EntityId, att_name: str
    ) -> Optional[AtomicValue]:
        """Value of the most recently assigned non-null cloudlet valuation,
        falling back to the source's own value when every associated cloudlet
        holds null."""
        schema = self.schema(att_name)
        if schema.att_type is not AttType.ATOMIC:
            raise TypeMismatch(f"{att_name!r} is set-valued; use effective_set_attribute")
        with self._lock:
            self._require_source(source)
            best_tc = None
            best_stamp = -1
            for tc in self._assoc.get(source, {}):
                if self._values.get((tc, att_name)) is None:
                    continue
                stamp = self._atomic_stamp.get((tc, att_name), -1)
                if stamp > best_stamp:
                    best_stamp = stamp
                    best_tc = tc
            if best_tc is None:
                return self._values.get((source, att_name))
            return self._values.get((best_tc, att_name))

    # -- snapshots ------------------------------------------------------------------

    def snapshot(self) -> dict:
        """Plain-data dump of the whole store (used by oracles and `--json`)."""
        with self._lock:
            return {
                "schemas": {
                    n: {"type": s.att_type.value, "range": list(s.range)}
                    for n, s in self._schemas.items()
                },
                "entities": [
                    {"kind": e.kind.value, "name": e.name}
                    for e in self._entities.values()
                ],
                "values": [
                    {
                        "kind": e.kind.value,
                        "name": e.name,
                        "att": a,
                        "value": sorted(v, key=repr) if isinstance(v, frozenset) else v,
                    }
                    for (e, a), v in self._values.items()
                ],
                "atomic_stamps": [
                    {"name": e.name, "att": a, "stamp": t}
                    for (e, a), t in self._atomic_stamp.items()
                ],
                "associations": [
                    {"source": s.name, "cloudlet": tc.name, "stamp": t}
                    for s, pairs in self._assoc.items()
                    for tc, t in pairs.items()
                ],
            }

    # -- internals --------------------------------------------------------------------

    def _require_entity(self, entity: EntityId) -> None:
        if (entity.kind, entity.name) not in self._entities:
            raise UnknownEntity(f"no entity {entity}")

    def _require_source(self, source: EntityId) -> None:
        self._require_entity(source)
        if source.kind is EntityKind.CLOUDLET:
            raise TypeMismatch(
                "effective attributes are defined for sources, not cloudlets"
            )

    def _set_value(self, entity: EntityId, att_name: str) -> frozenset:
        value = self._values.get((entity, att_name), frozenset())
        assert isinstance(value, frozenset)
        return value


_KIND_ALIASES = {
    "vehicle": EntityKind.VEHICLE,
    "infrastructure": EntityKind.INFRASTRUCTURE,
    "user": EntityKind.USER,
    "cloudlet": EntityKind.CLOUDLET,
}


def load_config(store: AttributeStore, config: dict) -> None:
    """Load attribute schemas, entities, valuations and associations from the
    JSON config documented in the README.

    Atomic cloudlet valuations tick the recency clock in file order, so a
    config load is reproducible.
    """
    for i, att in enumerate(config.get("attributes", [])):
        _expect_keys(att, f"attributes[{i}]", {"name", "type", "range"})
        try:
            att_type = AttType(att["type"])
        except ValueError:
            raise TypeMismatch(
                f"attributes[{i}].type: {att['type']!r} is not 'set' or 'atomic'"
            ) from None
        store.declare_attribute(
            AttributeSchema(att["name"], att_type, tuple(att["range"]))
        )

    for i, ent in enumerate(config.get("entities", [])):
        kind_name = ent.get("kind", "vehicle")
        try:
            kind = _KIND_ALIASES[kind_name]
        except KeyError:
            raise UnknownEntity(
                f"entities[{i}].kind: {kind_name!r} is not a known kind"
            ) from None
        entity = store.register_entity(kind, ent["name"])
        for att_name, value in ent.get("attributes", {}).items():
            store.set_attribute(entity, att_name, _coerce(store, att_name, value))

    for att_name, value in config.get("system", {}).get("attributes", {}).items():
        store.set_attribute(SYSTEM, att_name, _coerce(store, att_name, value))

    for i, pair in enumerate(config.get("associations", [])):
        source = store.find_by_name(pair["source"])
        cloudlet = store.entity(EntityKind.CLOUDLET, pair["cloudlet"])
        store.associate(source, cloudlet)


def load_config_file(store: AttributeStore, path: str) -> None:
    with open(path, "r", encoding="utf-8") as fh:
        load_config(store, json.load(fh))


def _coerce(store: AttributeStore, att_name: str, value: object) -> object:
    # JSON has no set type; lists become sets for set-typed attributes.
    if isinstance(value, list) and store.schema(att_name).att_type is AttType.SET:
        return frozenset(value)
    return value


def _expect_keys(obj: dict, path: str, required: set[str]) -> None:
    missing = required - set(obj)
    if missing:
        raise UnknownAttribute(f"{path}: missing key(s) {sorted(missing)}")
