"""One-time registration with the simulated central cloud controller.

Unregistered entities cannot join any cloudlet.  Tokens are sequential so a
seeded run reproduces exactly.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from .errors import DuplicateName, NotRegistered

ENTITY_TYPES = ("Vehicle", "Police", "Medical", "Infrastructure", "User")


@dataclass(frozen=True)
class Registration:
    name: str
    entity_type: str
    token: str


class CentralController:
    def __init__(self) -> None:
        self._registry: dict[str, Registration] = {}
        self._lock = threading.Lock()

    def register(self, name: str, entity_type: str) -> Registration:
        if entity_type not in ENTITY_TYPES:
            raise NotRegistered(
                f"unknown entity type {entity_type!r}; expected one of {ENTITY_TYPES}"
            )
        with self._lock:
            if name in self._registry:
                raise DuplicateName(f"{name!r} is already registered")
            registration = Registration(
                name, entity_type, f"reg-{len(self._registry):06d}"
            )
            self._registry[name] = registration
            return registration

    def is_registered(self, name: str) -> bool:
        return name in self._registry

    def registration(self, name: str) -> Registration:
        try:
            return self._registry[name]
        except KeyError:
            raise NotRegistered(f"{name!r} has not registered") from None

    def entity_type(self, name: str) -> str:
        return self.registration(name).entity_type
