"""Device identities, service advertisements and neighbor discovery events."""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import PbnError

SEPARATOR = "#"
SIM_MIN_DIGITS = 10
SIM_MAX_DIGITS = 20


class IdentityError(PbnError, ValueError):
    pass


class EmptyName(IdentityError):
    pass


class InvalidSim(IdentityError):
    pass


class ReservedCharacter(IdentityError):
    pass


class ObserverInNeighborSet(IdentityError):
    pass


@functools.total_ordering
@dataclass(frozen=True, eq=False)
class DeviceId:
    """A peer identity: the human-facing name plus the SIM digits.

    Equality, hashing and ordering all go through ``canonical`` so every
    collection of ids can be iterated deterministically with ``sorted``.
    """

    social_name: str
    sim_number: str

    @property
    def canonical(self) -> str:
        return f"{self.social_name}{SEPARATOR}{self.sim_number}"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DeviceId):
            return NotImplemented
        return self.canonical == other.canonical

    def __lt__(self, other: DeviceId) -> bool:
        if not isinstance(other, DeviceId):
            return NotImplemented
        return self.canonical < other.canonical

    def __hash__(self) -> int:
        return hash(self.canonical)

    def __str__(self) -> str:
        return self.canonical

    @classmethod
    def parse(cls, canonical: str) -> DeviceId:
        name, sep, sim = canonical.rpartition(SEPARATOR)
        if not sep:
            raise InvalidSim(f"no {SEPARATOR!r} separator in {canonical!r}")
        return make_device_id(name, sim)


def make_device_id(social_name: str, sim_number: str) -> DeviceId:
    if not social_name:
        raise EmptyName("device name must not be empty")
    if SEPARATOR in social_name:
        raise ReservedCharacter(f"{SEPARATOR!r} is reserved: {social_name!r}")
    if not (sim_number.isascii() and sim_number.isdigit()):
        raise InvalidSim(f"SIM number must be digits only: {sim_number!r}")
    if not SIM_MIN_DIGITS <= len(sim_number) <= SIM_MAX_DIGITS:
        raise InvalidSim(
            f"SIM number must have {SIM_MIN_DIGITS}-{SIM_MAX_DIGITS} digits, "
            f"got {len(sim_number)}"
        )
    return DeviceId(social_name, sim_number)


def social_view(device: DeviceId) -> str:
    """What other users get to see of a device."""
    return device.social_name


@dataclass
class Advertisement:
    """The producer-service record a device announces to its vicinity."""

    device: DeviceId
    object_path: str = "/pbn/meeting"
    contact_port: int = 42
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.object_path.startswith("/"):
            raise IdentityError(f"object path must start with '/': {self.object_path!r}")
        if not 1 <= self.contact_port <= 65535:
            raise IdentityError(f"contact port out of range: {self.contact_port}")
        # a plain dict cannot hold duplicate keys; copying guards against aliasing
        self.metadata = dict(self.metadata)

    @property
    def hosted_session(self) -> str | None:
        return self.metadata.get("hosts_session")


class DiscoveryKind(enum.Enum):
    PEER_FOUND = "found"
    PEER_LOST = "lost"


@dataclass(frozen=True)
class DiscoveryEvent:
    kind: DiscoveryKind
    subject: DeviceId
    observer: DeviceId
    time: int

    def __post_init__(self):
        if self.subject == self.observer:
            raise ObserverInNeighborSet(f"{self.observer} cannot discover itself")
        if self.time < 0:
            raise ValueError(f"negative tick {self.time}")


def emit_discovery_events(
    old_neighbors: Iterable[DeviceId],
    new_neighbors: Iterable[DeviceId],
    observer: DeviceId,
    time: int,
) -> list[DiscoveryEvent]:
    """Turn a change in the observer's neighbor set into router notifications.

    Losses come before arrivals and each group is sorted by canonical id, so
    the same pair of sets always yields the same list.
    """
    old, new = set(old_neighbors), set(new_neighbors)
    if observer in old or observer in new:
        raise ObserverInNeighborSet(f"{observer} listed as its own neighbor")
    lost = [DiscoveryEvent(DiscoveryKind.PEER_LOST, d, observer, time) for d in sorted(old - new)]
    found = [DiscoveryEvent(DiscoveryKind.PEER_FOUND, d, observer, time) for d in sorted(new - old)]
    return lost + found


def apply_discovery_events(neighbors: Iterable[DeviceId], events: Iterable[DiscoveryEvent]) -> set[DeviceId]:
    result = set(neighbors)
    for ev in events:
        if ev.kind is DiscoveryKind.PEER_FOUND:
            result.add(ev.subject)
        else:
            result.discard(ev.subject)
    return result


def advertisement_for(device: DeviceId, metadata: Mapping[str, str] | None = None) -> Advertisement:
    return Advertisement(device=device, metadata=dict(metadata or {}))
