"""Neighbor-list routing: the peer -> via table and its update rules.

Every node keeps a table mapping each peer it can reach to the immediate
neighbor that leads there. ``<A, A>`` marks a direct neighbor, ``<A, B>`` a
peer reached through neighbor ``B``. Neighbors exchange plain key lists (no
hop counts); a receiver learns every listed peer through the sender and
forgets every peer it had through the sender that is no longer listed.

All handlers take a table and return a fresh table plus a ``RouteChange``;
the input table is never mutated.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .errors import PbnError, Signal
from .identity import DeviceId


class RoutingError(PbnError):
    pass


class SelfDiscovery(RoutingError):
    pass


class UnknownSender(RoutingError):
    pass


class Unreachable(RoutingError):
    pass


class StaleSequence(Signal):
    pass


@dataclass
class RoutingTable:
    owner: DeviceId
    entries: dict[DeviceId, DeviceId] = field(default_factory=dict)
    seq: int = 0  # last seq stamped on an outgoing update
    seen: dict[DeviceId, int] = field(default_factory=dict)  # last seq accepted per sender
    heard: dict[DeviceId, frozenset[DeviceId]] = field(default_factory=dict)  # last list per sender

    def copy(self) -> RoutingTable:
        return replace(self, entries=dict(self.entries), seen=dict(self.seen), heard=dict(self.heard))

    def keys(self) -> list[DeviceId]:
        return sorted(self.entries)

    def neighbors(self) -> list[DeviceId]:
        return sorted(k for k, v in self.entries.items() if k == v)

    def is_neighbor(self, peer: DeviceId) -> bool:
        return self.entries.get(peer) == peer

    def check(self, require_via_neighbor: bool = True) -> None:
        """Raise AssertionError if a structural invariant is broken."""
        assert self.owner not in self.entries, f"{self.owner} routes to itself"
        if require_via_neighbor:
            for peer, via in self.entries.items():
                assert self.entries.get(via) == via, (
                    f"{self.owner}: {peer} via {via}, but {via} is not a neighbor"
                )

    def snapshot(self) -> str:
        body = ",".join(f"{k.canonical}:{self.entries[k].canonical}" for k in self.keys())
        return "{" + body + "}"


@dataclass(frozen=True)
class RoutingUpdate:
    sender: DeviceId
    reachable: tuple[DeviceId, ...]
    seq: int

    def __post_init__(self):
        if self.sender in self.reachable:
            raise RoutingError(f"{self.sender} lists itself")
        if list(self.reachable) != sorted(set(self.reachable)):
            raise RoutingError("reachable list must be sorted and free of duplicates")


@dataclass(frozen=True)
class RouteChange:
    table_changed: bool = False
    broadcast_required: bool = False
    removed: frozenset[DeviceId] = frozenset()
    added: frozenset[DeviceId] = frozenset()
    # the sender stopped listing a peer it listed last time
    sender_shrank: bool = False


def _diff(before: RoutingTable, after: RoutingTable) -> RouteChange:
    old_keys, new_keys = set(before.entries), set(after.entries)
    added = frozenset(new_keys - old_keys)
    removed = frozenset(old_keys - new_keys)
    return RouteChange(
        table_changed=before.entries != after.entries,
        broadcast_required=bool(added or removed),
        removed=removed,
        added=added,
    )


def handle_peer_found(table: RoutingTable, peer: DeviceId) -> tuple[RoutingTable, RouteChange]:
    """A neighbor appeared: it becomes (or stays) a direct entry."""
    if peer == table.owner:
        raise SelfDiscovery(f"{peer} discovered itself")
    new = table.copy()
    new.entries[peer] = peer
    return new, _diff(table, new)


def handle_peer_lost(
    table: RoutingTable, peer: DeviceId, cascade: bool = True
) -> tuple[RoutingTable, RouteChange]:
    """A neighbor vanished.

    With ``cascade`` every peer reached through it goes too; without it only
    the neighbor's own key is removed, which can leave dangling routes.
    """
    new = table.copy()
    new.entries.pop(peer, None)
    new.seen.pop(peer, None)
    new.heard.pop(peer, None)
    if cascade:
        for dst in [d for d, via in new.entries.items() if via == peer]:
            del new.entries[dst]
    return new, _diff(table, new)


def handle_routing_update(
    table: RoutingTable,
    update: RoutingUpdate,
    strict: bool = False,
    last_writer_wins: bool = False,
    held: frozenset[DeviceId] = frozenset(),
) -> tuple[RoutingTable, RouteChange]:
    """Merge a neighbor's key list into the table.

    Listed peers we lack are learned through the sender; peers we had
    through the sender that are no longer listed are dropped.

    ``last_writer_wins`` also re-points an existing multi-hop route at
    whoever listed the peer most recently. Crossing updates can then leave
    two nodes routing the same peer through each other, and the
    drop/re-learn churn that follows may never settle, even on a static
    graph. By default a multi-hop route is kept until its via stops listing
    the peer, which keeps via chains acyclic.

    ``RouteChange.sender_shrank`` flags an update that drops a peer the
    sender listed before. Without hop counts the receiver cannot tell
    whether it still reaches that peer some other way the sender would want
    to hear about, so the caller may answer with its own list.

    Peers in ``held`` are not learned from this update (hold-down); the
    list is still remembered in ``heard`` for ``handle_hold_expired``.
    """
    sender = update.sender
    if sender == table.owner:
        raise SelfDiscovery(f"{sender} received its own update")
    original = table
    if not table.is_neighbor(sender):
        if strict:
            raise UnknownSender(f"{table.owner}: update from non-neighbor {sender}")
        table, _ = handle_peer_found(table, sender)
    last = table.seen.get(sender)
    if last is not None and update.seq <= last:
        raise StaleSequence(f"{table.owner}: seq {update.seq} from {sender} <= {last}")

    new = table.copy()
    new.seen[sender] = update.seq
    listed = frozenset(update.reachable)
    shrank = bool(table.heard.get(sender, frozenset()) - listed - {table.owner})
    new.heard[sender] = listed
    for peer in update.reachable:
        if peer == table.owner or peer == sender:
            continue
        via = new.entries.get(peer)
        if via is None and peer in held:
            continue
        if via == peer:
            continue  # direct neighbors are never overridden by hearsay
        if via is None or last_writer_wins:
            new.entries[peer] = sender
    for dst in [d for d, via in new.entries.items() if via == sender and d != sender]:
        if dst not in listed:
            del new.entries[dst]
    return new, replace(_diff(original, new), sender_shrank=shrank)


def handle_hold_expired(table: RoutingTable, peer: DeviceId) -> tuple[RoutingTable, RouteChange]:
    """Re-learn ``peer`` through the first neighbor whose last list named it."""
    new = table.copy()
    if peer not in new.entries and peer != table.owner:
        for nb in table.neighbors():
            if peer in table.heard.get(nb, ()):
                new.entries[peer] = nb
                break
    return new, _diff(table, new)


def build_update(
    table: RoutingTable, target: DeviceId | None = None, split_horizon: bool = True
) -> tuple[RoutingTable, RoutingUpdate]:
    """Stamp the next update for ``target``.

    Under split horizon, peers routed through the target are left out so the
    target never hears its own routes echoed back. The target's own key
    stays listed; receivers skip their own name anyway.
    """
    keys = table.keys()
    if split_horizon and target is not None:
        keys = [k for k in keys if k == target or table.entries[k] != target]
    new = table.copy()
    new.seq += 1
    return new, RoutingUpdate(sender=table.owner, reachable=tuple(keys), seq=new.seq)


def next_hop(table: RoutingTable, dst: DeviceId) -> DeviceId:
    if dst == table.owner:
        raise RoutingError(f"{dst} is the table owner")
    try:
        return table.entries[dst]
    except KeyError:
        raise Unreachable(f"{table.owner}: no route to {dst}") from None


@dataclass(frozen=True)
class DataPacket:
    src: DeviceId
    dst: DeviceId
    ttl: int
    payload: bytes = b""
    trace: tuple[DeviceId, ...] = ()

    def __post_init__(self):
        if self.ttl < 0:
            raise ValueError(f"negative ttl {self.ttl}")

    @property
    def hops(self) -> int:
        return len(self.trace)


class Action(enum.Enum):
    DELIVER = "deliver"
    SEND = "send"
    DROP = "drop"


class DropReason(enum.Enum):
    TTL_EXPIRED = "ttl_expired"
    LOOP_DETECTED = "loop_detected"
    NO_ROUTE = "no_route"
    FORWARDING_DISABLED = "forwarding_disabled"
    STALE_ROUTE = "stale_route"


@dataclass(frozen=True)
class ForwardDecision:
    action: Action
    packet: DataPacket
    next_hop: DeviceId | None = None
    reason: DropReason | None = None


def forward(table: RoutingTable, packet: DataPacket) -> ForwardDecision:
    owner = table.owner
    if packet.dst == owner:
        return ForwardDecision(Action.DELIVER, packet)
    if packet.ttl == 0:
        return ForwardDecision(Action.DROP, packet, reason=DropReason.TTL_EXPIRED)
    if owner in packet.trace:
        return ForwardDecision(Action.DROP, packet, reason=DropReason.LOOP_DETECTED)
    try:
        hop = next_hop(table, packet.dst)
    except Unreachable:
        return ForwardDecision(Action.DROP, packet, reason=DropReason.NO_ROUTE)
    out = replace(packet, ttl=packet.ttl - 1, trace=packet.trace + (owner,))
    return ForwardDecision(Action.SEND, out, next_hop=hop)
