"""Deterministic discrete-event proximity-network simulator.

The world is an undirected proximity graph plus one state machine per
device (routing table, document store, pending offers). Events sit in a
heap ordered by ``(tick, seq)`` where ``seq`` is the enqueue counter, so
ties resolve first-in first-out. Neighbor discovery happens at the tick the
graph changes; every frame sent over a link arrives ``latency_ticks`` later
and is lost if the link is gone by then.

Application messages (joins, real-time edits, file offers) are JSON bodies
inside ``DataPacket`` payloads and travel hop by hop through the routing
tables, so anything beyond one hop depends on routing having converged.
"""

from __future__ import annotations

import enum
import heapq
import json
import logging
import random
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Any

from . import mom, routing
from .errors import PbnError, Signal
from .identity import Advertisement, DeviceId, DiscoveryKind, emit_discovery_events
from .session import Decision, RoleConflict, RoleKind, SessionRegistry, Transition, choose_role
from .trace import format_list, format_record

log = logging.getLogger(__name__)


class SimError(PbnError):
    pass


class UnknownNode(SimError):
    pass


class DuplicateNode(SimError):
    pass


class NotAdjacent(SimError):
    pass


class DuplicateEdge(Signal):
    pass


class MissingEdge(Signal):
    pass


class NonQuiescent(SimError):
    def __init__(self, report: QuiescenceReport):
        super().__init__(f"event queue still busy after {report.ticks} ticks")
        self.report = report


@dataclass
class SimConfig:
    latency_ticks: int = 1
    ttl: int | None = None  # None: number of nodes in the world
    split_horizon: bool = True
    faithful_routing: bool = False
    last_writer_wins: bool | None = None  # None: follow faithful_routing
    hold_down: int | None = None  # ticks; None: 2 x node count x latency unless faithful, 0: off
    hello_on_found: bool | None = None  # None: on unless faithful_routing
    refresh_on_shrink: bool | None = None  # None: on unless faithful_routing
    seed: int = 0
    strict_senders: bool = False
    forwarding: bool = True
    autosave_ticks: int = 5

    @property
    def cascade(self) -> bool:
        return not self.faithful_routing

    @property
    def relearn_latest(self) -> bool:
        if self.last_writer_wins is None:
            return self.faithful_routing
        return self.last_writer_wins

    @property
    def hello(self) -> bool:
        if self.hello_on_found is None:
            return not self.faithful_routing
        return self.hello_on_found

    @property
    def refresh(self) -> bool:
        if self.refresh_on_shrink is None:
            return not self.faithful_routing
        return self.refresh_on_shrink

    def __post_init__(self):
        if self.latency_ticks < 1:
            raise ValueError("latency_ticks must be positive")
        if self.ttl is not None and self.ttl < 1:
            raise ValueError("ttl must be positive")
        if self.autosave_ticks < 1:
            raise ValueError("autosave_ticks must be positive")


class EventKind(enum.Enum):
    ADD_NODE = "add_node"
    REMOVE_NODE = "remove_node"
    ADD_EDGE = "add_edge"
    REMOVE_EDGE = "remove_edge"
    USER_ACTION = "user_action"
    MESSAGE_ARRIVAL = "message_arrival"
    AUTOSAVE = "autosave"
    HOLD_EXPIRED = "hold_expired"


TOPOLOGY_KINDS = {EventKind.ADD_NODE, EventKind.REMOVE_NODE, EventKind.ADD_EDGE, EventKind.REMOVE_EDGE}


@dataclass(frozen=True)
class SimEvent:
    time: int
    seq: int
    kind: EventKind
    data: dict = field(default_factory=dict, compare=False)

    def __lt__(self, other: SimEvent) -> bool:
        return (self.time, self.seq) < (other.time, other.seq)


@dataclass(frozen=True)
class Envelope:
    """A single link-layer frame."""

    kind: str  # "update" or "data"
    src: DeviceId
    dst: DeviceId
    body: Any


@dataclass
class Topology:
    nodes: set[DeviceId] = field(default_factory=set)
    edges: set[frozenset[DeviceId]] = field(default_factory=set)

    def neighbors(self, node: DeviceId) -> set[DeviceId]:
        out = set()
        for e in self.edges:
            if node in e:
                out |= e - {node}
        return out

    def adjacent(self, a: DeviceId, b: DeviceId) -> bool:
        return frozenset((a, b)) in self.edges


@dataclass
class Node:
    id: DeviceId
    table: routing.RoutingTable
    store: mom.MoMStore
    advert: Advertisement
    offers: dict[str, mom.FileOffer] = field(default_factory=dict)
    buffers: dict[str, str] = field(default_factory=dict)  # doc_id -> unsaved text
    packets: int = 0
    held: dict[DeviceId, int] = field(default_factory=dict)  # peer -> hold-down expiry


@dataclass(frozen=True)
class Delivery:
    packet_id: str
    src: DeviceId
    dst: DeviceId
    hops: int
    time: int
    app: str


@dataclass
class QuiescenceReport:
    quiescent: bool
    ticks: int
    frames_sent: int
    frames_delivered: int
    frames_dropped: dict[str, int]
    routing_updates: int
    repair_updates: int
    packets_originated: int
    packets_delivered: int
    packets_dropped: dict[str, int]
    tables: dict[str, dict[str, str]]

    @property
    def frames_in_flight(self) -> int:
        return self.frames_sent - self.frames_delivered - sum(self.frames_dropped.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frames_in_flight"] = self.frames_in_flight
        return d


class World:
    def __init__(self, config: SimConfig | None = None):
        self.config = config or SimConfig()
        self.rng = random.Random(self.config.seed)
        self.topology = Topology()
        self.nodes: dict[DeviceId, Node] = {}
        self.sessions = SessionRegistry()
        self.now = 0
        self.trace: list[str] = []
        self.deliveries: list[Delivery] = []
        self._queue: list[SimEvent] = []
        self._seq = 0
        self._autosave_pending: set[tuple[DeviceId, str]] = set()
        self.frames_sent = 0
        self.frames_delivered = 0
        self.frames_dropped: Counter[str] = Counter()
        self.routing_updates = 0
        self.repair_updates = 0
        self.packets_originated = 0
        self.packets_delivered = 0
        self.packets_dropped: Counter[str] = Counter()
        self.declared_nodes = 0

    # ------------------------------------------------------------------ util

    def emit(self, node: DeviceId | str, *fields: tuple[str, object]) -> None:
        line = format_record(self.now, str(node), fields)
        self.trace.append(line)
        log.debug(line)

    def node(self, ref: DeviceId) -> Node:
        try:
            return self.nodes[ref]
        except KeyError:
            raise UnknownNode(f"no node {ref}") from None

    @property
    def ttl(self) -> int:
        if self.config.ttl is not None:
            return self.config.ttl
        return max(self.declared_nodes, len(self.nodes), 1)

    def schedule(self, time: int, kind: EventKind, **data) -> SimEvent:
        if time < self.now:
            raise SimError(f"cannot schedule at {time}, already at {self.now}")
        ev = SimEvent(time, self._seq, kind, data)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def pending(self) -> int:
        return len(self._queue)

    def check_invariants(self) -> None:
        for n in self.nodes.values():
            n.table.check(require_via_neighbor=not self.config.faithful_routing)
            for doc in n.store.shared_moms.values():
                assert doc.owned_by != n.id
            for doc in n.store.my_moms.values():
                assert doc.owned_by == n.id
        self.sessions.check()

    # -------------------------------------------------------------- topology

    def add_node(self, device: DeviceId) -> Node:
        if device in self.nodes:
            raise DuplicateNode(f"{device} already present")
        n = Node(
            id=device,
            table=routing.RoutingTable(device),
            store=mom.MoMStore(device),
            advert=Advertisement(device),
        )
        self.nodes[device] = n
        self.topology.nodes.add(device)
        self.emit(device, ("topology", "add_node"))
        return n

    def remove_node(self, device: DeviceId) -> None:
        self.node(device)
        old = self._neighbor_sets()
        self.topology.edges = {e for e in self.topology.edges if device not in e}
        self.topology.nodes.discard(device)
        del self.nodes[device]
        self._autosave_pending = {k for k in self._autosave_pending if k[0] != device}
        self.emit(device, ("topology", "remove_node"))
        self._trace_transitions(self.sessions.drop_device(device))
        self._rediscover(old, sorted(old[device]))

    def add_edge(self, a: DeviceId, b: DeviceId) -> None:
        self.node(a), self.node(b)
        if a == b:
            raise SimError(f"self-loop on {a}")
        if self.topology.adjacent(a, b):
            raise DuplicateEdge(f"{a} -- {b} already up")
        old = self._neighbor_sets()
        self.topology.edges.add(frozenset((a, b)))
        lo, hi = sorted((a, b))
        self.emit(lo, ("topology", "add_edge"), ("peer", hi))
        self._rediscover(old, [lo, hi])

    def remove_edge(self, a: DeviceId, b: DeviceId) -> None:
        self.node(a), self.node(b)
        if not self.topology.adjacent(a, b):
            raise MissingEdge(f"{a} -- {b} is not up")
        old = self._neighbor_sets()
        self.topology.edges.discard(frozenset((a, b)))
        lo, hi = sorted((a, b))
        self.emit(lo, ("topology", "remove_edge"), ("peer", hi))
        self._rediscover(old, [lo, hi])

    def apply_topology_event(self, event: SimEvent) -> None:
        d = event.data
        if event.kind is EventKind.ADD_NODE:
            self.add_node(d["node"])
        elif event.kind is EventKind.REMOVE_NODE:
            self.remove_node(d["node"])
        elif event.kind is EventKind.ADD_EDGE:
            self.add_edge(d["a"], d["b"])
        elif event.kind is EventKind.REMOVE_EDGE:
            self.remove_edge(d["a"], d["b"])
        else:
            raise SimError(f"{event.kind} is not a topology event")

    def _neighbor_sets(self) -> dict[DeviceId, set[DeviceId]]:
        out: dict[DeviceId, set[DeviceId]] = {n: set() for n in self.topology.nodes}
        for e in self.topology.edges:
            a, b = tuple(e)
            out[a].add(b)
            out[b].add(a)
        return out

    def _rediscover(self, old: dict[DeviceId, set[DeviceId]], affected: list[DeviceId]) -> None:
        new = self._neighbor_sets()
        for dev in affected:
            if dev not in self.nodes:
                continue
            events = emit_discovery_events(old.get(dev, set()), new[dev], dev, self.now)
            if not events:
                continue
            n = self.nodes[dev]
            before = n.table
            found = []
            for ev in events:
                self.emit(dev, ("discovery", ev.kind.value), ("peer", ev.subject))
                if ev.kind is DiscoveryKind.PEER_FOUND:
                    n.table, _ = routing.handle_peer_found(n.table, ev.subject)
                    found.append(ev.subject)
                else:
                    n.table, _ = routing.handle_peer_lost(n.table, ev.subject, cascade=self.config.cascade)
            if not self._after_table_change(n, before) and self.config.hello:
                # the key set did not move, so no broadcast tells a new
                # neighbor what we reach; send it our list directly
                for peer in found:
                    self.repair_updates += 1
                    self._send_update(n, peer, ("reason", "hello"))

    def _after_table_change(self, n: Node, before: routing.RoutingTable) -> bool:
        """Trace a changed table; broadcast if its key set moved. True if broadcast."""
        if n.table.entries == before.entries:
            return False
        self._hold(n, set(before.entries) - set(n.table.entries))
        self.emit(n.id, ("table", n.table.snapshot()))
        if set(n.table.entries) != set(before.entries):
            self._broadcast(n)
            return True
        return False

    @property
    def hold_ticks(self) -> int:
        if self.config.hold_down is not None:
            return self.config.hold_down
        if self.config.faithful_routing:
            return 0
        # longer than one lap of any simple cycle, so a ghost route cannot
        # come back around just as the hold expires
        return 2 * max(self.declared_nodes, len(self.nodes), 1) * self.config.latency_ticks

    def _hold(self, n: Node, removed: set[DeviceId]) -> None:
        ticks = self.hold_ticks
        if not ticks:
            return
        for peer in sorted(removed):
            n.held[peer] = self.now + ticks
            self.schedule(self.now + ticks, EventKind.HOLD_EXPIRED, node=n.id, peer=peer)

    def _hold_expired(self, dev: DeviceId, peer: DeviceId) -> None:
        n = self.nodes.get(dev)
        if n is None or n.held.get(peer) != self.now:
            return  # node gone, or the hold was extended
        del n.held[peer]
        before = n.table
        n.table, _ = routing.handle_hold_expired(n.table, peer)
        self._after_table_change(n, before)

    # -------------------------------------------------------------- messaging

    def _broadcast(self, n: Node) -> None:
        targets = sorted(self.topology.neighbors(n.id))
        self.emit(n.id, ("broadcast", "update"), ("neighbors", len(targets)))
        for target in targets:
            self._send_update(n, target)

    def _send_update(self, n: Node, target: DeviceId, *extra: tuple[str, object]) -> None:
        n.table, update = routing.build_update(
            n.table, target if self.config.split_horizon else None, self.config.split_horizon
        )
        self.emit(
            n.id,
            ("send", "update"),
            ("to", target),
            ("seq", update.seq),
            ("reachable", format_list(update.reachable)),
            *extra,
        )
        self.routing_updates += 1
        self.send_message(n.id, target, Envelope("update", n.id, target, update))

    def send_message(self, frm: DeviceId, to: DeviceId, envelope: Envelope) -> SimEvent:
        if not self.topology.adjacent(frm, to):
            raise NotAdjacent(f"{frm} and {to} are not in range")
        self.frames_sent += 1
        return self.schedule(self.now + self.config.latency_ticks, EventKind.MESSAGE_ARRIVAL, envelope=envelope)

    def _arrive(self, env: Envelope) -> None:
        if env.dst not in self.nodes or not self.topology.adjacent(env.src, env.dst):
            self.frames_dropped["link_down"] += 1
            self.emit(env.dst, ("drop", "link_down"), ("from", env.src), ("frame", env.kind))
            if env.kind == "data":
                self.packets_dropped["link_down"] += 1
            return
        self.frames_delivered += 1
        n = self.nodes[env.dst]
        if env.kind == "update":
            self._receive_update(n, env.body)
        else:
            self._route_packet(n, env.body)

    def _receive_update(self, n: Node, update: routing.RoutingUpdate) -> None:
        self.emit(n.id, ("recv", "update"), ("from", update.sender), ("seq", update.seq))
        before = n.table
        try:
            n.table, change = routing.handle_routing_update(
                n.table,
                update,
                strict=self.config.strict_senders,
                last_writer_wins=self.config.relearn_latest,
                held=frozenset(n.held),
            )
        except routing.StaleSequence:
            self.emit(n.id, ("ignored", "stale"), ("from", update.sender), ("seq", update.seq))
            return
        except routing.UnknownSender as exc:
            self._error(n.id, exc)
            return
        broadcast = self._after_table_change(n, before)
        # a held peer still being advertised may be a ghost circling a
        # loop; wait for a quiet period before trusting it again
        self._hold(n, set(update.reachable) & set(n.held) - set(n.table.entries))
        if change.sender_shrank and not broadcast and self.config.refresh:
            # the sender forgot peers; tell it what we still reach
            self.repair_updates += 1
            self._send_update(n, update.sender, ("reason", "refresh"))

    # --------------------------------------------------------------- packets

    def send_app(self, src: DeviceId, dst: DeviceId, app: str, **body) -> str:
        """Originate an application message from ``src`` to ``dst``."""
        n = self.node(src)
        n.packets += 1
        pid = f"{src.canonical}/{n.packets}"
        payload = json.dumps({"app": app, "id": pid, **body}, sort_keys=True).encode()
        packet = routing.DataPacket(src=src, dst=dst, ttl=self.ttl, payload=payload)
        self.packets_originated += 1
        self._packet_line(n.id, "originate", packet, pid, app)
        self._route_packet(n, packet)
        return pid

    def _packet_line(self, at: DeviceId, what: str, packet: routing.DataPacket, pid: str, app: str, *extra) -> None:
        self.emit(
            at,
            ("packet", what),
            ("id", pid),
            ("src", packet.src),
            ("dst", packet.dst),
            ("hops", packet.hops),
            ("ttl", packet.ttl),
            *extra,
            ("app", app),
        )

    def _route_packet(self, n: Node, packet: routing.DataPacket) -> None:
        body = json.loads(packet.payload)
        pid, app = body["id"], body["app"]
        if packet.dst != n.id and packet.src != n.id and not self.config.forwarding:
            decision = routing.ForwardDecision(
                routing.Action.DROP, packet, reason=routing.DropReason.FORWARDING_DISABLED
            )
        else:
            decision = routing.forward(n.table, packet)
        if decision.action is routing.Action.DELIVER:
            self.packets_delivered += 1
            self._packet_line(n.id, "deliver", packet, pid, app)
            self.deliveries.append(Delivery(pid, packet.src, packet.dst, packet.hops, self.now, app))
            self._deliver(n, packet.src, body)
            return
        if decision.action is routing.Action.SEND and not self.topology.adjacent(n.id, decision.next_hop):
            # only reachable with stale, non-cascaded routes
            decision = routing.ForwardDecision(routing.Action.DROP, packet, reason=routing.DropReason.STALE_ROUTE)
        if decision.action is routing.Action.DROP:
            self.packets_dropped[decision.reason.value] += 1
            self._packet_line(n.id, "drop", packet, pid, app, ("reason", decision.reason.value))
            return
        out = decision.packet
        self._packet_line(n.id, "forward", out, pid, app, ("next", decision.next_hop))
        self.send_message(n.id, decision.next_hop, Envelope("data", n.id, decision.next_hop, out))

    def _deliver(self, n: Node, src: DeviceId, body: dict) -> None:
        handler = getattr(self, f"_on_{body['app']}", None)
        if handler is None:
            return
        try:
            handler(n, src, body)
        except PbnError as exc:
            self._error(n.id, exc)

    # ------------------------------------------------------- app: sessions

    def _trace_transitions(self, transitions: list[Transition]) -> None:
        for tr in transitions:
            self.emit(tr.node, ("session_event", tr.event), ("session", tr.session))

    def visible_peers(self, node: DeviceId) -> list[DeviceId]:
        return sorted(set(self.node(node).table.entries) | {node})

    def choose(self, node: DeviceId, selected: DeviceId) -> None:
        n = self.node(node)
        decision = choose_role(node, selected, self.visible_peers(node))
        if decision.decision is Decision.BECOME_SCRIBE:
            old = self.sessions.session_of(node)
            transitions = self.sessions.host(node)
            self._trace_transitions(transitions)
            if old is not None:
                self.send_app(node, old.host, "leave_notice", session=old.name)
            n.advert.metadata["hosts_session"] = self.sessions.role(node).session
            return
        if self.sessions.role(node).kind is RoleKind.SCRIBE:
            raise RoleConflict(f"{node} is hosting and cannot join {selected}")
        self.send_app(node, decision.host, "join")

    def leave(self, node: DeviceId) -> None:
        old = self.sessions.session_of(node)
        self._trace_transitions(self.sessions.leave(node))
        self.send_app(node, old.host, "leave_notice", session=old.name)

    def _on_join(self, host: Node, member: DeviceId, body: dict) -> None:
        old = self.sessions.session_of(member)
        try:
            transitions = self.sessions.join(member, host.id)
        except PbnError as exc:
            self._error(host.id, exc)
            self.send_app(host.id, member, "join_reject", reason=type(exc).__name__)
            return
        self._trace_transitions(transitions)
        if old is not None and old.host != host.id and old.host in self.nodes:
            self.send_app(member, old.host, "leave_notice", session=old.name)
        session = self.sessions.hosted_by(host.id)
        self.send_app(host.id, member, "join_ack", session=session.name)
        for doc in sorted(host.store.my_moms.values(), key=lambda d: d.doc_id):
            self.send_app(host.id, member, "rt_update", **_update_body(doc))

    def _on_join_ack(self, n: Node, host: DeviceId, body: dict) -> None:
        self.emit(n.id, ("app", "join_ack"), ("session", body["session"]))

    def _on_join_reject(self, n: Node, host: DeviceId, body: dict) -> None:
        self.emit(n.id, ("app", "join_reject"), ("host", host), ("reason", body["reason"]))

    def _on_leave_notice(self, n: Node, member: DeviceId, body: dict) -> None:
        self.emit(n.id, ("app", "leave_notice"), ("member", member), ("session", body["session"]))

    # ------------------------------------------------------ app: documents

    def create(self, node: DeviceId, title: str) -> mom.MoMDocument:
        n = self.node(node)
        doc = mom.create_mom(n.store, title)
        self.emit(node, ("mom", "create"), ("doc", doc.doc_id), ("title", title))
        self._fan_out(n, doc)
        return doc

    def edit(self, node: DeviceId, title: str, content: str) -> mom.MoMDocument:
        n = self.node(node)
        doc = n.store.by_title(title, live=True)
        new, update = mom.edit_mom(node, doc, content)
        self._commit(n, new, update)
        n.buffers.pop(doc.doc_id, None)
        return new

    def type(self, node: DeviceId, title: str, content: str) -> None:
        """Change the editor buffer; an auto-save commits it a few ticks later."""
        n = self.node(node)
        doc = n.store.by_title(title, live=True)
        if doc.owned_by != node or doc.list_kind is not mom.ListKind.MY_MOMS:
            raise mom.NotOwner()
        n.buffers[doc.doc_id] = content
        key = (node, doc.doc_id)
        if key not in self._autosave_pending:
            self._autosave_pending.add(key)
            self.schedule(self.now + self.config.autosave_ticks, EventKind.AUTOSAVE, node=node, doc_id=doc.doc_id)

    def _autosave(self, node: DeviceId, doc_id: str) -> None:
        self._autosave_pending.discard((node, doc_id))
        n = self.nodes.get(node)
        if n is None or doc_id not in n.buffers or doc_id not in n.store.my_moms:
            return
        new, update = mom.edit_mom(node, n.store.my_moms[doc_id], n.buffers.pop(doc_id))
        self._commit(n, new, update)

    def _commit(self, n: Node, new: mom.MoMDocument, update: mom.RealTimeUpdate) -> None:
        n.store.put(new)
        self.emit(n.id, ("mom", "commit"), ("doc", new.doc_id), ("rev", new.revision), ("sha", new.digest))
        self._fan_out(n, new)

    def _fan_out(self, n: Node, doc: mom.MoMDocument) -> None:
        """Push the document's current text to every member of n's session."""
        session = self.sessions.hosted_by(n.id)
        if session is None:
            return
        for member in sorted(session.members):
            self.send_app(n.id, member, "rt_update", **_update_body(doc))

    def _on_rt_update(self, n: Node, origin: DeviceId, body: dict) -> None:
        session = self.sessions.session_of(n.id)
        if session is None or session.host != origin:
            self.emit(n.id, ("signal", "NotInSession"), ("message", f"update from {origin} ignored"))
            return
        update = mom.RealTimeUpdate(
            doc_id=body["doc"],
            base_revision=body["rev"],
            new_content=body["content"],
            origin=origin,
            title=body["title"],
        )
        try:
            view = mom.apply_realtime_update(n.store.live.get(update.doc_id), update)
        except mom.StaleUpdate:
            self.emit(n.id, ("mom", "stale"), ("doc", update.doc_id), ("rev", update.base_revision))
            return
        n.store.live[view.doc_id] = view
        self.emit(n.id, ("mom", "apply"), ("doc", view.doc_id), ("rev", view.revision), ("sha", view.digest))

    def share(self, node: DeviceId, title: str, recipients: list[DeviceId]) -> list[mom.FileOffer]:
        n = self.node(node)
        doc = n.store.by_title(title)
        _, offers = mom.share_mom(node, doc, recipients, known_peers=n.table.entries)
        for offer in offers:
            self.emit(node, ("mom", "offer"), ("doc", offer.doc_id), ("to", offer.recipient))
            self.send_app(node, offer.recipient, "offer", offer=_offer_body(offer))
        return offers

    def _on_offer(self, n: Node, sender: DeviceId, body: dict) -> None:
        o = body["offer"]
        offer = mom.FileOffer(
            offer_id=o["offer_id"],
            sender=sender,
            recipient=DeviceId.parse(o["recipient"]),
            doc_id=o["doc_id"],
            title=o["title"],
            content=o["content"],
            revision=o["revision"],
            owned_by=DeviceId.parse(o["owned_by"]),
        )
        n.offers[offer.offer_id] = offer
        self.emit(n.id, ("mom", "offer_received"), ("doc", offer.doc_id), ("from", sender), ("title", offer.title))

    def respond(self, node: DeviceId, title: str, reply: mom.Reply) -> mom.OfferResponse:
        n = self.node(node)
        matches = sorted((o for o in n.offers.values() if o.title == title), key=lambda o: o.offer_id)
        if not matches:
            raise mom.NotFound(f"no pending offer titled {title!r} on {node}")
        offer = matches[0]
        response = mom.respond_to_offer(n.store, offer, reply)
        del n.offers[offer.offer_id]
        self.emit(node, ("mom", reply.value), ("doc", offer.doc_id), ("from", offer.sender))
        if reply is mom.Reply.ACCEPT:
            self.send_app(node, offer.sender, "offer_reply", doc=offer.doc_id, offer_id=offer.offer_id)
        return response

    def _on_offer_reply(self, n: Node, recipient: DeviceId, body: dict) -> None:
        response = mom.OfferResponse(body["offer_id"], body["doc"], recipient, n.id, mom.Reply.ACCEPT)
        doc = mom.record_acceptance(n.store, response)
        if doc is not None:
            self.emit(n.id, ("mom", "shared_with"), ("doc", doc.doc_id), ("members", format_list(doc.shared_with)))

    def file_op(self, node: DeviceId, title: str, op: mom.FileOp, new_title: str | None = None):
        n = self.node(node)
        doc = n.store.by_title(title)
        result = mom.file_operation(n.store, doc.doc_id, op, new_title)
        fields = [("mom", op.value), ("doc", doc.doc_id)]
        if op is mom.FileOp.RENAME:
            fields.append(("title", new_title))
        self.emit(node, *fields)
        return result

    def ping(self, src: DeviceId, dst: DeviceId) -> str:
        return self.send_app(src, dst, "ping")

    # ------------------------------------------------------------ event loop

    def _error(self, node: DeviceId, exc: PbnError) -> None:
        kind = "signal" if isinstance(exc, Signal) else "error"
        self.emit(node, (kind, type(exc).__name__), ("message", str(exc)))

    def _dispatch(self, ev: SimEvent) -> None:
        if ev.kind is EventKind.MESSAGE_ARRIVAL:
            self._arrive(ev.data["envelope"])
        elif ev.kind is EventKind.AUTOSAVE:
            self._autosave(ev.data["node"], ev.data["doc_id"])
        elif ev.kind is EventKind.HOLD_EXPIRED:
            self._hold_expired(ev.data["node"], ev.data["peer"])
        elif ev.kind in TOPOLOGY_KINDS:
            try:
                self.apply_topology_event(ev)
            except PbnError as exc:
                subject = ev.data.get("node") or ev.data.get("a")
                self._error(subject, exc)
        else:
            action = ev.data["action"]
            try:
                action(self)
            except PbnError as exc:
                self._error(ev.data.get("actor", "-"), exc)

    def step(self) -> SimEvent:
        ev = heapq.heappop(self._queue)
        self.now = ev.time
        self._dispatch(ev)
        return ev

    def run_until_quiescent(self, max_ticks: int = 1000, check: bool = False) -> QuiescenceReport:
        """Drain the event queue, stopping at ``max_ticks`` past the start.

        Raises ``NonQuiescent`` (carrying the report) if events remain.
        """
        if max_ticks <= 0:
            raise ValueError("max_ticks must be positive")
        start = self.now
        horizon = start + max_ticks
        while self._queue and self._queue[0].time <= horizon:
            self.step()
            if check:
                self.check_invariants()
        report = self.report(quiescent=not self._queue, ticks=self.now - start)
        if self._queue:
            raise NonQuiescent(report)
        return report

    def report(self, quiescent: bool, ticks: int) -> QuiescenceReport:
        return QuiescenceReport(
            quiescent=quiescent,
            ticks=ticks,
            frames_sent=self.frames_sent,
            frames_delivered=self.frames_delivered,
            frames_dropped=dict(sorted(self.frames_dropped.items())),
            routing_updates=self.routing_updates,
            repair_updates=self.repair_updates,
            packets_originated=self.packets_originated,
            packets_delivered=self.packets_delivered,
            packets_dropped=dict(sorted(self.packets_dropped.items())),
            tables={
                dev.canonical: {k.canonical: v.canonical for k, v in sorted(n.table.entries.items())}
                for dev, n in sorted(self.nodes.items())
            },
        )


def _update_body(doc: mom.MoMDocument) -> dict:
    return {"doc": doc.doc_id, "rev": doc.revision, "content": doc.content, "title": doc.title}


def _offer_body(offer: mom.FileOffer) -> dict:
    return {
        "offer_id": offer.offer_id,
        "recipient": offer.recipient.canonical,
        "doc_id": offer.doc_id,
        "title": offer.title,
        "content": offer.content,
        "revision": offer.revision,
        "owned_by": offer.owned_by.canonical,
    }
