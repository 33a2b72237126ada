"""Scribe/Member roles and session membership.

A device either hosts a session as its Scribe or sits in at most one other
device's session as a Member. Joining a second session silently leaves the
first one. The registry is the single source of truth; the simulator
decides *when* a transition happens (e.g. once a join request has been
routed to the host).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable

from .errors import PbnError, Signal
from .identity import DeviceId


class SessionError(PbnError):
    pass


class PeerNotVisible(SessionError):
    pass


class HostNotHosting(SessionError):
    pass


class NotInSession(SessionError):
    pass


class RoleConflict(SessionError):
    """A Scribe tried to join a session, or a node tried to join its own."""


class AlreadyMemberOfSameSession(Signal):
    pass


class RoleKind(enum.Enum):
    IDLE = "idle"
    SCRIBE = "scribe"
    MEMBER = "member"


@dataclass(frozen=True)
class Role:
    kind: RoleKind
    session: str | None = None


IDLE = Role(RoleKind.IDLE)


class Decision(enum.Enum):
    BECOME_SCRIBE = "become_scribe"
    JOIN_AS_MEMBER = "join_as_member"


@dataclass(frozen=True)
class RoleDecision:
    decision: Decision
    host: DeviceId


def choose_role(node: DeviceId, selected_peer: DeviceId, visible: Iterable[DeviceId]) -> RoleDecision:
    """Picking yourself from the peer list means hosting; anyone else means joining them."""
    if selected_peer != node and selected_peer not in set(visible):
        raise PeerNotVisible(f"{selected_peer} is not in {node}'s peer list")
    if selected_peer == node:
        return RoleDecision(Decision.BECOME_SCRIBE, node)
    return RoleDecision(Decision.JOIN_AS_MEMBER, selected_peer)


def session_name(host: DeviceId, base: str = "meeting") -> str:
    return f"{base}@{host.canonical}"


@dataclass
class Session:
    name: str
    host: DeviceId
    members: set[DeviceId] = field(default_factory=set)


@dataclass(frozen=True)
class Transition:
    """One visible membership change, in the order it happened."""

    node: DeviceId
    event: str  # host | join | leave | orphaned
    session: str


@dataclass
class SessionRegistry:
    sessions: dict[str, Session] = field(default_factory=dict)
    roles: dict[DeviceId, Role] = field(default_factory=dict)

    def role(self, node: DeviceId) -> Role:
        return self.roles.get(node, IDLE)

    def hosted_by(self, host: DeviceId) -> Session | None:
        r = self.role(host)
        if r.kind is RoleKind.SCRIBE:
            return self.sessions[r.session]
        return None

    def session_of(self, node: DeviceId) -> Session | None:
        r = self.role(node)
        return self.sessions.get(r.session) if r.session else None

    def host(self, node: DeviceId, base: str = "meeting") -> list[Transition]:
        current = self.role(node)
        if current.kind is RoleKind.SCRIBE:
            raise AlreadyMemberOfSameSession(f"{node} already hosts {current.session}")
        out = []
        if current.kind is RoleKind.MEMBER:
            out += self.leave(node)
        name = session_name(node, base)
        self.sessions[name] = Session(name, node)
        self.roles[node] = Role(RoleKind.SCRIBE, name)
        out.append(Transition(node, "host", name))
        return out

    def join(self, node: DeviceId, host: DeviceId) -> list[Transition]:
        if node == host:
            raise RoleConflict(f"{node} cannot join its own session as a member")
        target = self.hosted_by(host)
        if target is None:
            raise HostNotHosting(f"{host} is not hosting a session")
        current = self.role(node)
        if current.kind is RoleKind.SCRIBE:
            raise RoleConflict(f"{node} is the Scribe of {current.session}")
        if current.session == target.name:
            raise AlreadyMemberOfSameSession(f"{node} is already in {target.name}")
        out = []
        if current.kind is RoleKind.MEMBER:
            out += self.leave(node)
        target.members.add(node)
        self.roles[node] = Role(RoleKind.MEMBER, target.name)
        out.append(Transition(node, "join", target.name))
        return out

    def leave(self, node: DeviceId) -> list[Transition]:
        current = self.role(node)
        if current.kind is not RoleKind.MEMBER:
            raise NotInSession(f"{node} is not a member of any session")
        self.sessions[current.session].members.discard(node)
        self.roles[node] = IDLE
        return [Transition(node, "leave", current.session)]

    def drop_device(self, node: DeviceId) -> list[Transition]:
        """The device left the world entirely.

        A departing Scribe orphans its session: every member falls back to
        Idle and the session is closed.
        """
        current = self.role(node)
        if current.kind is RoleKind.MEMBER:
            return self.leave(node)
        if current.kind is not RoleKind.SCRIBE:
            return []
        session = self.sessions.pop(current.session)
        out = []
        for m in sorted(session.members):
            self.roles[m] = IDLE
            out.append(Transition(m, "orphaned", session.name))
        del self.roles[node]
        out.append(Transition(node, "orphaned", session.name))
        return out

    def check(self) -> None:
        for node, role in self.roles.items():
            listed = [s.name for s in self.sessions.values() if node in s.members]
            assert len(listed) <= 1, f"{node} is a member of {listed}"
            if role.kind is RoleKind.SCRIBE:
                assert not listed, f"Scribe {node} also listed in {listed}"
                assert self.sessions[role.session].host == node
            elif role.kind is RoleKind.MEMBER:
                assert listed == [role.session]
            else:
                assert not listed
        for s in self.sessions.values():
            assert s.host not in s.members


def join_session(registry: SessionRegistry, node: DeviceId, host: DeviceId) -> list[Transition]:
    return registry.join(node, host)


def leave_session(registry: SessionRegistry, node: DeviceId) -> list[Transition]:
    return registry.leave(node)
