import copy
import itertools

import pytest

from pbn.identity import make_device_id
from pbn.session import (
    AlreadyMemberOfSameSession,
    Decision,
    HostNotHosting,
    NotInSession,
    PeerNotVisible,
    RoleConflict,
    RoleKind,
    SessionRegistry,
    choose_role,
    join_session,
    leave_session,
    session_name,
)

A, B, C, Z = (make_device_id(x, f"200000000{i}") for i, x in enumerate("ABCZ"))


def test_choose_self_means_scribe():
    d = choose_role(A, A, [B, C])
    assert d.decision is Decision.BECOME_SCRIBE and d.host == A


def test_choose_other_means_member():
    d = choose_role(A, B, [B, C])
    assert d.decision is Decision.JOIN_AS_MEMBER and d.host == B


def test_choose_invisible_peer():
    with pytest.raises(PeerNotVisible):
        choose_role(A, Z, [B, C])


def test_session_names_are_unique_per_host():
    assert session_name(A) != session_name(B)
    assert session_name(A) == "meeting@A#2000000000"


def test_join_moves_member_between_sessions():
    reg = SessionRegistry()
    reg.host(B)
    reg.host(C)
    join_session(reg, A, B)
    transitions = join_session(reg, A, C)
    assert [(t.event, t.session) for t in transitions] == [
        ("leave", session_name(B)),
        ("join", session_name(C)),
    ]
    assert A not in reg.hosted_by(B).members
    assert reg.hosted_by(C).members == {A}
    reg.check()


def test_join_from_idle():
    reg = SessionRegistry()
    reg.host(B)
    join_session(reg, A, B)
    assert reg.hosted_by(B).members == {A}
    assert reg.role(A).kind is RoleKind.MEMBER


def test_second_join_is_a_signal():
    reg = SessionRegistry()
    reg.host(B)
    join_session(reg, A, B)
    with pytest.raises(AlreadyMemberOfSameSession):
        join_session(reg, A, B)
    assert reg.hosted_by(B).members == {A}


def test_join_errors():
    reg = SessionRegistry()
    with pytest.raises(HostNotHosting):
        join_session(reg, A, B)
    reg.host(A)
    with pytest.raises(RoleConflict):
        join_session(reg, A, A)
    reg.host(B)
    with pytest.raises(RoleConflict):
        join_session(reg, A, B)


def test_leave():
    reg = SessionRegistry()
    reg.host(B)
    join_session(reg, A, B)
    leave_session(reg, A)
    assert reg.role(A).kind is RoleKind.IDLE
    assert A not in reg.hosted_by(B).members
    with pytest.raises(NotInSession):
        leave_session(reg, A)


def test_member_becoming_scribe_leaves_first():
    reg = SessionRegistry()
    reg.host(B)
    join_session(reg, A, B)
    transitions = reg.host(A)
    assert [t.event for t in transitions] == ["leave", "host"]
    assert reg.hosted_by(B).members == set()
    reg.check()


def test_departing_scribe_orphans_members():
    reg = SessionRegistry()
    reg.host(B)
    join_session(reg, A, B)
    join_session(reg, C, B)
    transitions = reg.drop_device(B)
    assert [(t.node, t.event) for t in transitions] == [(A, "orphaned"), (C, "orphaned"), (B, "orphaned")]
    assert all(reg.role(x).kind is RoleKind.IDLE for x in (A, B, C))
    assert reg.sessions == {}


# --- exhaustive check against an independent model --------------------------

NODES = (A, B, C)


def model_step(state: dict, op: tuple):
    """Reference semantics: state maps node -> "idle" | "scribe" | host."""
    kind, x, *rest = op
    s = dict(state)
    if kind == "host":
        if s[x] == "scribe":
            return state, AlreadyMemberOfSameSession
        s[x] = "scribe"
        return s, None
    if kind == "join":
        (y,) = rest
        if x == y:
            return state, RoleConflict
        if s[y] != "scribe":
            return state, HostNotHosting
        if s[x] == "scribe":
            return state, RoleConflict
        if s[x] == y:
            return state, AlreadyMemberOfSameSession
        s[x] = y
        return s, None
    if s[x] in ("idle", "scribe"):
        return state, NotInSession
    s[x] = "idle"
    return s, None


def view(reg: SessionRegistry) -> dict:
    out = {}
    for x in NODES:
        r = reg.role(x)
        if r.kind is RoleKind.IDLE:
            out[x] = "idle"
        elif r.kind is RoleKind.SCRIBE:
            out[x] = "scribe"
        else:
            out[x] = reg.sessions[r.session].host
    return out


ALL_OPS = (
    [("host", x) for x in NODES]
    + [("leave", x) for x in NODES]
    + [("join", x, y) for x, y in itertools.product(NODES, NODES)]
)


def apply(reg: SessionRegistry, op):
    kind, x, *rest = op
    if kind == "host":
        return reg.host(x)
    if kind == "join":
        return join_session(reg, x, rest[0])
    return leave_session(reg, x)


def test_every_reachable_three_node_state_matches_the_model():
    start = SessionRegistry()
    frontier = [start]
    seen = {tuple(sorted(view(start).items()))}
    transitions_checked = 0
    while frontier:
        nxt = []
        for reg in frontier:
            for op in ALL_OPS:
                trial = copy.deepcopy(reg)
                expected, error = model_step(view(reg), op)
                if error is not None:
                    with pytest.raises(error):
                        apply(trial, op)
                else:
                    apply(trial, op)
                trial.check()
                assert view(trial) == expected, op
                # a member is listed by exactly one host, which is the one it names
                for x in NODES:
                    listed = [s.host for s in trial.sessions.values() if x in s.members]
                    assert listed == ([expected[x]] if expected[x] not in ("idle", "scribe") else [])
                transitions_checked += 1
                key = tuple(sorted(view(trial).items()))
                if key not in seen:
                    seen.add(key)
                    nxt.append(trial)
        frontier = nxt
    # idle/scribe for each node plus every legal membership
    assert len(seen) > 10
    assert transitions_checked == len(seen) * len(ALL_OPS)
