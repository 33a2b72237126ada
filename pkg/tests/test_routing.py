import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbn.identity import make_device_id
from pbn.routing import (
    Action,
    DataPacket,
    DropReason,
    RoutingError,
    RoutingTable,
    RoutingUpdate,
    SelfDiscovery,
    StaleSequence,
    Unreachable,
    UnknownSender,
    build_update,
    forward,
    handle_hold_expired,
    handle_peer_found,
    handle_peer_lost,
    handle_routing_update,
    next_hop,
)

A, B, C, D, E = (make_device_id(x, f"100000000{i}") for i, x in enumerate("ABCDE"))


def table(owner=A, **entries):
    lookup = {"A": A, "B": B, "C": C, "D": D, "E": E}
    return RoutingTable(owner, {lookup[k]: lookup[v] for k, v in entries.items()})


def upd(sender, *reach, seq=1):
    return RoutingUpdate(sender, tuple(sorted(reach)), seq)


# --- peer found -----------------------------------------------------------


def test_found_inserts_direct_entry():
    t, ch = handle_peer_found(table(), B)
    assert t.entries == {B: B}
    assert ch.broadcast_required and ch.added == {B}


def test_found_supersedes_relayed_route_without_broadcast():
    t, ch = handle_peer_found(table(C="B", B="B"), C)
    assert t.entries == {B: B, C: C}
    assert ch.table_changed and not ch.broadcast_required


def test_found_is_idempotent():
    t, ch = handle_peer_found(table(B="B"), B)
    assert t.entries == {B: B}
    assert not ch.table_changed and not ch.broadcast_required


def test_found_self():
    with pytest.raises(SelfDiscovery):
        handle_peer_found(table(), A)


def test_handlers_do_not_mutate_input():
    before = table(B="B", C="B")
    handle_peer_lost(before, B)
    handle_routing_update(before, upd(B, C, D))
    assert before.entries == {B: B, C: B}


# --- peer lost ------------------------------------------------------------


def test_lost_removes_key():
    t, ch = handle_peer_lost(table(B="B", C="C"), B)
    assert t.entries == {C: C}
    assert ch.broadcast_required and ch.removed == {B}


def test_lost_cascades_to_routes_through_peer():
    t, ch = handle_peer_lost(table(B="B", C="B", D="B"), B)
    assert t.entries == {}
    assert ch.removed == {B, C, D}


def test_lost_unknown_peer_is_a_no_op():
    t, ch = handle_peer_lost(table(C="C"), B)
    assert t.entries == {C: C}
    assert not ch.table_changed and not ch.broadcast_required


def test_lost_without_cascade_leaves_dangling_routes():
    t, _ = handle_peer_lost(table(B="B", C="B"), B, cascade=False)
    assert t.entries == {C: B}
    with pytest.raises(AssertionError):
        t.check()


def test_lost_forgets_sender_sequence():
    t, _ = handle_routing_update(table(B="B"), upd(B, C, seq=9))
    t, _ = handle_peer_lost(t, B)
    t, _ = handle_peer_found(t, B)
    # a rebooted neighbor starts counting from 1 again
    t, _ = handle_routing_update(t, upd(B, C, seq=1))
    assert t.entries == {B: B, C: B}


# --- routing updates --------------------------------------------------------


def test_update_learns_listed_peers():
    t, ch = handle_routing_update(table(B="B"), upd(B, A, C, D))
    assert t.entries == {B: B, C: B, D: B}
    assert ch.broadcast_required and ch.added == {C, D}


def test_update_drops_unlisted_routes_through_sender():
    t, ch = handle_routing_update(table(B="B", C="B"), upd(B, A))
    assert t.entries == {B: B}
    assert ch.removed == {C}


def test_update_ignores_own_and_sender_name():
    t, ch = handle_routing_update(table(B="B"), upd(B, A))
    assert t.entries == {B: B}
    assert not ch.table_changed
    with pytest.raises(RoutingError):
        upd(B, A, B)  # a sender never lists itself


def test_update_last_writer_wins_when_enabled():
    t, ch = handle_routing_update(table(B="B", C="C", D="C"), upd(B, A, D), last_writer_wins=True)
    assert t.entries == {B: B, C: C, D: B}
    assert ch.table_changed and not ch.broadcast_required


def test_update_keeps_existing_multi_hop_route_by_default():
    t, ch = handle_routing_update(table(B="B", C="C", D="C"), upd(B, A, D))
    assert t.entries == {B: B, C: C, D: C}
    assert not ch.table_changed


def test_update_never_overrides_direct_neighbor():
    t, _ = handle_routing_update(table(B="B", C="C"), upd(B, C), last_writer_wins=True)
    assert t.entries == {B: B, C: C}


def test_update_from_unknown_sender_lenient_and_strict():
    t, ch = handle_routing_update(table(), upd(B, C))
    assert t.entries == {B: B, C: B}
    assert ch.added == {B, C}
    with pytest.raises(UnknownSender):
        handle_routing_update(table(), upd(B, C), strict=True)


def test_stale_sequence_is_a_signal():
    t, _ = handle_routing_update(table(B="B"), upd(B, C, seq=5))
    with pytest.raises(StaleSequence):
        handle_routing_update(t, upd(B, seq=5))
    with pytest.raises(StaleSequence):
        handle_routing_update(t, upd(B, seq=4))
    t2, _ = handle_routing_update(t, upd(B, seq=6))
    assert t2.entries == {B: B}


def test_update_reports_shrinking_sender():
    t, ch = handle_routing_update(table(B="B"), upd(B, C, D, seq=1))
    assert not ch.sender_shrank
    t, ch = handle_routing_update(t, upd(B, C, D, E, seq=2))
    assert not ch.sender_shrank
    t, ch = handle_routing_update(t, upd(B, C, seq=3))
    assert ch.sender_shrank


def test_held_peers_are_not_learned_but_remembered():
    t, ch = handle_routing_update(table(B="B"), upd(B, C, D), held=frozenset({C}))
    assert t.entries == {B: B, D: B}
    assert t.heard[B] == {C, D}
    t, ch = handle_hold_expired(t, C)
    assert t.entries == {B: B, C: B, D: B}
    assert ch.broadcast_required


def test_hold_expiry_without_any_listing_changes_nothing():
    t, ch = handle_hold_expired(table(B="B"), C)
    assert t.entries == {B: B} and not ch.table_changed


# --- build_update / next_hop / forward ---------------------------------------


def test_build_update_lists_sorted_keys():
    t, u = build_update(table(owner=B, A="A", C="C", D="D"))
    assert u.reachable == (A, C, D) and u.sender == B and u.seq == 1
    assert t.seq == 1


def test_build_update_empty():
    _, u = build_update(table())
    assert u.reachable == ()


def test_build_update_split_horizon():
    t = table(owner=B, A="A", C="A")
    _, u = build_update(t, target=A)
    assert u.reachable == (A,)
    _, u = build_update(t, target=A, split_horizon=False)
    assert u.reachable == (A, C)


def test_build_update_bumps_seq_each_time():
    t = table()
    seqs = []
    for _ in range(3):
        t, u = build_update(t)
        seqs.append(u.seq)
    assert seqs == [1, 2, 3]


def test_next_hop():
    assert next_hop(table(B="B", C="B"), C) == B
    assert next_hop(table(B="B"), B) == B
    with pytest.raises(Unreachable):
        next_hop(table(B="B"), E)
    with pytest.raises(RoutingError):
        next_hop(table(B="B"), A)


def test_forward_line_topology():
    at_b = table(owner=B, A="A", C="C", D="C")
    decision = forward(at_b, DataPacket(A, D, ttl=8, trace=(A,)))
    assert decision.action is Action.SEND and decision.next_hop == C
    assert decision.packet.ttl == 7 and decision.packet.trace == (A, B)


def test_forward_delivers_at_destination():
    decision = forward(table(owner=D, C="C"), DataPacket(A, D, ttl=5, trace=(A, B, C)))
    assert decision.action is Action.DELIVER and decision.packet.hops == 3


def test_forward_drop_reasons():
    at_b = table(owner=B, A="A", C="C", D="C")
    assert forward(at_b, DataPacket(A, D, ttl=3, trace=(A, B))).reason is DropReason.LOOP_DETECTED
    assert forward(at_b, DataPacket(A, D, ttl=0)).reason is DropReason.TTL_EXPIRED
    assert forward(at_b, DataPacket(A, E, ttl=3)).reason is DropReason.NO_ROUTE
    with pytest.raises(ValueError):
        DataPacket(A, D, ttl=-1)


# --- structural invariants under arbitrary handler sequences ------------------

peers = [B, C, D, E]
ops = st.lists(
    st.one_of(
        st.tuples(st.just("found"), st.sampled_from(peers)),
        st.tuples(st.just("lost"), st.sampled_from(peers)),
        st.tuples(
            st.just("update"),
            st.sampled_from(peers),
            st.sets(st.sampled_from([A] + peers)),
            st.booleans(),
        ),
    ),
    max_size=30,
)


@settings(max_examples=300)
@given(ops)
def test_invariants_hold_after_every_operation(seq):
    t = RoutingTable(A)
    counters = {}
    for op in seq:
        before = t
        if op[0] == "found":
            t, ch = handle_peer_found(t, op[1])
        elif op[0] == "lost":
            t, ch = handle_peer_lost(t, op[1])
        else:
            _, sender, listed, lww = op
            counters[sender] = counters.get(sender, 0) + 1
            reach = tuple(sorted(listed - {sender}))
            t, ch = handle_routing_update(t, RoutingUpdate(sender, reach, counters[sender]), last_writer_wins=lww)
        t.check()
        assert ch.broadcast_required == (set(before.entries) != set(t.entries))
        assert ch.table_changed == (before.entries != t.entries)
        assert not ch.broadcast_required or ch.table_changed
        assert ch.added == set(t.entries) - set(before.entries)
        assert ch.removed == set(before.entries) - set(t.entries)
