import random

import pytest

from oracles import adjacency, bring_up, ids, random_connected_graph
from pbn import mom
from pbn.session import RoleKind
from pbn.simulator import (
    DuplicateEdge,
    DuplicateNode,
    Envelope,
    EventKind,
    MissingEdge,
    NonQuiescent,
    NotAdjacent,
    SimConfig,
    SimError,
    UnknownNode,
    World,
)


def world_of(n, edges=(), config=None):
    w = World(config or SimConfig())
    w.declared_nodes = n
    d = ids(n)
    for dev in d:
        w.add_node(dev)
    for a, b in edges:
        w.add_edge(d[a], d[b])
    return w, d


def test_defaults_come_from_an_empty_config():
    c = SimConfig()
    assert (c.latency_ticks, c.ttl, c.split_horizon, c.faithful_routing) == (1, None, True, False)
    assert c.hello and c.refresh
    f = SimConfig(faithful_routing=True)
    assert not f.hello and not f.refresh and f.relearn_latest and not f.cascade


def test_ttl_defaults_to_node_count():
    w, _ = world_of(5)
    assert w.ttl == 5
    assert World(SimConfig(ttl=2)).ttl == 2


def test_empty_world_is_quiescent_at_once():
    report = World().run_until_quiescent(10)
    assert report.quiescent and report.ticks == 0 and report.frames_sent == 0


def test_max_ticks_must_be_positive():
    with pytest.raises(ValueError):
        World().run_until_quiescent(0)


def test_topology_errors():
    w, (a, b, c) = world_of(3, [(0, 1)])
    with pytest.raises(DuplicateNode):
        w.add_node(a)
    with pytest.raises(UnknownNode):
        w.add_edge(a, ids(4)[3])
    with pytest.raises(DuplicateEdge):
        w.add_edge(b, a)
    with pytest.raises(MissingEdge):
        w.remove_edge(a, c)
    with pytest.raises(SimError):
        w.add_edge(a, a)


def test_signals_inside_a_run_are_traced_not_raised():
    w, (a, b) = world_of(2, [(0, 1)])
    w.schedule(1, EventKind.ADD_EDGE, a=a, b=b)
    w.run_until_quiescent(10)
    assert any("signal=DuplicateEdge" in line for line in w.trace)


def test_events_at_one_tick_run_in_enqueue_order():
    w, d = world_of(3)
    w.schedule(0, EventKind.ADD_EDGE, a=d[1], b=d[2])
    w.schedule(0, EventKind.ADD_EDGE, a=d[0], b=d[1])
    w.run_until_quiescent(10)
    edges = [line for line in w.trace if "topology=add_edge" in line]
    assert [line.split()[1] for line in edges] == [f"node={d[1]}", f"node={d[0]}"]


def test_adjacent_send_arrives_next_tick():
    w, (a, b) = world_of(2, [(0, 1)])
    w.run_until_quiescent(10)
    ev = w.send_message(a, b, Envelope("data", a, b, None))
    assert ev.time == w.now + 1


def test_non_adjacent_send():
    w, (a, b, c) = world_of(3, [(0, 1)])
    with pytest.raises(NotAdjacent):
        w.send_message(a, c, Envelope("update", a, c, None))


def test_frame_in_flight_is_lost_when_link_drops():
    w, (a, b) = world_of(2)
    w.add_edge(a, b)  # both sides broadcast, frames arrive at t=1
    w.remove_edge(a, b)
    report = w.run_until_quiescent(10)
    assert report.frames_dropped == {"link_down": 2}
    assert sum("drop=link_down" in line for line in w.trace) == 2
    assert report.frames_in_flight == 0


def test_isolated_node_keeps_an_empty_table():
    w, d = world_of(3, [(0, 1)])
    w.schedule(0, EventKind.ADD_NODE, node=ids(4)[3])
    w.run_until_quiescent(20)
    assert w.nodes[ids(4)[3]].table.entries == {}


def test_remove_node_notifies_exactly_its_neighbors():
    edges = [(0, 1), (0, 2), (0, 3), (3, 4)]
    w, d = world_of(5, edges)
    w.run_until_quiescent(50)
    start = len(w.trace)
    w.remove_node(d[0])
    lost = {line.split()[1][5:] for line in w.trace[start:] if "discovery=lost" in line}
    assert lost == {str(d[v]) for v in adjacency(5, edges)[0]}
    w.run_until_quiescent(50, check=True)
    assert d[0] not in w.nodes
    assert w.nodes[d[3]].table.entries == {d[4]: d[4]}


def test_scribe_edge_removal_rescued_by_relay():
    w, (s, r, m) = world_of(3, [(0, 1), (1, 2), (0, 2)])
    w.run_until_quiescent(50)
    w.remove_edge(s, m)
    w.run_until_quiescent(50)
    assert w.nodes[m].table.entries[s] == r


def test_static_graphs_go_quiet_within_ten_ticks_per_node():
    rng = random.Random(17)
    for _ in range(200):
        n = rng.randint(2, 8)
        edges = random_connected_graph(rng, n)
        w, _ = world_of(n, edges)
        report = w.run_until_quiescent(10 * n)
        assert report.quiescent and report.ticks <= 10 * n


def test_conservation_after_churn_and_traffic():
    rng = random.Random(3)
    for _ in range(30):
        n = rng.randint(3, 8)
        edges = random_connected_graph(rng, n)
        w, d = world_of(n)
        for i, (a, b) in enumerate(edges):
            w.schedule(i, EventKind.ADD_EDGE, a=d[a], b=d[b])
        for a, b in rng.sample(edges, len(edges) // 2):
            w.schedule(rng.randint(0, 10), EventKind.REMOVE_EDGE, a=d[a], b=d[b])
        for _ in range(5):
            s, t = rng.sample(d, 2)
            w.schedule(rng.randint(0, 12), EventKind.USER_ACTION, action=lambda w, s=s, t=t: w.ping(s, t), actor=s)
        report = w.run_until_quiescent(500)
        assert report.frames_sent == report.frames_delivered + sum(report.frames_dropped.values())
        assert report.packets_originated == report.packets_delivered + sum(report.packets_dropped.values())


def test_same_config_same_trace():
    def once():
        rng = random.Random(8)
        n = 7
        edges = random_connected_graph(rng, n)
        rng.shuffle(edges)
        return bring_up(n, edges, "tick").trace

    assert once() == once()


def test_faithful_mode_without_split_horizon_counts_to_infinity():
    # C leaves while B's first announcement of it is still in flight
    w, (a, b, c) = world_of(3, config=SimConfig(faithful_routing=True, split_horizon=False))
    w.schedule(1, EventKind.ADD_EDGE, a=a, b=b)
    w.schedule(3, EventKind.ADD_EDGE, a=b, b=c)
    w.schedule(4, EventKind.REMOVE_EDGE, a=b, b=c)
    with pytest.raises(NonQuiescent) as err:
        w.run_until_quiescent(200)
    # A and B keep handing the dead peer back and forth
    assert err.value.report.routing_updates > 150
    assert c in w.nodes[a].table.entries or c in w.nodes[b].table.entries


def test_relaying_disabled_blocks_cross_hop_join():
    w, (s, r, m) = world_of(3, [(0, 1), (1, 2)], SimConfig(forwarding=False))
    w.run_until_quiescent(50)
    w.choose(s, s)
    w.choose(m, s)
    w.run_until_quiescent(50)
    assert w.sessions.role(m).kind is RoleKind.IDLE
    assert w.packets_dropped == {"forwarding_disabled": 1}


def session_world():
    w, (s, r, m) = world_of(3, [(0, 1), (1, 2)])
    w.run_until_quiescent(50)
    w.choose(s, s)
    w.choose(m, s)
    w.choose(r, s)
    w.run_until_quiescent(50)
    return w, s, r, m


def test_cross_hop_join_and_live_edits():
    w, s, r, m = session_world()
    assert w.sessions.hosted_by(s).members == {r, m}
    doc = w.create(s, "notes.txt")
    w.edit(s, "notes.txt", "first")
    w.edit(s, "notes.txt", "second")
    w.run_until_quiescent(50)
    for member in (r, m):
        view = w.nodes[member].store.live[doc.doc_id]
        assert view.content == "second" and view.revision == 2
        # a live view is not a file in Shared MoMs
        assert w.nodes[member].store.shared_moms == {}


def test_member_edit_is_refused_with_the_literal_message():
    w, s, r, m = session_world()
    w.create(s, "notes.txt")
    w.run_until_quiescent(20)
    with pytest.raises(mom.NotOwner, match="^Only Scribe Can Edit$"):
        w.type(m, "notes.txt", "hijack")


def test_late_joiner_gets_current_content():
    w, s, r, m = session_world()
    w.create(s, "notes.txt")
    w.edit(s, "notes.txt", "agenda")
    w.run_until_quiescent(20)
    late = ids(4)[3]
    w.add_node(late)
    w.add_edge(late, m)
    w.run_until_quiescent(50)
    w.choose(late, s)
    w.run_until_quiescent(50)
    view = w.nodes[late].store.live[w.nodes[s].store.by_title("notes.txt").doc_id]
    assert view.content == "agenda"


def test_scribe_leaving_orphans_the_session():
    w, s, r, m = session_world()
    w.remove_node(s)
    w.run_until_quiescent(50, check=True)
    assert w.sessions.sessions == {}
    assert w.sessions.role(m).kind is RoleKind.IDLE
    assert any("session_event=orphaned" in line and f"node={m}" in line for line in w.trace)


def test_typing_is_committed_by_autosave():
    w, s, r, m = session_world()
    doc = w.create(s, "notes.txt")
    w.type(s, "notes.txt", "dra")
    w.type(s, "notes.txt", "draft")
    assert w.nodes[s].store.my_moms[doc.doc_id].revision == 0
    w.run_until_quiescent(50)
    assert w.nodes[s].store.my_moms[doc.doc_id].revision == 1
    assert w.nodes[m].store.live[doc.doc_id].content == "draft"


def test_share_travels_over_two_hops():
    w, s, r, m = session_world()
    w.create(s, "notes.txt")
    w.edit(s, "notes.txt", "body")
    w.share(s, "notes.txt", [m])
    w.run_until_quiescent(50)
    w.respond(m, "notes.txt", mom.Reply.ACCEPT)
    w.run_until_quiescent(50)
    owner_copy = w.nodes[s].store.by_title("notes.txt")
    assert owner_copy.shared_with == (m,)
    assert [d.content for d in w.nodes[m].store.shared_moms.values()] == ["body"]
    assert w.nodes[r].store.shared_moms == {}
