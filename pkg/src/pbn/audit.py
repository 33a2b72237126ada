"""Recompute run outcomes from a trace alone.

Nothing here touches simulator state: every answer is derived by replaying
trace records, so it can cross-check what ``scenario.evaluate`` concluded
from the live world.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from .mom import content_digest
from .trace import TraceRecord, parse_list, parse_table, parse_trace


@dataclass
class Replay:
    tables: dict[str, dict[str, str]] = field(default_factory=dict)
    roles: dict[str, tuple[str, str | None]] = field(default_factory=dict)
    sessions: dict[str, str] = field(default_factory=dict)  # session name -> host
    deliveries: list[tuple[str, str, int]] = field(default_factory=list)
    # per node: doc_id -> title of the node's own documents
    own_docs: dict[str, dict[str, str]] = field(default_factory=lambda: defaultdict(dict))
    commits: dict[str, str] = field(default_factory=dict)  # doc_id -> last committed sha
    views: dict[tuple[str, str], str] = field(default_factory=dict)  # (node, doc) -> sha
    shared_with: dict[str, list[str]] = field(default_factory=dict)
    offered_titles: dict[tuple[str, str], str] = field(default_factory=dict)
    shared_moms: dict[str, dict[str, str]] = field(default_factory=lambda: defaultdict(dict))
    errors: list[tuple[str, str, str, str | None]] = field(default_factory=list)


def replay(lines: Iterable[str]) -> Replay:
    r = Replay()
    for rec in parse_trace(lines):
        _apply(r, rec)
    return r


def _apply(r: Replay, rec: TraceRecord) -> None:
    node, kind, value = rec.node, rec.kind, rec.value
    if kind == "topology" and value in ("add_node", "remove_node"):
        r.tables[node] = {}
        if value == "remove_node":
            r.own_docs.pop(node, None)
            r.shared_moms.pop(node, None)
            r.views = {k: v for k, v in r.views.items() if k[0] != node}
    elif kind == "table":
        r.tables[node] = parse_table(value)
    elif kind == "packet" and value == "deliver":
        r.deliveries.append((rec.get("src"), rec.get("dst"), int(rec.get("hops"))))
    elif kind == "session_event":
        session = rec.get("session")
        if value == "host":
            r.roles[node] = ("scribe", session)
            r.sessions[session] = node
        elif value == "join":
            r.roles[node] = ("member", session)
        else:
            r.roles[node] = ("idle", None)
            if value == "orphaned":
                r.sessions.pop(session, None)
    elif kind == "mom":
        doc = rec.get("doc")
        if value == "create":
            r.own_docs[node][doc] = rec.get("title")
        elif value == "commit":
            r.commits[doc] = rec.get("sha")
        elif value == "apply":
            r.views[(node, doc)] = rec.get("sha")
        elif value == "shared_with":
            r.shared_with[doc] = parse_list(rec.get("members"))
        elif value == "offer_received":
            r.offered_titles[(node, doc)] = rec.get("title")
        elif value == "accept":
            r.shared_moms[node].setdefault(doc, r.offered_titles.get((node, doc), doc))
        elif value == "rename":
            for table in (r.own_docs[node], r.shared_moms[node]):
                if doc in table:
                    table[doc] = rec.get("title")
        elif value == "delete":
            r.own_docs[node].pop(doc, None)
            r.shared_moms[node].pop(doc, None)
    elif kind in ("error", "signal"):
        r.errors.append((node, kind, value, rec.get("message")))


def _doc_by_title(r: Replay, owner: str, title: str) -> str | None:
    matches = sorted(d for d, t in r.own_docs.get(owner, {}).items() if t == title)
    return matches[0] if matches else None


def verdicts(lines: Iterable[str], assertions: list[dict], resolve) -> list[bool]:
    """Pass/fail per assertion; ``resolve`` maps a scenario name to a canonical id."""
    r = replay(lines)
    out = []
    for a in assertions:
        out.append(_check(r, a, resolve))
    return out


def _check(r: Replay, a: dict, resolve) -> bool:
    kind = a["type"]
    if kind == "table_equals":
        want = {resolve(k): resolve(v) for k, v in a["table"].items()}
        return r.tables.get(resolve(a["node"]), {}) == want
    if kind == "unreachable":
        return resolve(a["dst"]) not in r.tables.get(resolve(a["node"]), {})
    if kind == "delivered_within":
        src, dst = resolve(a["src"]), resolve(a["dst"])
        return any(s == src and d == dst and h <= a["hops"] for s, d, h in r.deliveries)
    if kind == "role_is":
        role, session = r.roles.get(resolve(a["node"]), ("idle", None))
        if role != a["role"]:
            return False
        return "host" not in a or r.sessions.get(session) == resolve(a["host"])
    if kind == "content_converged":
        owner = resolve(a["owner"])
        doc = _doc_by_title(r, owner, a["title"])
        if doc is None:
            return False
        if "members" in a:
            members = [resolve(m) for m in a["members"]]
        else:
            role, session = r.roles.get(owner, ("idle", None))
            members = (
                sorted(n for n, (k, s) in r.roles.items() if k == "member" and s == session)
                if role == "scribe"
                else []
            )
        sha = r.commits.get(doc, content_digest(""))
        return bool(members) and all(r.views.get((m, doc)) == sha for m in members)
    if kind == "shared_with":
        doc = _doc_by_title(r, resolve(a["owner"]), a["title"])
        return doc is not None and r.shared_with.get(doc, []) == [resolve(m) for m in a["members"]]
    if kind == "shared_moms":
        return sorted(r.shared_moms.get(resolve(a["node"]), {}).values()) == sorted(a["titles"])
    if kind == "error_seen":
        node = resolve(a["node"])
        hits = [m for n, _, e, m in r.errors if n == node and e == a["error"]]
        return bool(hits) and ("message" not in a or a["message"] in hits)
    raise ValueError(f"unknown assertion type {kind!r}")


@dataclass
class BroadcastAudit:
    broadcasts: int
    updates_sent: int
    repairs: int
    violations: list[str]


def broadcast_discipline(lines: Iterable[str]) -> BroadcastAudit:
    """Check that routing updates are only sent for a reason the trace shows.

    A broadcast must directly follow a key-set change of its node and be
    immediately followed by one plain send per announced neighbor. A unicast
    ``reason=refresh`` must answer an update received by the same node in the
    same tick; ``reason=hello`` must follow a discovery there.
    """
    keys: dict[str, frozenset[str]] = {}
    prev: TraceRecord | None = None
    prev_keys: frozenset[str] | None = None
    owed: tuple[str, int, int] | None = None  # node, tick, sends still owed
    last_recv: dict[str, int] = {}
    last_found: dict[str, int] = {}
    broadcasts = sends = repairs = 0
    violations = []
    for rec in parse_trace(lines):
        plain_send = rec.kind == "send" and rec.value == "update" and rec.get("reason") is None
        if owed is not None and not plain_send:
            violations.append(f"broadcast by {owed[0]} at t={owed[1]} missing {owed[2]} sends")
            owed = None
        if rec.kind == "broadcast":
            broadcasts += 1
            ok = (
                prev is not None
                and prev.kind == "table"
                and prev.node == rec.node
                and prev.t == rec.t
                and prev_keys != keys.get(rec.node)
            )
            if not ok:
                violations.append(f"unprompted broadcast: {rec}")
            left = int(rec.get("neighbors", "0"))
            owed = (rec.node, rec.t, left) if left else None
        elif rec.kind == "send" and rec.value == "update":
            sends += 1
            reason = rec.get("reason")
            if reason is None:
                if owed is None or owed[:2] != (rec.node, rec.t):
                    violations.append(f"send outside a broadcast: {rec}")
                else:
                    owed = (rec.node, rec.t, owed[2] - 1) if owed[2] > 1 else None
            else:
                repairs += 1
                cause = last_recv if reason == "refresh" else last_found if reason == "hello" else {}
                if cause.get(rec.node) != rec.t:
                    violations.append(f"{reason} without cause: {rec}")
        elif rec.kind == "recv" and rec.value == "update":
            last_recv[rec.node] = rec.t
        elif rec.kind == "discovery" and rec.value == "found":
            last_found[rec.node] = rec.t
        prev_keys = None
        if rec.kind == "table":
            prev_keys = keys.get(rec.node, frozenset())
            keys[rec.node] = frozenset(parse_table(rec.value))
        elif rec.kind == "topology" and rec.value in ("add_node", "remove_node"):
            keys[rec.node] = frozenset()
        prev = rec
    if owed is not None:
        violations.append(f"broadcast by {owed[0]} at t={owed[1]} missing {owed[2]} sends")
    return BroadcastAudit(broadcasts, sends, repairs, violations)
