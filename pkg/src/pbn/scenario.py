"""Scenario files: loading, validation, execution and assertion checks.

A scenario is a JSON document (``schema_version: 1``)::

    {
      "schema_version": 1,
      "name": "star",
      "config": {"latency_ticks": 1, "split_horizon": true},
      "max_ticks": 500,
      "nodes": [{"social_name": "A", "sim_number": "1000000001"}, ...],
      "events": [{"t": 0, "op": "add_edge", "a": "A", "b": "B"}, ...],
      "assertions": [{"type": "table_equals", "node": "A", "table": {"B": "B"}}]
    }

Nodes are referred to by social name everywhere inside the file, so social
names must be unique within one scenario. A node with ``"present": false``
only enters the world through an ``add_node`` event.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import jsonschema

from . import mom
from .errors import PbnError
from .identity import DeviceId, IdentityError, make_device_id
from .mom import content_digest
from .session import RoleKind
from .trace import parse_trace
from .simulator import EventKind, NonQuiescent, QuiescenceReport, SimConfig, World

SCHEMA_VERSION = 1

TOPOLOGY_OPS = {"add_node", "remove_node", "add_edge", "remove_edge"}
ACTION_OPS = {"choose", "leave", "create", "edit", "type", "share", "respond", "send", "read", "rename", "delete"}
ASSERTION_TYPES = {
    "table_equals",
    "delivered_within",
    "content_converged",
    "role_is",
    "unreachable",
    "shared_with",
    "shared_moms",
    "error_seen",
}

# which fields of an event / assertion hold node names
NODE_FIELDS = {
    "add_node": ["node"],
    "remove_node": ["node"],
    "add_edge": ["a", "b"],
    "remove_edge": ["a", "b"],
    "choose": ["node", "peer"],
    "leave": ["node"],
    "create": ["node"],
    "edit": ["node"],
    "type": ["node"],
    "share": ["node"],
    "respond": ["node"],
    "send": ["src", "dst"],
    "read": ["node"],
    "rename": ["node"],
    "delete": ["node"],
    "table_equals": ["node"],
    "delivered_within": ["src", "dst"],
    "content_converged": ["owner"],
    "role_is": ["node"],
    "unreachable": ["node", "dst"],
    "shared_with": ["owner"],
    "shared_moms": ["node"],
    "error_seen": ["node"],
}
NODE_LIST_FIELDS = {"share": ["to"], "content_converged": ["members"], "shared_with": ["members"], "role_is": ["host"]}

_str = {"type": "string", "minLength": 1}
_tick = {"type": "integer", "minimum": 0}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["schema_version", "name", "nodes", "events"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": _str,
        "description": {"type": "string"},
        "max_ticks": {"type": "integer", "minimum": 1},
        "config": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "latency_ticks": {"type": "integer", "minimum": 1},
                "ttl": {"type": "integer", "minimum": 1},
                "split_horizon": {"type": "boolean"},
                "faithful_routing": {"type": "boolean"},
                "last_writer_wins": {"type": "boolean"},
                "hold_down": {"type": "integer", "minimum": 0},
                "hello_on_found": {"type": "boolean"},
                "refresh_on_shrink": {"type": "boolean"},
                "seed": {"type": "integer"},
                "strict_senders": {"type": "boolean"},
                "forwarding": {"type": "boolean"},
                "autosave_ticks": {"type": "integer", "minimum": 1},
            },
        },
        "nodes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["social_name", "sim_number"],
                "additionalProperties": False,
                "properties": {
                    "social_name": _str,
                    "sim_number": {"type": "string"},
                    "present": {"type": "boolean"},
                },
            },
        },
        "events": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["t", "op"],
                "properties": {
                    "t": _tick,
                    "op": {"enum": sorted(TOPOLOGY_OPS | ACTION_OPS)},
                    "node": _str,
                    "a": _str,
                    "b": _str,
                    "peer": _str,
                    "src": _str,
                    "dst": _str,
                    "title": _str,
                    "new_title": _str,
                    "content": {"type": "string"},
                    "to": {"type": "array", "items": _str},
                    "decision": {"enum": ["accept", "reject"]},
                },
                "additionalProperties": False,
            },
        },
        "assertions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["type"],
                "properties": {
                    "type": {"enum": sorted(ASSERTION_TYPES)},
                    "node": _str,
                    "src": _str,
                    "dst": _str,
                    "owner": _str,
                    "title": _str,
                    "hops": {"type": "integer", "minimum": 0},
                    "table": {"type": "object", "additionalProperties": _str},
                    "role": {"enum": [k.value for k in RoleKind]},
                    "host": _str,
                    "members": {"type": "array", "items": _str},
                    "titles": {"type": "array", "items": _str},
                    "error": _str,
                    "message": {"type": "string"},
                },
                "additionalProperties": False,
            },
        },
    },
}

REQUIRED_FIELDS = {
    "add_node": ["node"],
    "remove_node": ["node"],
    "add_edge": ["a", "b"],
    "remove_edge": ["a", "b"],
    "choose": ["node", "peer"],
    "leave": ["node"],
    "create": ["node", "title"],
    "edit": ["node", "title", "content"],
    "type": ["node", "title", "content"],
    "share": ["node", "title", "to"],
    "respond": ["node", "title", "decision"],
    "send": ["src", "dst"],
    "read": ["node", "title"],
    "rename": ["node", "title", "new_title"],
    "delete": ["node", "title"],
    "table_equals": ["node", "table"],
    "delivered_within": ["src", "dst", "hops"],
    "content_converged": ["owner", "title"],
    "role_is": ["node", "role"],
    "unreachable": ["node", "dst"],
    "shared_with": ["owner", "title", "members"],
    "shared_moms": ["node", "titles"],
    "error_seen": ["node", "error"],
}


class ScenarioError(PbnError):
    pass


class ParseError(ScenarioError):
    pass


class SchemaViolation(ScenarioError):
    def __init__(self, report: ValidationReport):
        super().__init__("; ".join(str(v) for v in report.violations))
        self.report = report


@dataclass(frozen=True)
class Violation:
    pointer: str
    message: str

    def __str__(self) -> str:
        return f"{self.pointer}: {self.message}"


@dataclass
class ValidationReport:
    source: str
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, pointer: str, message: str) -> None:
        self.violations.append(Violation(pointer, message))


@dataclass
class Scenario:
    name: str
    nodes: dict[str, DeviceId]
    present: list[str]
    events: list[dict]
    assertions: list[dict]
    config: dict = field(default_factory=dict)
    max_ticks: int = 1000
    description: str = ""
    source: str = "<memory>"

    def device(self, name: str) -> DeviceId:
        return self.nodes[name]

    def sim_config(self, **overrides) -> SimConfig:
        merged = {**self.config, **{k: v for k, v in overrides.items() if v is not None}}
        return SimConfig(**merged)


def _pointer(path) -> str:
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else part)
    return out or "<root>"


def parse(text: str, source: str = "<memory>") -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def validate_document(doc: dict, source: str = "<memory>") -> ValidationReport:
    report = ValidationReport(source)
    validator = jsonschema.Draft202012Validator(SCHEMA)
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path))):
        report.add(_pointer(err.absolute_path), err.message)
    if not report.ok:
        return report

    names: dict[str, DeviceId] = {}
    present: set[str] = set()
    for i, entry in enumerate(doc["nodes"]):
        name = entry["social_name"]
        try:
            dev = make_device_id(name, entry["sim_number"])
        except IdentityError as exc:
            report.add(f"nodes[{i}]", f"{type(exc).__name__}: {exc}")
            continue
        if name in names:
            report.add(f"nodes[{i}].social_name", f"duplicate social name {name!r}")
        names[name] = dev
        if entry.get("present", True):
            present.add(name)

    def check_refs(kind: str, item: dict, where: str) -> None:
        for key in REQUIRED_FIELDS[kind]:
            if key not in item:
                report.add(where, f"{kind} requires {key!r}")
        for key in NODE_FIELDS.get(kind, []):
            if key in item and item[key] not in names:
                report.add(f"{where}.{key}", f"undeclared node {item[key]!r}")
        for key in NODE_LIST_FIELDS.get(kind, []):
            value = item.get(key)
            for j, ref in enumerate(value if isinstance(value, list) else [value] if value else []):
                if ref not in names:
                    suffix = f"[{j}]" if isinstance(value, list) else ""
                    report.add(f"{where}.{key}{suffix}", f"undeclared node {ref!r}")

    last_t = 0
    for i, ev in enumerate(doc["events"]):
        where = f"events[{i}]"
        if ev["t"] < last_t:
            report.add(f"{where}.t", f"event times must be non-decreasing ({ev['t']} after {last_t})")
        last_t = max(last_t, ev["t"])
        op = ev["op"]
        check_refs(op, ev, where)
        if op == "add_node" and ev.get("node") in names:
            if ev["node"] in present:
                report.add(f"{where}.node", f"{ev['node']!r} is already present")
            present.add(ev["node"])
        elif op == "remove_node" and ev.get("node") in names:
            if ev["node"] not in present:
                report.add(f"{where}.node", f"{ev['node']!r} is not present")
            present.discard(ev["node"])
        elif op in ("add_edge", "remove_edge"):
            if ev.get("a") is not None and ev.get("a") == ev.get("b"):
                report.add(where, "an edge needs two distinct nodes")
            for key in ("a", "b"):
                ref = ev.get(key)
                if ref in names and ref not in present:
                    report.add(f"{where}.{key}", f"{ref!r} is not present at t={ev['t']}")

    for i, check in enumerate(doc.get("assertions", [])):
        check_refs(check["type"], check, f"assertions[{i}]")
        if check["type"] == "table_equals" and isinstance(check.get("table"), dict):
            for peer, via in check["table"].items():
                for ref in (peer, via):
                    if ref not in names:
                        report.add(f"assertions[{i}].table", f"undeclared node {ref!r}")
    return report


def load(path: str | Path) -> Scenario:
    """Parse and validate a scenario file; raise if it is not clean."""
    path = Path(path)
    doc = parse(path.read_text(encoding="utf-8"), str(path))
    return from_document(doc, str(path))


def from_document(doc: dict, source: str = "<memory>") -> Scenario:
    report = validate_document(doc, source)
    if not report.ok:
        raise SchemaViolation(report)
    nodes = {n["social_name"]: make_device_id(n["social_name"], n["sim_number"]) for n in doc["nodes"]}
    return Scenario(
        name=doc["name"],
        nodes=nodes,
        present=[n["social_name"] for n in doc["nodes"] if n.get("present", True)],
        events=list(doc["events"]),
        assertions=list(doc.get("assertions", [])),
        config=dict(doc.get("config", {})),
        max_ticks=doc.get("max_ticks", 1000),
        description=doc.get("description", ""),
        source=source,
    )


def validate_file(path: str | Path) -> ValidationReport:
    path = Path(path)
    try:
        doc = parse(path.read_text(encoding="utf-8"), str(path))
    except ParseError as exc:
        report = ValidationReport(str(path))
        report.add("<file>", str(exc))
        return report
    return validate_document(doc, str(path))


# ---------------------------------------------------------------- execution


def _action(scn: Scenario, ev: dict):
    dev = scn.device
    op = ev["op"]
    if op == "choose":
        return lambda w: w.choose(dev(ev["node"]), dev(ev["peer"]))
    if op == "leave":
        return lambda w: w.leave(dev(ev["node"]))
    if op == "create":
        return lambda w: w.create(dev(ev["node"]), ev["title"])
    if op == "edit":
        return lambda w: w.edit(dev(ev["node"]), ev["title"], ev["content"])
    if op == "type":
        return lambda w: w.type(dev(ev["node"]), ev["title"], ev["content"])
    if op == "share":
        return lambda w: w.share(dev(ev["node"]), ev["title"], [dev(r) for r in ev["to"]])
    if op == "respond":
        return lambda w: w.respond(dev(ev["node"]), ev["title"], mom.Reply(ev["decision"]))
    if op == "send":
        return lambda w: w.ping(dev(ev["src"]), dev(ev["dst"]))
    file_op = mom.FileOp(op)
    return lambda w: w.file_op(dev(ev["node"]), ev["title"], file_op, ev.get("new_title"))


def build_world(scn: Scenario, config: SimConfig) -> World:
    world = World(config)
    world.declared_nodes = len(scn.nodes)
    for name in scn.present:
        world.add_node(scn.device(name))
    for ev in scn.events:
        op = ev["op"]
        if op in ("add_node", "remove_node"):
            world.schedule(ev["t"], EventKind(op), node=scn.device(ev["node"]))
        elif op in ("add_edge", "remove_edge"):
            world.schedule(ev["t"], EventKind(op), a=scn.device(ev["a"]), b=scn.device(ev["b"]))
        else:
            actor = scn.device(ev.get("node") or ev["src"])
            world.schedule(ev["t"], EventKind.USER_ACTION, action=_action(scn, ev), actor=actor, op=op)
    return world


@dataclass
class Verdict:
    index: int
    type: str
    passed: bool
    detail: str

    def to_dict(self) -> dict:
        return {"index": self.index, "type": self.type, "passed": self.passed, "detail": self.detail}


@dataclass
class RunResult:
    scenario: Scenario
    world: World
    report: QuiescenceReport
    verdicts: list[Verdict]

    @property
    def quiescent(self) -> bool:
        return self.report.quiescent

    @property
    def passed(self) -> bool:
        return self.quiescent and all(v.passed for v in self.verdicts)

    @property
    def exit_code(self) -> int:
        if not self.quiescent:
            return 2
        return 0 if self.passed else 1

    def summary(self) -> dict:
        return build_summary(self)


def run(scn: Scenario, max_ticks: int | None = None, **overrides) -> RunResult:
    config = scn.sim_config(**overrides)
    world = build_world(scn, config)
    try:
        report = world.run_until_quiescent(max_ticks or scn.max_ticks)
    except NonQuiescent as exc:
        report = exc.report
    except Exception as exc:
        exc.world = world  # lets the caller flush a partial trace
        raise
    verdicts = [evaluate(scn, world, i, a) for i, a in enumerate(scn.assertions)]
    return RunResult(scn, world, report, verdicts)


def _names(scn: Scenario, devices) -> list[str]:
    back = {d: n for n, d in scn.nodes.items()}
    return [back.get(d, str(d)) for d in devices]


def evaluate(scn: Scenario, world: World, index: int, a: dict) -> Verdict:
    kind = a["type"]
    dev = scn.device

    def verdict(ok: bool, detail: str) -> Verdict:
        return Verdict(index, kind, bool(ok), detail)

    if kind in ("table_equals", "unreachable"):
        node = world.nodes.get(dev(a["node"]))
        entries = node.table.entries if node else {}
        if kind == "unreachable":
            target = dev(a["dst"])
            return verdict(target not in entries, f"{a['node']} keys={_names(scn, sorted(entries))}")
        want = {dev(k): dev(v) for k, v in a["table"].items()}
        got = {k: entries[k] for k in sorted(entries)}
        shown = {n: _names(scn, [v])[0] for n, v in zip(_names(scn, got), got.values())}
        return verdict(got == want, f"{a['node']} table={shown}")

    if kind == "delivered_within":
        src, dst = dev(a["src"]), dev(a["dst"])
        hops = [d.hops for d in world.deliveries if d.src == src and d.dst == dst]
        return verdict(any(h <= a["hops"] for h in hops), f"delivered hop counts {hops}")

    if kind == "role_is":
        role = world.sessions.role(dev(a["node"]))
        ok = role.kind.value == a["role"]
        if ok and "host" in a:
            session = world.sessions.sessions.get(role.session)
            ok = session is not None and session.host == dev(a["host"])
        return verdict(ok, f"{a['node']} role={role.kind.value} session={role.session}")

    if kind == "content_converged":
        owner = world.nodes.get(dev(a["owner"]))
        if owner is None:
            return verdict(False, f"{a['owner']} not present")
        try:
            doc = owner.store.by_title(a["title"])
        except mom.NotFound as exc:
            return verdict(False, str(exc))
        if "members" in a:
            members = [dev(m) for m in a["members"]]
        else:
            session = world.sessions.hosted_by(owner.id)
            members = sorted(session.members) if session else []
        lagging = []
        for m in members:
            n = world.nodes.get(m)
            view = n.store.live.get(doc.doc_id) if n else None
            if view is None or view.content != doc.content:
                lagging.append(m)
        return verdict(
            bool(members) and not lagging,
            f"rev={doc.revision} members={_names(scn, members)} lagging={_names(scn, lagging)}",
        )

    if kind == "shared_with":
        owner = world.nodes.get(dev(a["owner"]))
        try:
            doc = owner.store.by_title(a["title"]) if owner else None
        except mom.NotFound:
            doc = None
        got = list(doc.shared_with) if doc else []
        want = [dev(m) for m in a["members"]]
        return verdict(doc is not None and got == want, f"shared_with={_names(scn, got)}")

    if kind == "shared_moms":
        node = world.nodes.get(dev(a["node"]))
        got = sorted(d.title for d in node.store.shared_moms.values()) if node else []
        return verdict(got == sorted(a["titles"]), f"shared_moms={got}")

    # error_seen: errors only exist in the trace
    return verdict(*_error_seen(world.trace, str(dev(a["node"])), a["error"], a.get("message")))


def _error_seen(lines, node: str, error: str, message: str | None) -> tuple[bool, str]:
    hits = [
        r.get("message")
        for r in parse_trace(lines)
        if r.node == node and r.kind in ("error", "signal") and r.value == error
    ]
    ok = bool(hits) and (message is None or message in hits)
    return ok, f"{error} seen {len(hits)}x"


# ------------------------------------------------------------------ summary


def build_summary(result: RunResult) -> dict:
    world, scn = result.world, result.scenario
    cfg = {f.name: getattr(world.config, f.name) for f in fields(world.config)}
    cfg["ttl"] = world.ttl

    def doc_row(d: mom.MoMDocument) -> dict:
        return {
            "doc_id": d.doc_id,
            "title": d.title,
            "revision": d.revision,
            "owned_by": d.owned_by.canonical,
            "shared_with": [s.canonical for s in d.shared_with],
            "sha": content_digest(d.content),
        }

    stores = {}
    for dev, n in sorted(world.nodes.items()):
        stores[dev.canonical] = {
            "my_moms": [doc_row(d) for _, d in sorted(n.store.my_moms.items())],
            "shared_moms": [doc_row(d) for _, d in sorted(n.store.shared_moms.items())],
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario": scn.name,
        "config": cfg,
        "status": "quiescent" if result.quiescent else "non_quiescent",
        "report": result.report.to_dict(),
        "roles": {
            dev.canonical: {"role": r.kind.value, "session": r.session}
            for dev, r in sorted(world.sessions.roles.items())
        },
        "stores": stores,
        "assertions": [v.to_dict() for v in result.verdicts],
        "passed": result.passed,
    }
