"""Line-oriented trace records.

Grammar, one record per line::

    t=<uint> node=<canonical-id> <key>=<value>( <key>=<value>)*

The first key after ``node`` names the record kind (``table``, ``discovery``,
``send``, ``packet``, ``session_event``, ``mom`` ...). Values are
percent-escaped (UTF-8 bytes as ``%XX``) for ``%``, ``=``, whitespace and
control characters, so a record never spans lines and always splits cleanly
on spaces.

Record kinds and their key order:

    topology=<add_node|remove_node|add_edge|remove_edge> [peer=<id>]
    discovery=<found|lost> peer=<id>
    table={<key>:<via>,...}
    broadcast=update neighbors=<n>
    send=update to=<id> seq=<n> reachable=[<id>,...] [reason=<hello|refresh>]
    recv=update from=<id> seq=<n>
    ignored=stale from=<id> seq=<n>
    drop=link_down from=<id> frame=<update|data>
    packet=<originate|forward|deliver|drop> id=<pid> src=<id> dst=<id> hops=<n> ttl=<n> [next=<id>] [reason=<r>] [app=<type>]
    session_event=<host|join|leave|orphaned> session=<name>
    mom=<create|commit|apply|stale|offer|offer_received|accept|reject|shared_with|rename|delete|read> doc=<doc_id> ...
    app=<join_ack|join_reject|leave_notice> ...
    error=<ExceptionName> message=<text>
    signal=<ExceptionName> message=<text>
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from typing import Iterable, Iterator
from urllib.parse import unquote
_LINE = re.compile(r"^t=(\d+) node=(\S+)((?: \S+=\S*)+)$")


def _needs_escape(ch: str) -> bool:
    return ch in "%=" or ch.isspace() or unicodedata.category(ch) in ("Cc", "Cs")


def escape(value: object) -> str:
    return "".join(
        "".join(f"%{b:02X}" for b in ch.encode("utf-8", "surrogatepass")) if _needs_escape(ch) else ch
        for ch in str(value)
    )


def unescape(value: str) -> str:
    return unquote(value, errors="surrogatepass")


def format_list(items: Iterable[object]) -> str:
    return "[" + ",".join(str(i) for i in items) + "]"


_ID = re.compile(r"[^#]+#\d+")


def _split_ids(inner: str, sep: str = ",") -> list[str]:
    # names may contain ',' or ':', SIM digits never do, so split on id shape
    out, pos = [], 0
    while pos < len(inner):
        m = _ID.match(inner, pos)
        if not m:
            raise TraceFormatError(f"bad id list near {inner[pos:]!r}")
        out.append(m.group(0))
        pos = m.end()
        if pos < len(inner):
            if inner[pos] not in sep:
                raise TraceFormatError(f"expected separator at {inner[pos:]!r}")
            pos += 1
    return out


def parse_list(value: str) -> list[str]:
    return _split_ids(value[1:-1])


def parse_table(value: str) -> dict[str, str]:
    ids = _split_ids(value[1:-1], sep=",:")
    return dict(zip(ids[0::2], ids[1::2]))


def format_record(t: int, node: str, fields: Iterable[tuple[str, object]]) -> str:
    body = " ".join(f"{k}={escape(v)}" for k, v in fields)
    return f"t={t} node={escape(node)} {body}"


@dataclass(frozen=True)
class TraceRecord:
    t: int
    node: str
    fields: tuple[tuple[str, str], ...]

    @property
    def kind(self) -> str:
        return self.fields[0][0]

    @property
    def value(self) -> str:
        return self.fields[0][1]

    def get(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.fields:
            if k == key:
                return v
        return default

    def __str__(self) -> str:
        return format_record(self.t, self.node, self.fields)


class TraceFormatError(ValueError):
    pass


def parse_record(line: str) -> TraceRecord:
    m = _LINE.match(line.rstrip("\n"))
    if not m:
        raise TraceFormatError(f"not a trace record: {line!r}")
    fields = []
    for part in m.group(3).split(" ")[1:]:
        key, _, value = part.partition("=")
        fields.append((key, unescape(value)))
    return TraceRecord(int(m.group(1)), unescape(m.group(2)), tuple(fields))


def parse_trace(lines: Iterable[str]) -> Iterator[TraceRecord]:
    for line in lines:
        if line.strip() and not line.startswith("#"):
            yield parse_record(line)
