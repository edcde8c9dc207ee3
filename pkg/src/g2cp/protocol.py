"""Messages, performatives and operations, plus the line-oriented wire format.

The wire grammar is LL(1): every line opens with a keyword that fixes what
follows. ``serialize`` emits the canonical form (sorted sets, fixed field
order, two/four-space indentation, LF endings) and ``parse`` accepts any
indentation but is otherwise strict.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Union

from .errors import CompatibilityError, ParseError
from .graph import (
    CONTEXT_SYMBOLS,
    EPOCH,
    And,
    ByName,
    ByType,
    Compare,
    ContextRef,
    Edge,
    ExplicitIds,
    GraphDelta,
    Node,
    NodeSelector,
    Or,
    Predicate,
    PropertyFilter,
    ProvenanceTag,
    Scalar,
    edge_id_for,
    format_ts,
    parse_ts,
)


class Performative(str, Enum):
    REQUEST = "REQUEST"
    INFORM = "INFORM"
    QUERY = "QUERY"
    PROPOSE = "PROPOSE"
    CONFIRM = "CONFIRM"
    REJECT = "REJECT"
    UPDATE = "UPDATE"


class ReturnFormat(str, Enum):
    SUBGRAPH = "SUBGRAPH"
    PATHS = "PATHS"
    LEAVES = "LEAVES"


UNBOUNDED = None  # depth value for an unbounded traversal


@dataclass(frozen=True)
class Traverse:
    source: NodeSelector
    via: frozenset[str]
    depth: int | None
    ret: ReturnFormat = ReturnFormat.SUBGRAPH
    constraints: Predicate | None = None


@dataclass(frozen=True)
class Update:
    delta: GraphDelta


@dataclass(frozen=True, order=True)
class EdgeRef:
    source: str
    type: str
    target: str
    ts: datetime = EPOCH

    @property
    def edge_id(self) -> str:
        return edge_id_for(self.source, self.type, self.target, self.ts)

    @classmethod
    def of(cls, edge: Edge) -> "EdgeRef":
        return cls(edge.source, edge.type, edge.target, edge.ts)


@dataclass(frozen=True)
class Path:
    start: str
    edges: tuple[EdgeRef, ...] = ()

    @property
    def end(self) -> str:
        return self.edges[-1].target if self.edges else self.start

    def node_ids(self) -> list[str]:
        return [self.start] + [e.target for e in self.edges]


@dataclass(frozen=True)
class Result:
    """Result payload carried by INFORM/CONFIRM.

    ``ranked``/``confidence`` are parallel lists; ``source`` is the traversal
    whose execution produced this body, so receivers can replay it.
    """

    format: ReturnFormat
    nodes: frozenset[str]
    edges: frozenset[EdgeRef] = frozenset()
    paths: tuple[Path, ...] = ()
    ranked: tuple[str, ...] = ()
    confidence: tuple[float, ...] = ()
    truncated: bool = False
    source: Traverse | None = None

    def support(self) -> tuple[frozenset[str], frozenset[EdgeRef]]:
        nodes = set(self.nodes)
        edges = set(self.edges)
        for p in self.paths:
            nodes.update(p.node_ids())
            edges.update(p.edges)
        for e in edges:
            nodes.add(e.source)
            nodes.add(e.target)
        return frozenset(nodes), frozenset(edges)

    def is_empty(self) -> bool:
        return not self.nodes


@dataclass(frozen=True)
class Error:
    code: str
    detail: str = ""


OperationPayload = Union[Traverse, Update, Result, Error]


@dataclass(frozen=True)
class ConversationContext:
    conversation_id: str
    focus: frozenset[str] = field(default_factory=frozenset)


@dataclass(frozen=True)
class Message:
    sender: str
    receiver: str
    performative: Performative
    operation: OperationPayload
    context: ConversationContext


COMPATIBILITY: dict[Performative, tuple[type, ...]] = {
    Performative.REQUEST: (Traverse,),
    Performative.QUERY: (Traverse,),
    Performative.PROPOSE: (Traverse,),
    Performative.UPDATE: (Update,),
    Performative.INFORM: (Result, Error),
    Performative.CONFIRM: (Result, Error),
    Performative.REJECT: (Error, Traverse),
}

ERROR_CODES = ("MALFORMED", "UNAUTHORIZED", "TIMEOUT", "SOURCE_EMPTY", "NO_ENTITIES",
               "VALIDATION", "UNKNOWN_NODE", "CONFLICT")


def compatible(perf: Performative, payload) -> bool:
    return isinstance(payload, COMPATIBILITY[perf])


# ======================================================================
# serialization

def _fmt_scalar(v: Scalar) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, datetime):
        return format_ts(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return json.dumps(v, ensure_ascii=False)


def _fmt_predicate(p: Predicate, nested: bool = False) -> str:
    if isinstance(p, Compare):
        return f"{p.attr}{p.op}{_fmt_scalar(p.value)}"
    if isinstance(p, And):
        return " AND ".join(_fmt_predicate(i, nested=True) for i in p.items)
    text = " OR ".join(_fmt_predicate(i) for i in p.items)
    return f"({text})" if nested else text


def _fmt_selector(s: NodeSelector) -> str:
    if isinstance(s, ExplicitIds):
        return "{" + ", ".join(sorted(s.ids)) + "}"
    if isinstance(s, ByType):
        return "{" + ", ".join(f"type:{t}" for t in sorted(s.types)) + "}"
    if isinstance(s, ByName):
        return "{" + ", ".join(f"name:{json.dumps(n, ensure_ascii=False)}" for n in s.names) + "}"
    if isinstance(s, ContextRef):
        return "{" + s.symbol + "}"
    return "{" + f"{s.node_type} WHERE {_fmt_predicate(s.predicate)}" + "}"


def _fmt_idset(ids) -> str:
    return "{" + ", ".join(sorted(ids)) + "}"


def _fmt_edge(e: EdgeRef) -> str:
    text = f"{e.source} -[{e.type}]-> {e.target}"
    if e.ts != EPOCH:
        text += f" @{format_ts(e.ts)}"
    return text


def _fmt_path(p: Path) -> str:
    parts = [p.start]
    for e in p.edges:
        parts.append(f"-[{e.type}]->")
        parts.append(e.target if e.ts == EPOCH else f"{e.target} @{format_ts(e.ts)}")
    return " ".join(parts)


def _fmt_depth(d: int | None) -> str:
    return "UNBOUNDED" if d is None else str(d)


def format_traverse_inline(t: Traverse) -> str:
    text = (f"TRAVERSE FROM {_fmt_selector(t.source)} VIA {_fmt_idset(t.via)} "
            f"DEPTH {_fmt_depth(t.depth)} RETURN {t.ret.value}")
    if t.constraints is not None:
        text += f" CONSTRAINTS {_fmt_predicate(t.constraints)}"
    return text


def _fmt_kv(pairs: list[tuple[str, str]]) -> str:
    return "{" + ", ".join(f"{k}: {v}" for k, v in pairs) + "}"


def _fmt_add_node(n: Node) -> str:
    pairs = [("id", n.id), ("type", n.type), ("name", json.dumps(n.name, ensure_ascii=False))]
    if n.attrs:
        pairs.append(("attrs", _fmt_kv([(k, _fmt_scalar(n.attrs[k])) for k in sorted(n.attrs)])))
    return "ADD_NODE: " + _fmt_kv(pairs)


def _fmt_add_edge(e: Edge) -> str:
    pairs = [("from", e.source), ("to", e.target), ("type", e.type), ("weight", repr(float(e.weight)))]
    if e.ts != EPOCH:
        pairs.append(("ts", format_ts(e.ts)))
    if e.provenance is not None:
        pairs.append(("confidence", repr(float(e.provenance.confidence))))
    return "ADD_EDGE: " + _fmt_kv(pairs)


def _split_edge_id(eid: str) -> EdgeRef:
    source, rest = eid.split("-[", 1)
    type_, rest = rest.split("]->", 1)
    target, ts = rest.rsplit("@", 1)
    return EdgeRef(source, type_, target, parse_ts(ts))


def _fmt_del_edge(eid: str) -> str:
    ref = _split_edge_id(eid)
    pairs = [("from", ref.source), ("to", ref.target), ("type", ref.type)]
    if ref.ts != EPOCH:
        pairs.append(("ts", format_ts(ref.ts)))
    return "DEL_EDGE: " + _fmt_kv(pairs)


def _body_lines(op: OperationPayload) -> list[str]:
    if isinstance(op, Traverse):
        lines = ["  TRAVERSE",
                 f"    FROM: {_fmt_selector(op.source)}",
                 f"    VIA: {_fmt_idset(op.via)}",
                 f"    DEPTH: {_fmt_depth(op.depth)}",
                 f"    RETURN: {op.ret.value}"]
        if op.constraints is not None:
            lines.append(f"    CONSTRAINTS: {_fmt_predicate(op.constraints)}")
        return lines
    if isinstance(op, Update):
        d = op.delta
        lines = ["  UPDATE APPLY"]
        lines += ["    " + _fmt_add_node(n) for n in sorted(d.add_nodes, key=lambda n: n.id)]
        lines += ["    " + _fmt_add_edge(e) for e in sorted(d.add_edges, key=lambda e: e.id)]
        lines += ["    " + _fmt_del_edge(eid) for eid in sorted(d.del_edges)]
        lines += [f"    DEL_NODE: {{id: {nid}}}" for nid in sorted(d.del_nodes)]
        if d.base_version is not None:
            lines.append(f"    BASE: {d.base_version}")
        return lines
    if isinstance(op, Result):
        lines = [f"  RESULT {op.format.value}",
                 f"    Nodes: {_fmt_idset(op.nodes)}",
                 "    Edges: {" + ", ".join(_fmt_edge(e) for e in sorted(op.edges)) + "}"]
        if op.paths:
            lines.append("    Paths: [" + ", ".join(_fmt_path(p) for p in op.paths) + "]")
        if op.ranked:
            lines.append("    Ranked: [" + ", ".join(op.ranked) + "]")
        if op.confidence:
            lines.append("    Confidence: [" + ", ".join(repr(float(c)) for c in op.confidence) + "]")
        if op.truncated:
            lines.append("    Truncated: true")
        if op.source is not None:
            lines.append(f"    Source: {format_traverse_inline(op.source)}")
        return lines
    if isinstance(op, Error):
        return [f"  ERROR {op.code}", f"    Detail: {json.dumps(op.detail, ensure_ascii=False)}"]
    raise TypeError(f"unknown payload {op!r}")


def serialize(message: Message) -> str:
    """Canonical wire text for ``message``."""
    lines = [f"{message.sender} TO {message.receiver}",
             f"PERFORMATIVE: {message.performative.value}",
             f"CONVERSATION: {message.context.conversation_id}"]
    if message.context.focus:
        lines.append(f"FOCUS: {_fmt_idset(message.context.focus)}")
    lines.append("OPERATION:")
    lines += _body_lines(message.operation)
    return "\n".join(lines) + "\n"


def serialize_payload(op: OperationPayload) -> str:
    """Canonical text of an operation body on its own, as it appears
    under ``OPERATION:``."""
    return "\n".join(_body_lines(op)) + "\n"


# ======================================================================
# parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<arrow_end>\]->)
  | (?P<arrow_start>-\[)
  | (?P<ts>\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(?:\.\d+)?Z)
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?(?![A-Za-z0-9_:\-]))
  | (?P<op><=|>=|!=|=|<|>)
  | (?P<punct>[{}\[\](),@])
  | (?P<ident>[A-Za-z0-9_][A-Za-z0-9_:\-]*)
    """,
    re.VERBOSE,
)

IDENT_RE = re.compile(r"[A-Za-z0-9_:\-]+\Z")
IDENT_START_RE = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_:\-]*\Z")
KEYWORDS = {"AND", "OR", "WHERE", "TRAVERSE", "FROM", "VIA", "DEPTH", "RETURN", "CONSTRAINTS"}


@dataclass
class _Tok:
    kind: str
    text: str
    col: int


class _LineLexer:
    def __init__(self, text: str, lineno: int, col0: int):
        self.lineno = lineno
        self.toks: list[_Tok] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None:
                raise ParseError(lineno, f"unexpected character {text[pos]!r}", col0 + pos + 1)
            if m.lastgroup != "ws":
                self.toks.append(_Tok(m.lastgroup, m.group(), col0 + pos + 1))
            pos = m.end()
        self.i = 0
        self.end_col = col0 + len(text) + 1

    def peek(self, offset: int = 0) -> _Tok | None:
        j = self.i + offset
        return self.toks[j] if j < len(self.toks) else None

    def next(self, *expected: str) -> _Tok:
        tok = self.peek()
        if tok is None:
            raise ParseError(self.lineno, "unexpected end of line", self.end_col, expected)
        self.i += 1
        return tok

    def fail(self, reason: str, expected=()) -> ParseError:
        tok = self.peek()
        col = tok.col if tok else self.end_col
        return ParseError(self.lineno, reason, col, tuple(expected))

    def expect_text(self, text: str) -> _Tok:
        tok = self.peek()
        if tok is None or tok.text != text:
            raise self.fail(f"expected {text!r}", (text,))
        self.i += 1
        return tok

    def expect_kind(self, kind: str, what: str) -> _Tok:
        tok = self.peek()
        if tok is not None and kind == "ident" and tok.kind == "number" and IDENT_START_RE.match(tok.text):
            tok = _Tok("ident", tok.text, tok.col)  # all-digit identifiers lex as numbers
        if tok is None or tok.kind != kind:
            raise self.fail(f"expected {what}", (what,))
        self.i += 1
        return tok

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.text == text

    def done(self) -> None:
        if self.peek() is not None:
            raise self.fail(f"unexpected trailing token {self.peek().text!r}", ("end of line",))


def _scalar_from(tok: _Tok, lex: _LineLexer) -> Scalar:
    if tok.kind == "string":
        return json.loads(tok.text)
    if tok.kind == "ts":
        return parse_ts(tok.text)
    if tok.kind == "number":
        if any(c in tok.text for c in ".eE"):
            return float(tok.text)
        return int(tok.text)
    if tok.kind == "ident" and tok.text in ("true", "false"):
        return tok.text == "true"
    raise ParseError(lex.lineno, f"expected a constant, got {tok.text!r}", tok.col,
                     ("string", "number", "timestamp", "true", "false"))


def _parse_predicate(lex: _LineLexer) -> Predicate:
    items = [_parse_conjunction(lex)]
    while lex.at("OR"):
        lex.next()
        items.append(_parse_conjunction(lex))
    return items[0] if len(items) == 1 else Or(tuple(items))


def _parse_conjunction(lex: _LineLexer) -> Predicate:
    items = [_parse_atom(lex)]
    while lex.at("AND"):
        lex.next()
        items.append(_parse_atom(lex))
    return items[0] if len(items) == 1 else And(tuple(items))


def _parse_atom(lex: _LineLexer) -> Predicate:
    if lex.at("("):
        lex.next()
        inner = _parse_predicate(lex)
        lex.expect_text(")")
        return inner
    attr = lex.expect_kind("ident", "attribute name")
    if attr.text in KEYWORDS:
        raise ParseError(lex.lineno, f"keyword {attr.text!r} used as attribute", attr.col)
    op = lex.expect_kind("op", "comparison operator")
    value = _scalar_from(lex.next("constant"), lex)
    return Compare(attr.text, op.text, value)


def _parse_idset(lex: _LineLexer, allow_empty: bool = True) -> frozenset[str]:
    lex.expect_text("{")
    ids = []
    if not lex.at("}"):
        ids.append(lex.expect_kind("ident", "identifier").text)
        while lex.at(","):
            lex.next()
            ids.append(lex.expect_kind("ident", "identifier").text)
    lex.expect_text("}")
    if not ids and not allow_empty:
        raise lex.fail("empty set")
    return frozenset(ids)


def _parse_selector(lex: _LineLexer) -> NodeSelector:
    lex.expect_text("{")
    first = lex.peek()
    if first is None or first.kind != "ident":
        raise lex.fail("expected node selector", ("node id", "type:<T>", 'name:"..."', "CURRENT_FOCUS"))
    second = lex.peek(1)
    if second is not None and second.text == "WHERE":
        lex.next()
        lex.next()
        pred = _parse_predicate(lex)
        lex.expect_text("}")
        return PropertyFilter(first.text, pred)
    if first.text == "name:":
        names = []
        while True:
            lex.expect_text("name:")
            names.append(json.loads(lex.expect_kind("string", "quoted name").text))
            if not lex.at(","):
                break
            lex.next()
        lex.expect_text("}")
        return ByName(tuple(names))
    if first.text.startswith("type:"):
        types = []
        while True:
            tok = lex.expect_kind("ident", "type:<T>")
            if not tok.text.startswith("type:") or len(tok.text) == 5:
                raise ParseError(lex.lineno, "mixed selector forms", tok.col, ("type:<T>",))
            types.append(tok.text[5:])
            if not lex.at(","):
                break
            lex.next()
        lex.expect_text("}")
        return ByType(frozenset(types))
    if first.text in CONTEXT_SYMBOLS:
        lex.next()
        lex.expect_text("}")
        return ContextRef(first.text)
    ids = []
    while True:
        tok = lex.expect_kind("ident", "node id")
        if ":" not in tok.text or tok.text.startswith(("type:", "name:")):
            raise ParseError(lex.lineno, f"{tok.text!r} is not a node id", tok.col, ("Type:name",))
        ids.append(tok.text)
        if not lex.at(","):
            break
        lex.next()
    lex.expect_text("}")
    return ExplicitIds(frozenset(ids))


def _parse_depth(lex: _LineLexer) -> int | None:
    tok = lex.next("integer", "UNBOUNDED")
    if tok.text == "UNBOUNDED":
        return UNBOUNDED
    if tok.kind != "number" or not tok.text.isdigit():
        raise ParseError(lex.lineno, "depth must be a non-negative integer or UNBOUNDED", tok.col,
                         ("integer", "UNBOUNDED"))
    return int(tok.text)


def _parse_format(lex: _LineLexer) -> ReturnFormat:
    tok = lex.next(*[f.value for f in ReturnFormat])
    try:
        return ReturnFormat(tok.text)
    except ValueError:
        raise ParseError(lex.lineno, f"unknown return format {tok.text!r}", tok.col,
                         tuple(f.value for f in ReturnFormat)) from None


def _parse_traverse_inline(lex: _LineLexer) -> Traverse:
    lex.expect_text("TRAVERSE")
    lex.expect_text("FROM")
    sel = _parse_selector(lex)
    lex.expect_text("VIA")
    via = _parse_idset(lex, allow_empty=False)
    lex.expect_text("DEPTH")
    depth = _parse_depth(lex)
    lex.expect_text("RETURN")
    ret = _parse_format(lex)
    constraints = None
    if lex.at("CONSTRAINTS"):
        lex.next()
        constraints = _parse_predicate(lex)
    return Traverse(sel, via, depth, ret, constraints)


def _parse_edge_ref(lex: _LineLexer, first: _Tok | None = None) -> EdgeRef:
    src = first or lex.expect_kind("ident", "node id")
    lex.expect_kind("arrow_start", "-[")
    type_ = lex.expect_kind("ident", "edge type")
    lex.expect_kind("arrow_end", "]->")
    dst = lex.expect_kind("ident", "node id")
    ts = EPOCH
    if lex.at("@"):
        lex.next()
        ts = parse_ts(lex.expect_kind("ts", "timestamp").text)
    return EdgeRef(src.text, type_.text, dst.text, ts)


def _parse_path(lex: _LineLexer) -> Path:
    start = lex.expect_kind("ident", "node id").text
    edges = []
    cur = start
    while lex.peek() is not None and lex.peek().kind == "arrow_start":
        lex.next()
        type_ = lex.expect_kind("ident", "edge type").text
        lex.expect_kind("arrow_end", "]->")
        dst = lex.expect_kind("ident", "node id").text
        ts = EPOCH
        if lex.at("@"):
            lex.next()
            ts = parse_ts(lex.expect_kind("ts", "timestamp").text)
        edges.append(EdgeRef(cur, type_, dst, ts))
        cur = dst
    return Path(start, tuple(edges))


def _parse_list(lex: _LineLexer, item):
    lex.expect_text("[")
    out = []
    if not lex.at("]"):
        out.append(item(lex))
        while lex.at(","):
            lex.next()
            out.append(item(lex))
    lex.expect_text("]")
    return out


def _parse_kv(lex: _LineLexer) -> dict[str, _Tok | dict]:
    """``{key: value, ...}``; nested braces only for ``attrs``."""
    lex.expect_text("{")
    out: dict = {}
    while True:
        key_tok = lex.expect_kind("ident", "key:")
        if not key_tok.text.endswith(":") or len(key_tok.text) < 2:
            raise ParseError(lex.lineno, f"expected 'key:', got {key_tok.text!r}", key_tok.col)
        key = key_tok.text[:-1]
        if key in out:
            raise ParseError(lex.lineno, f"duplicate key {key!r}", key_tok.col)
        if lex.at("{"):
            out[key] = _parse_kv(lex)
        else:
            out[key] = lex.next("value")
        if not lex.at(","):
            break
        lex.next()
    lex.expect_text("}")
    return out


def _need(kv: dict, key: str, lex: _LineLexer, kind: str | None = None):
    if key not in kv or isinstance(kv[key], dict):
        raise lex.fail(f"missing field {key!r}", (key,))
    tok = kv[key]
    if kind and tok.kind != kind:
        raise ParseError(lex.lineno, f"field {key!r} has wrong form", tok.col, (kind,))
    return tok


def _check_keys(kv: dict, allowed: set[str], lex: _LineLexer) -> None:
    extra = set(kv) - allowed
    if extra:
        raise lex.fail(f"unknown fields {sorted(extra)}", tuple(sorted(allowed)))


def _float_field(kv, key, lex, default=None):
    if key not in kv:
        return default
    tok = kv[key]
    if isinstance(tok, dict) or tok.kind != "number":
        raise lex.fail(f"field {key!r} must be a number")
    return float(tok.text)


def _parse_update_record(kw: str, lex: _LineLexer, delta: dict) -> None:
    kv = _parse_kv(lex)
    try:
        if kw == "ADD_NODE":
            _check_keys(kv, {"id", "type", "name", "attrs"}, lex)
            attrs = {}
            if "attrs" in kv:
                if not isinstance(kv["attrs"], dict):
                    raise lex.fail("attrs must be a {key: value} block")
                for k, tok in kv["attrs"].items():
                    if isinstance(tok, dict):
                        raise lex.fail("nested attributes are not allowed")
                    attrs[k] = _scalar_from(tok, lex)
            delta["add_nodes"].append(Node(
                _need(kv, "id", lex, "ident").text, _need(kv, "type", lex, "ident").text,
                json.loads(_need(kv, "name", lex, "string").text), attrs))
        elif kw == "ADD_EDGE":
            _check_keys(kv, {"from", "to", "type", "weight", "ts", "confidence"}, lex)
            conf = _float_field(kv, "confidence", lex)
            prov = None if conf is None else ProvenanceTag("", EPOCH, "", conf)
            ts = parse_ts(_need(kv, "ts", lex, "ts").text) if "ts" in kv else EPOCH
            delta["add_edges"].append(Edge(
                _need(kv, "from", lex, "ident").text, _need(kv, "to", lex, "ident").text,
                _need(kv, "type", lex, "ident").text, _float_field(kv, "weight", lex, 1.0), ts, prov))
        elif kw == "DEL_EDGE":
            _check_keys(kv, {"from", "to", "type", "ts"}, lex)
            ts = parse_ts(_need(kv, "ts", lex, "ts").text) if "ts" in kv else EPOCH
            delta["del_edges"].append(edge_id_for(
                _need(kv, "from", lex, "ident").text, _need(kv, "type", lex, "ident").text,
                _need(kv, "to", lex, "ident").text, ts))
        else:
            _check_keys(kv, {"id"}, lex)
            delta["del_nodes"].append(_need(kv, "id", lex, "ident").text)
    except ValueError as exc:
        raise lex.fail(str(exc)) from None


class _Lines:
    def __init__(self, text: str):
        if "\r" in text:
            raise ParseError(1, "CR characters are not allowed; use LF line endings")
        raw = text.split("\n")
        if raw and raw[-1] == "":
            raw.pop()
        self.lines = raw
        self.i = 0

    def at_end(self) -> bool:
        return self.i >= len(self.lines)

    def peek_keyword(self) -> str | None:
        if self.at_end():
            return None
        stripped = self.lines[self.i].strip()
        return stripped.split(" ", 1)[0] if stripped else ""

    def take(self, keyword: str | tuple[str, ...]) -> _LineLexer:
        """Consume a line starting with ``keyword``; return a lexer over the rest."""
        keywords = (keyword,) if isinstance(keyword, str) else keyword
        lineno = self.i + 1
        if self.at_end():
            raise ParseError(lineno, "unexpected end of message", 1, keywords)
        line = self.lines[self.i]
        indent = len(line) - len(line.lstrip(" "))
        body = line[indent:]
        for kw in keywords:
            if body == kw or body.startswith(kw + " "):
                self.i += 1
                return _LineLexer(body[len(kw):], lineno, indent + len(kw))
        raise ParseError(lineno, f"unexpected line {body[:40]!r}", indent + 1, keywords)


def parse(text: str) -> Message:
    """Parse wire text into a validated Message.

    Raises ParseError on malformed input and CompatibilityError when the
    payload variant does not fit the performative.
    """
    lines = _Lines(text)
    if lines.at_end():
        raise ParseError(1, "empty message", 1, ("<agent> TO <agent>",))
    header = _LineLexer(lines.lines[0], 1, 0)
    lines.i = 1
    sender = header.expect_kind("ident", "sender agent id").text
    header.expect_text("TO")
    receiver = header.expect_kind("ident", "receiver agent id").text
    header.done()

    lex = lines.take("PERFORMATIVE:")
    tok = lex.next(*[p.value for p in Performative])
    try:
        perf = Performative(tok.text)
    except ValueError:
        raise ParseError(lex.lineno, f"unknown performative {tok.text!r}", tok.col,
                         tuple(p.value for p in Performative)) from None
    lex.done()

    lex = lines.take("CONVERSATION:")
    conv = lex.expect_kind("ident", "conversation id").text
    lex.done()

    focus: frozenset[str] = frozenset()
    if lines.peek_keyword() == "FOCUS:":
        lex = lines.take("FOCUS:")
        focus = _parse_idset(lex, allow_empty=False)
        lex.done()

    lines.take("OPERATION:").done()
    payload = _parse_body(lines)
    if not lines.at_end():
        raise ParseError(lines.i + 1, "unexpected content after operation", 1, ("end of message",))

    message = Message(sender, receiver, perf, payload, ConversationContext(conv, focus))
    if not compatible(perf, payload):
        raise CompatibilityError(
            f"{perf.value} cannot carry a {type(payload).__name__} payload; "
            f"allowed: {', '.join(t.__name__ for t in COMPATIBILITY[perf])}")
    problems = validate(message)
    if problems:
        raise ParseError(1, "; ".join(problems))
    return message


def parse_payload(text: str) -> OperationPayload:
    """Inverse of ``serialize_payload``."""
    lines = _Lines(text)
    payload = _parse_body(lines)
    if not lines.at_end():
        raise ParseError(lines.i + 1, "unexpected content after operation", 1, ("end of operation",))
    return payload


def _parse_body(lines: _Lines) -> OperationPayload:
    kw = lines.peek_keyword()
    if kw == "TRAVERSE":
        lines.take("TRAVERSE").done()
        lex = lines.take("FROM:")
        sel = _parse_selector(lex)
        lex.done()
        lex = lines.take("VIA:")
        via = _parse_idset(lex, allow_empty=False)
        lex.done()
        lex = lines.take("DEPTH:")
        depth = _parse_depth(lex)
        lex.done()
        lex = lines.take("RETURN:")
        ret = _parse_format(lex)
        lex.done()
        constraints = None
        if lines.peek_keyword() == "CONSTRAINTS:":
            lex = lines.take("CONSTRAINTS:")
            constraints = _parse_predicate(lex)
            lex.done()
        return Traverse(sel, via, depth, ret, constraints)

    if kw == "UPDATE":
        lex = lines.take("UPDATE")
        lex.expect_text("APPLY")
        lex.done()
        delta = {"add_nodes": [], "add_edges": [], "del_edges": [], "del_nodes": []}
        records = ("ADD_NODE:", "ADD_EDGE:", "DEL_EDGE:", "DEL_NODE:")
        count = 0
        base = None
        while lines.peek_keyword() in records:
            kw2 = lines.peek_keyword()
            lex = lines.take(kw2)
            _parse_update_record(kw2[:-1], lex, delta)
            lex.done()
            count += 1
        if count == 0:
            raise ParseError(lines.i + 1, "UPDATE APPLY needs at least one record", 1, records)
        if lines.peek_keyword() == "BASE:":
            lex = lines.take("BASE:")
            tok = lex.expect_kind("number", "version number")
            base = int(tok.text)
            lex.done()
        return Update(GraphDelta(tuple(delta["add_nodes"]), tuple(delta["del_nodes"]),
                                 tuple(delta["add_edges"]), tuple(delta["del_edges"]), base))

    if kw == "RESULT":
        lex = lines.take("RESULT")
        fmt = _parse_format(lex)
        lex.done()
        lex = lines.take("Nodes:")
        nodes = _parse_idset(lex)
        lex.done()
        lex = lines.take("Edges:")
        lex.expect_text("{")
        edges = []
        if not lex.at("}"):
            edges.append(_parse_edge_ref(lex))
            while lex.at(","):
                lex.next()
                edges.append(_parse_edge_ref(lex))
        lex.expect_text("}")
        lex.done()
        paths: list[Path] = []
        ranked: list[str] = []
        conf: list[float] = []
        truncated = False
        source = None
        if lines.peek_keyword() == "Paths:":
            lex = lines.take("Paths:")
            paths = _parse_list(lex, _parse_path)
            lex.done()
        if lines.peek_keyword() == "Ranked:":
            lex = lines.take("Ranked:")
            ranked = _parse_list(lex, lambda lx: lx.expect_kind("ident", "node id").text)
            lex.done()
        if lines.peek_keyword() == "Confidence:":
            lex = lines.take("Confidence:")
            conf = _parse_list(lex, lambda lx: float(lx.expect_kind("number", "number").text))
            lex.done()
        if lines.peek_keyword() == "Truncated:":
            lex = lines.take("Truncated:")
            lex.expect_text("true")
            lex.done()
            truncated = True
        if lines.peek_keyword() == "Source:":
            lex = lines.take("Source:")
            source = _parse_traverse_inline(lex)
            lex.done()
        return Result(fmt, nodes, frozenset(edges), tuple(paths), tuple(ranked), tuple(conf),
                      truncated, source)

    if kw == "ERROR":
        lex = lines.take("ERROR")
        code = lex.expect_kind("ident", "error code").text
        lex.done()
        lex = lines.take("Detail:")
        detail = json.loads(lex.expect_kind("string", "quoted detail").text)
        lex.done()
        return Error(code, detail)

    raise ParseError(lines.i + 1, "expected an operation body", 1,
                     ("TRAVERSE", "UPDATE APPLY", "RESULT", "ERROR"))


# ======================================================================
# validation

def _ident_ok(s: str) -> bool:
    return bool(IDENT_RE.match(s))


def _traverse_violations(op: Traverse, edge_types) -> list[str]:
    out = []
    if not op.via:
        out.append("empty edge filter")
    if op.depth is not None and op.depth < 0:
        out.append("negative depth")
    if edge_types is not None:
        unknown = sorted(set(op.via) - set(edge_types))
        if unknown:
            out.append(f"unknown edge types {unknown}")
    for t in op.via:
        if not _ident_ok(t):
            out.append(f"bad edge type {t!r}")
    if isinstance(op.source, ExplicitIds):
        for i in op.source.ids:
            if not _ident_ok(i) or ":" not in i:
                out.append(f"bad node id {i!r}")
    return out


def validate(message: Message, edge_types=None) -> list[str]:
    """Static checks; returns a list of violations (empty means ok)."""
    out = []
    perf, op = message.performative, message.operation
    if not compatible(perf, op):
        out.append(f"{perf.value} cannot carry a {type(op).__name__} payload")
    for who in (message.sender, message.receiver):
        if not _ident_ok(who):
            out.append(f"bad agent id {who!r}")
    if perf in (Performative.REQUEST, Performative.QUERY, Performative.PROPOSE) \
            and message.sender == message.receiver:
        out.append("sender and receiver must differ")
    if not _ident_ok(message.context.conversation_id):
        out.append("bad conversation id")
    if isinstance(op, Traverse):
        out += _traverse_violations(op, edge_types)
    elif isinstance(op, Result):
        for e in op.edges:
            if e.source not in op.nodes or e.target not in op.nodes:
                out.append(f"result edge {_fmt_edge(e)} has an endpoint outside Nodes")
        if len(op.confidence) != len(op.ranked):
            out.append("Confidence and Ranked lists differ in length")
        if any(not 0.0 <= c <= 1.0 for c in op.confidence):
            out.append("confidence outside [0, 1]")
        if not set(op.ranked) <= set(op.nodes):
            out.append("ranked node outside Nodes")
        if op.source is not None:
            out += _traverse_violations(op.source, edge_types)
    elif isinstance(op, Error):
        if not _ident_ok(op.code):
            out.append("bad error code")
    elif isinstance(op, Update):
        d = op.delta
        if d.is_empty():
            out.append("update carries no records")
        added = {n.id for n in d.add_nodes}
        if added & set(d.del_nodes):
            out.append("node both added and deleted")
        if {e.id for e in d.add_edges} & set(d.del_edges):
            out.append("edge both added and deleted")
    return out


# ======================================================================
# token accounting

_TOKEN_SPLIT = re.compile(r"[A-Za-z0-9_]+|[^A-Za-z0-9_\s]")


def tokenize(text: str) -> list[str]:
    """Whitespace split, then every character outside [A-Za-z0-9_] is its own token."""
    return _TOKEN_SPLIT.findall(text)


def token_count(text: str) -> int:
    return len(tokenize(text))
