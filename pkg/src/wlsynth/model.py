"""Schemas, transaction templates and workload traces.

Everything here is immutable once built; parsers are pure functions of their
input text. Text formats:

Schema (one ``TABLE`` block per table)::

    TABLE S (s1 integer, s2 integer, s3 decimal) PK(s1, s2) FK(s1 -> Z(z1))

Templates::

    TEMPLATE TXC {
        select x from T where k between ? and ? -> params(key T.k:integer, key T.k:integer);
        BRANCH { { update ... ; } | { update ... ; } };
        LOOP { insert ... ; };
    }

Per-operation annotations after ``->``: ``params(kind T.c:type, ...)`` where
kind is ``key`` (predicate column, i.e. pivotal) or ``val``; ``returns(T.c:type,
...)``; ``filter(pk|nonkey|none)``.

Heavy trace line::

    ts=<ms> tpl=<name> [wid=<n>] op=<i>#<k> params=[...] rows=[[...],...] op=...

Light trace lines carry ``params={"<j>": value, ...}`` with pivotal values only
and no ``rows``.
"""

from __future__ import annotations

import graphlib
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Optional, Sequence, TextIO, Union

from .errors import (
    CyclicForeignKey,
    GrammarError,
    MalformedRecord,
    PlaceholderMismatch,
    UnknownColumn,
)

DATA_TYPES = ("integer", "decimal", "varchar", "datetime", "boolean")
NUMERIC_TYPES = frozenset({"integer", "decimal", "datetime"})
OP_KINDS = ("select", "update", "insert", "delete", "procCall")
FILTER_KINDS = ("pk", "nonkey", "none")


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class ColumnDef:
    name: str
    dtype: str


@dataclass(frozen=True)
class ForeignKey:
    columns: tuple
    ref_table: str
    ref_columns: tuple


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple
    primary_key: tuple = ()
    foreign_keys: tuple = ()

    @property
    def column_names(self):
        return tuple(c.name for c in self.columns)

    def column(self, name) -> ColumnDef:
        for c in self.columns:
            if c.name == name:
                return c
        raise UnknownColumn(f"{self.name}.{name}")

    def reference_of(self, column):
        """(ref_table, ref_column) if ``column`` is a foreign-key column."""
        for fk in self.foreign_keys:
            if column in fk.columns:
                k = fk.columns.index(column)
                return fk.ref_table, fk.ref_columns[k]
        return None

    def is_key_column(self, column):
        return column in self.primary_key or self.reference_of(column) is not None


@dataclass(frozen=True)
class Schema:
    tables: tuple

    def table(self, name) -> TableDef:
        for t in self.tables:
            if t.name == name:
                return t
        raise UnknownColumn(name)

    def column(self, ref) -> ColumnDef:
        tname, _, cname = ref.partition(".")
        return self.table(tname).column(cname)

    def has_table(self, name):
        return any(t.name == name for t in self.tables)

    def topological_order(self):
        """Table names with every referenced table before its referrers."""
        sorter = graphlib.TopologicalSorter()
        for t in self.tables:
            sorter.add(t.name, *[fk.ref_table for fk in t.foreign_keys])
        try:
            return tuple(sorter.static_order())
        except graphlib.CycleError as exc:
            raise CyclicForeignKey(sorted(set(exc.args[1]))) from None

    def validate(self):
        names = [t.name for t in self.tables]
        if len(set(names)) != len(names):
            raise GrammarError("duplicate table name")
        for t in self.tables:
            for c in t.columns:
                if c.dtype not in DATA_TYPES:
                    raise GrammarError(f"{t.name}.{c.name}: unknown type {c.dtype!r}")
            for k in t.primary_key:
                t.column(k)
            for fk in t.foreign_keys:
                if len(fk.columns) != len(fk.ref_columns):
                    raise GrammarError(f"{t.name}: foreign key arity mismatch")
                for c in fk.columns:
                    t.column(c)
                ref = self.table(fk.ref_table)
                for c in fk.ref_columns:
                    ref.column(c)
        self.topological_order()
        return self


_SCHEMA_TOKEN = re.compile(r"\s*(?:(->)|([A-Za-z_][A-Za-z0-9_]*)|([(),]))")


def _strip_comments(text):
    return re.sub(r"(--|#)[^\n]*", "", text)


def _schema_tokens(text):
    text = _strip_comments(text)
    pos, line = 0, 1
    out = []
    while True:
        m = re.compile(r"\s*").match(text, pos)
        line += text.count("\n", pos, m.end())
        pos = m.end()
        if pos >= len(text):
            break
        m = _SCHEMA_TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise GrammarError(f"unexpected character {text[pos]!r}", line)
        tok = m.group(1) or m.group(2) or m.group(3)
        out.append((tok, line))
        pos = m.end()
    return out


def parse_schema(text: str) -> Schema:
    toks = _schema_tokens(text)
    i = 0

    def peek():
        return toks[i][0] if i < len(toks) else None

    def take(expected=None):
        nonlocal i
        if i >= len(toks):
            raise GrammarError(f"unexpected end of input, expected {expected or 'token'}",
                               toks[-1][1] if toks else 1)
        tok, line = toks[i]
        if expected is not None and tok.upper() != expected.upper():
            raise GrammarError(f"expected {expected!r}, got {tok!r}", line)
        i += 1
        return tok

    def ident_list():
        names = [take()]
        while peek() == ",":
            take(",")
            names.append(take())
        return tuple(names)

    tables = []
    while i < len(toks):
        take("TABLE")
        name = take()
        take("(")
        cols = []
        while True:
            cname = take()
            line = toks[i][1] if i < len(toks) else None
            ctype = take().lower()
            if ctype not in DATA_TYPES:
                raise GrammarError(f"unknown type {ctype!r} for {name}.{cname}", line)
            cols.append(ColumnDef(cname, ctype))
            if peek() == ",":
                take(",")
                continue
            take(")")
            break
        pk, fks = (), []
        while peek() is not None and peek().upper() in ("PK", "FK"):
            kw = take().upper()
            take("(")
            if kw == "PK":
                pk = ident_list()
            else:
                local = ident_list()
                take("->")
                ref_table = take()
                take("(")
                ref_cols = ident_list()
                take(")")
                fks.append(ForeignKey(local, ref_table, ref_cols))
            take(")")
        tables.append(TableDef(name, tuple(cols), pk, tuple(fks)))
    return Schema(tuple(tables)).validate()


def serialize_schema(schema: Schema) -> str:
    lines = []
    for t in schema.tables:
        cols = ", ".join(f"{c.name} {c.dtype}" for c in t.columns)
        s = f"TABLE {t.name} ({cols})"
        if t.primary_key:
            s += f" PK({', '.join(t.primary_key)})"
        for fk in t.foreign_keys:
            s += f" FK({', '.join(fk.columns)} -> {fk.ref_table}({', '.join(fk.ref_columns)}))"
        lines.append(s)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# templates


class Ref(NamedTuple):
    """``p(i,j)`` (kind ``"p"``) or ``r(u,v)`` (kind ``"r"``); 1-based."""

    kind: str
    op: int
    pos: int

    def __str__(self):
        return f"{self.kind}({self.op},{self.pos})"

    @classmethod
    def parse(cls, text):
        m = re.fullmatch(r"\s*([pr])\((\d+),\s*(\d+)\)\s*", text)
        if not m:
            raise ValueError(f"bad reference {text!r}")
        return cls(m.group(1), int(m.group(2)), int(m.group(3)))


def P(i, j):
    return Ref("p", i, j)


def R(u, v):
    return Ref("r", u, v)


@dataclass(frozen=True)
class ParamSlot:
    column: Optional[str]  # "table.column" or None
    dtype: str = "integer"
    pivotal: bool = False

    @property
    def table(self):
        return self.column.partition(".")[0] if self.column else None


@dataclass(frozen=True)
class ReturnSlot:
    column: str
    dtype: str = "integer"


_BETWEEN = re.compile(r"\bbetween\s+\?\s+and\s+\?", re.IGNORECASE)


@dataclass(frozen=True)
class SqlOp:
    index: int
    sql: str
    kind: str
    params: tuple = ()
    returns: tuple = ()
    filter: str = "none"

    @property
    def is_write(self):
        return self.kind in ("update", "insert", "delete", "procCall")

    def between_pairs(self):
        """1-based (l, j) parameter positions of ``between ? and ?`` predicates."""
        pairs = []
        for m in _BETWEEN.finditer(self.sql):
            l = self.sql.count("?", 0, m.start()) + 1
            pairs.append((l, l + 1))
        return pairs


@dataclass(frozen=True)
class Branch:
    alternatives: tuple  # tuple of tuple[SqlOp]


@dataclass(frozen=True)
class Loop:
    body: tuple  # tuple[SqlOp]


@dataclass(frozen=True)
class TransactionTemplate:
    name: str
    body: tuple
    _ops: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        ops = {}
        last = 0
        for op in _iter_ops(self.body):
            if op.index <= last:
                raise GrammarError(f"template {self.name}: operation indices must increase")
            last = op.index
            ops[op.index] = op
        object.__setattr__(self, "_ops", ops)

    @property
    def ops(self):
        return tuple(self._ops.values())

    def op(self, index) -> SqlOp:
        return self._ops[index]

    def has_op(self, index):
        return index in self._ops

    @property
    def branches(self):
        return tuple(n for n in self.body if isinstance(n, Branch))

    @property
    def loops(self):
        return tuple(n for n in self.body if isinstance(n, Loop))

    @property
    def loop_ops(self):
        return frozenset(op.index for lp in self.loops for op in lp.body)

    def branch_position(self, index):
        """(branch number, alternative number), both 0-based, or None."""
        for b, br in enumerate(self.branches):
            for a, alt in enumerate(br.alternatives):
                if any(op.index == index for op in alt):
                    return b, a
        return None

    def param_refs(self):
        return [P(op.index, j) for op in self.ops for j in range(1, len(op.params) + 1)]

    def return_refs(self):
        return [R(op.index, v) for op in self.ops for v in range(1, len(op.returns) + 1)]

    def slot(self, ref: Ref):
        op = self.op(ref.op)
        return (op.params if ref.kind == "p" else op.returns)[ref.pos - 1]


def _iter_ops(body):
    for node in body:
        if isinstance(node, SqlOp):
            yield node
        elif isinstance(node, Branch):
            for alt in node.alternatives:
                yield from alt
        elif isinstance(node, Loop):
            yield from node.body
        else:
            raise TypeError(f"unexpected template node {node!r}")


_ANNOT = re.compile(r"(params|returns|filter)\s*\(([^)]*)\)", re.IGNORECASE)


class _TemplateParser:
    def __init__(self, text, schema):
        self.text = _strip_comments(text)
        self.schema = schema
        self.pos = 0
        self.next_index = 1

    def line(self, pos=None):
        return self.text.count("\n", 0, self.pos if pos is None else pos) + 1

    def ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def at_end(self):
        self.ws()
        return self.pos >= len(self.text)

    def peek_char(self):
        self.ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, s):
        self.ws()
        if not self.text.startswith(s, self.pos):
            got = self.text[self.pos:self.pos + 10] or "end of input"
            raise GrammarError(f"expected {s!r}, got {got!r}", self.line())
        self.pos += len(s)

    def keyword(self, kw):
        self.ws()
        m = re.compile(kw + r"\b", re.IGNORECASE).match(self.text, self.pos)
        if m:
            self.pos = m.end()
            return True
        return False

    def word(self):
        self.ws()
        m = re.compile(r"[A-Za-z_][A-Za-z0-9_]*").match(self.text, self.pos)
        if not m:
            raise GrammarError("expected a name", self.line())
        self.pos = m.end()
        return m.group(0)

    def skip_semicolon(self):
        if self.peek_char() == ";":
            self.pos += 1

    def parse(self):
        templates = []
        names = set()
        while not self.at_end():
            if not self.keyword("TEMPLATE"):
                raise GrammarError("expected TEMPLATE", self.line())
            name = self.word()
            if name in names:
                raise GrammarError(f"duplicate template {name}", self.line())
            names.add(name)
            self.next_index = 1
            self.expect("{")
            body = []
            while self.peek_char() != "}":
                if self.at_end():
                    raise GrammarError("unterminated template", self.line())
                if self.keyword("BRANCH"):
                    body.append(self.branch())
                elif self.keyword("LOOP"):
                    self.expect("{")
                    body.append(Loop(tuple(self.op_list())))
                    self.expect("}")
                    self.skip_semicolon()
                else:
                    body.append(self.op())
            self.expect("}")
            self.skip_semicolon()
            templates.append(TransactionTemplate(name, tuple(body)))
        return templates

    def branch(self):
        self.expect("{")
        alts = []
        while True:
            self.expect("{")
            alts.append(tuple(self.op_list()))
            self.expect("}")
            if self.peek_char() == "|":
                self.pos += 1
                continue
            break
        self.expect("}")
        self.skip_semicolon()
        if len(alts) < 2:
            raise GrammarError("BRANCH needs at least two alternatives", self.line())
        return Branch(tuple(alts))

    def op_list(self):
        ops = []
        while self.peek_char() != "}":
            if self.at_end():
                raise GrammarError("unterminated block", self.line())
            if re.compile(r"(BRANCH|LOOP)\b", re.IGNORECASE).match(self.text, self.pos):
                raise GrammarError("BRANCH/LOOP nesting is not supported", self.line())
            ops.append(self.op())
        return ops

    def op(self):
        self.ws()
        start = self.pos
        m = re.compile(r"[^;{}|]*").match(self.text, self.pos)
        end = m.end()
        if end >= len(self.text) or self.text[end] != ";":
            raise GrammarError("operation must end with ';'", self.line(start))
        self.pos = end + 1
        raw = self.text[start:end].strip()
        if not raw:
            raise GrammarError("empty operation", self.line(start))
        op = build_op(self.next_index, raw, self.schema, line=self.line(start))
        self.next_index += 1
        return op


def _parse_slot_ref(text, schema, line):
    ref, _, dtype = text.strip().partition(":")
    ref = ref.strip()
    dtype = dtype.strip().lower()
    column = None if ref in ("-", "") else ref
    if column is not None and "." not in column:
        raise GrammarError(f"slot {text!r} must be table.column", line)
    if schema is not None and column is not None:
        cdef = schema.column(column)
        dtype = dtype or cdef.dtype
    dtype = dtype or "integer"
    if dtype not in DATA_TYPES:
        raise GrammarError(f"unknown type {dtype!r}", line)
    return column, dtype


def build_op(index, raw, schema=None, line=None) -> SqlOp:
    """Build one SqlOp from ``<sql> [-> annotations]`` text."""
    sql, arrow, annot = raw.partition("->")
    sql = " ".join(sql.split())
    first = sql.split(" ", 1)[0].lower()
    kind = {"call": "procCall", "exec": "procCall"}.get(first, first)
    if kind not in OP_KINDS:
        raise GrammarError(f"unsupported operation {first!r}", line)
    found = {k.lower(): v for k, v in _ANNOT.findall(annot)} if arrow else {}
    leftover = _ANNOT.sub("", annot).strip() if arrow else ""
    if leftover:
        raise GrammarError(f"unrecognized annotation {leftover!r}", line)
    nplace = sql.count("?")
    if "params" in found:
        params = []
        for item in filter(None, (s.strip() for s in found["params"].split(","))):
            words = item.split()
            pkind = "val"
            if words[0].lower() in ("key", "val"):
                pkind = words.pop(0).lower()
            if len(words) != 1:
                raise GrammarError(f"bad parameter slot {item!r}", line)
            column, dtype = _parse_slot_ref(words[0], schema, line)
            params.append(ParamSlot(column, dtype, pkind == "key"))
        if len(params) != nplace:
            raise PlaceholderMismatch(index, nplace, len(params))
    else:
        params = [ParamSlot(None, "integer", False) for _ in range(nplace)]
    returns = []
    for item in filter(None, (s.strip() for s in found.get("returns", "").split(","))):
        column, dtype = _parse_slot_ref(item, schema, line)
        if column is None:
            raise GrammarError("return slots must name a column", line)
        returns.append(ReturnSlot(column, dtype))
    filt = found.get("filter", "").strip().lower()
    keys = [p for p in params if p.pivotal and p.column]
    if not filt:
        filt = "none"
        if keys:
            filt = "nonkey"
            if schema is not None:
                table = schema.table(keys[0].table)
                cols = {p.column.partition(".")[2] for p in keys if p.table == table.name}
                if table.primary_key and set(table.primary_key) <= cols:
                    filt = "pk"
    if filt not in FILTER_KINDS:
        raise GrammarError(f"unknown filter kind {filt!r}", line)
    if filt == "pk" and schema is not None:
        if not keys:
            raise GrammarError(f"op {index}: filter(pk) without key parameters", line)
        table = schema.table(keys[0].table)
        cols = {p.column.partition(".")[2] for p in keys if p.table == table.name}
        if not set(table.primary_key) <= cols:
            raise GrammarError(f"op {index}: filter(pk) does not cover {table.name} primary key", line)
    return SqlOp(index, sql, kind, tuple(params), tuple(returns), filt)


def parse_templates(text: str, schema: Optional[Schema] = None):
    return _TemplateParser(text, schema).parse()


def _format_op(op: SqlOp):
    parts = []
    if op.params:
        slots = ", ".join(
            f"{'key' if p.pivotal else 'val'} {p.column or '-'}:{p.dtype}" for p in op.params
        )
        parts.append(f"params({slots})")
    if op.returns:
        parts.append("returns(" + ", ".join(f"{r.column}:{r.dtype}" for r in op.returns) + ")")
    parts.append(f"filter({op.filter})")
    return f"{op.sql} -> {' '.join(parts)};"


def serialize_templates(templates: Sequence[TransactionTemplate]) -> str:
    out = []
    for tpl in templates:
        out.append(f"TEMPLATE {tpl.name} {{")
        for node in tpl.body:
            if isinstance(node, SqlOp):
                out.append("    " + _format_op(node))
            elif isinstance(node, Branch):
                out.append("    BRANCH {")
                alts = []
                for alt in node.alternatives:
                    alts.append("        { " + " ".join(_format_op(o) for o in alt) + " }")
                out.append("\n        |\n".join(alts))
                out.append("    };")
            else:
                out.append("    LOOP { " + " ".join(_format_op(o) for o in node.body) + " };")
        out.append("}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True)
class OpRecord:
    op: int
    ordinal: int
    params: tuple
    rows: Optional[tuple] = None


@dataclass(frozen=True)
class TransactionInstance:
    template: str
    ts: int
    ops: tuple
    worker: Optional[int] = None


@dataclass(frozen=True)
class LightOp:
    op: int
    ordinal: int
    values: tuple  # ((j, value), ...) pivotal parameters only


@dataclass(frozen=True)
class LightTraceRecord:
    template: str
    ts: int
    ops: tuple
    worker: Optional[int] = None


TraceRecord = Union[TransactionInstance, LightTraceRecord]

_JSON = json.JSONDecoder()
_KEY = re.compile(r"\s*([a-z]+)=")
_TOKEN = re.compile(r"\S+")


def _as_tuple(v):
    if isinstance(v, list):
        return tuple(_as_tuple(x) for x in v)
    return v


def _dump(v):
    return json.dumps(v, separators=(",", ":"), ensure_ascii=False)


def format_record(rec: TraceRecord) -> str:
    head = f"ts={rec.ts} tpl={rec.template}"
    if rec.worker is not None:
        head += f" wid={rec.worker}"
    parts = [head]
    if isinstance(rec, TransactionInstance):
        for o in rec.ops:
            s = f"op={o.op}#{o.ordinal} params={_dump(list(o.params))}"
            if o.rows is not None:
                s += f" rows={_dump([list(r) for r in o.rows])}"
            parts.append(s)
    else:
        for o in rec.ops:
            parts.append(f"op={o.op}#{o.ordinal} params={_dump({str(j): v for j, v in o.values})}")
    return " ".join(parts)


def write_trace(records: Iterable[TraceRecord], fh: TextIO):
    n = 0
    for rec in records:
        fh.write(format_record(rec))
        fh.write("\n")
        n += 1
    return n


def _fields(line):
    pos, out = 0, []
    while pos < len(line):
        m = _KEY.match(line, pos)
        if not m:
            if line[pos:].strip():
                raise ValueError(f"unparseable text at column {pos}")
            break
        key, pos = m.group(1), m.end()
        if key in ("params", "rows"):
            value, pos = _JSON.raw_decode(line, pos)
        else:
            t = _TOKEN.match(line, pos)
            if not t:
                raise ValueError(f"missing value for {key}")
            value, pos = t.group(0), t.end()
        out.append((key, value))
    return out


def parse_record(line: str, mode: str = "heavy", templates=None) -> TraceRecord:
    """Parse one trace line; raises ValueError describing the defect."""
    fields = _fields(line.strip())
    header = {}
    groups = []
    for key, value in fields:
        if key == "op":
            m = re.fullmatch(r"(\d+)#(\d+)", value)
            if not m:
                raise ValueError(f"bad op tag {value!r}")
            groups.append({"op": int(m.group(1)), "ordinal": int(m.group(2))})
        elif key in ("params", "rows"):
            if not groups or key in groups[-1]:
                raise ValueError(f"{key} outside an op segment")
            groups[-1][key] = value
        elif key in ("ts", "tpl", "wid") and not groups:
            header[key] = value
        else:
            raise ValueError(f"unexpected field {key!r}")
    if "ts" not in header or "tpl" not in header:
        raise ValueError("missing ts or tpl")
    ts = int(header["ts"])
    worker = int(header["wid"]) if "wid" in header else None
    name = header["tpl"]
    tpl = None
    if templates is not None:
        tpl = templates.get(name)
        if tpl is None:
            raise ValueError(f"unknown template {name!r}")
    seen = {}
    ops = []
    for g in groups:
        if "params" not in g:
            raise ValueError(f"op {g['op']} without params")
        if g["ordinal"] != seen.get(g["op"], 0) + 1:
            raise ValueError(f"op {g['op']}: execution ordinal {g['ordinal']} out of sequence")
        seen[g["op"]] = g["ordinal"]
        sql = None
        if tpl is not None:
            if not tpl.has_op(g["op"]):
                raise ValueError(f"op {g['op']} not in template {name}")
            sql = tpl.op(g["op"])
            if g["ordinal"] > 1 and g["op"] not in tpl.loop_ops:
                raise ValueError(f"op {g['op']} repeated outside a loop")
        if mode == "heavy":
            if not isinstance(g["params"], list):
                raise ValueError("heavy params must be a list")
            params = _as_tuple(g["params"])
            rows = g.get("rows")
            if rows is not None:
                if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
                    raise ValueError("rows must be a list of lists")
                rows = _as_tuple(rows)
            if sql is not None:
                if len(params) != len(sql.params):
                    raise ValueError(
                        f"op {g['op']}: {len(params)} values for {len(sql.params)} parameters")
                if sql.returns and rows is None:
                    raise ValueError(f"op {g['op']}: missing return rows")
                if rows is not None and any(len(r) != len(sql.returns) for r in rows):
                    raise ValueError(f"op {g['op']}: row width differs from return slots")
            ops.append(OpRecord(g["op"], g["ordinal"], params, rows))
        else:
            if "rows" in g:
                raise ValueError("light records carry no rows")
            if not isinstance(g["params"], dict):
                raise ValueError("light params must be an object")
            values = tuple(sorted((int(k), _as_tuple(v)) for k, v in g["params"].items()))
            if sql is not None:
                for j, _ in values:
                    if not 1 <= j <= len(sql.params) or not sql.params[j - 1].pivotal:
                        raise ValueError(f"op {g['op']}: parameter {j} is not pivotal")
            ops.append(LightOp(g["op"], g["ordinal"], values))
    cls = TransactionInstance if mode == "heavy" else LightTraceRecord
    return cls(name, ts, tuple(ops), worker)


class TraceReader:
    """Lazy single-pass reader; malformed lines are counted and skipped."""

    def __init__(self, stream: Iterable[str], mode: str = "heavy", templates=None,
                 keep_errors: int = 100):
        if mode not in ("heavy", "light"):
            raise ValueError(f"mode must be heavy or light, not {mode!r}")
        if templates is not None and not isinstance(templates, dict):
            templates = {t.name: t for t in templates}
        self.stream = stream
        self.mode = mode
        self.templates = templates
        self.malformed = 0
        self.errors = []
        self._keep = keep_errors

    def __iter__(self) -> Iterator[TraceRecord]:
        for line_no, line in enumerate(self.stream, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            try:
                yield parse_record(s, self.mode, self.templates)
            except (ValueError, KeyError, TypeError) as exc:
                self.malformed += 1
                if len(self.errors) < self._keep:
                    self.errors.append(MalformedRecord(line_no, str(exc)))


def read_trace(stream, mode="heavy", templates=None) -> TraceReader:
    return TraceReader(stream, mode, templates)


def to_light(inst: TransactionInstance, tpl: TransactionTemplate) -> LightTraceRecord:
    """Project a heavy record onto its pivotal parameters."""
    ops = []
    for o in inst.ops:
        slots = tpl.op(o.op).params
        vals = tuple((j, v) for j, (s, v) in enumerate(zip(slots, o.params), 1) if s.pivotal)
        ops.append(LightOp(o.op, o.ordinal, vals))
    return LightTraceRecord(inst.template, inst.ts, tuple(ops), inst.worker)
