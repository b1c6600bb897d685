"""Per-table data characteristics: size, column domains and cardinalities.

The production database is stood in for by one delimited file per table
(header row of column names). Characteristics are exact: min/max and a full
distinct set per column.
"""

from __future__ import annotations

import csv
import datetime as _dt
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .errors import EmptyInput, GrammarError, TypeMismatch
from .model import Schema, TableDef


@dataclass(frozen=True)
class ColumnCharacteristics:
    column: str
    dtype: str
    min: float  # string columns: minimum length
    max: float  # string columns: maximum length
    cardinality: int

    @property
    def domain(self):
        return (self.min, self.max)


@dataclass
class TableCharacteristics:
    table: str
    size: int
    columns: dict = field(default_factory=dict)  # name -> ColumnCharacteristics

    def column(self, name) -> ColumnCharacteristics:
        return self.columns[name]


def convert_value(raw, dtype):
    """Parse one delimited-file cell into its Python value for ``dtype``."""
    if not isinstance(raw, str):
        if dtype == "integer" and isinstance(raw, bool):
            raise ValueError("boolean in integer column")
        if dtype in ("integer", "datetime"):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError("fractional value")
            return int(raw)
        if dtype == "decimal":
            return float(raw)
        if dtype == "boolean":
            return bool(raw)
        return str(raw)
    s = raw.strip()
    if dtype == "integer":
        return int(s)
    if dtype == "decimal":
        return float(s)
    if dtype == "varchar":
        return raw
    if dtype == "datetime":
        try:
            return int(s)
        except ValueError:
            ts = _dt.datetime.fromisoformat(s)
            if ts.tzinfo is None:
                ts = ts.replace(tzinfo=_dt.timezone.utc)
            return int(ts.timestamp() * 1000)
    if dtype == "boolean":
        low = s.lower()
        if low in ("true", "t", "1"):
            return True
        if low in ("false", "f", "0"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    raise ValueError(f"unknown type {dtype}")


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def extract_table(rows: Iterable, table: TableDef) -> TableCharacteristics:
    """Exact characteristics for one table from a row stream.

    Rows are mappings keyed by column name or sequences in schema column order.
    """
    names = table.column_names
    types = [c.dtype for c in table.columns]
    lo = [None] * len(names)
    hi = [None] * len(names)
    distinct = [set() for _ in names]
    size = 0
    for size, row in enumerate(rows, 1):
        if isinstance(row, Mapping):
            row = [row.get(n) for n in names]
        if len(row) != len(names):
            raise TypeMismatch(size, table.name, row)
        for k, (raw, dtype) in enumerate(zip(row, types)):
            try:
                v = convert_value(raw, dtype)
            except (TypeError, ValueError):
                raise TypeMismatch(size, f"{table.name}.{names[k]}", raw) from None
            distinct[k].add(v)
            m = len(v) if dtype == "varchar" else v
            if lo[k] is None or m < lo[k]:
                lo[k] = m
            if hi[k] is None or m > hi[k]:
                hi[k] = m
    if size == 0:
        raise EmptyInput(f"table {table.name} has no rows")
    cols = {}
    for k, name in enumerate(names):
        mn, mx = lo[k], hi[k]
        if types[k] == "boolean":
            mn, mx = int(mn), int(mx)
        cols[name] = ColumnCharacteristics(name, types[k], mn, mx, len(distinct[k]))
    return TableCharacteristics(table.name, size, cols)


def extract_characteristics(sources: Mapping[str, Iterable], schema: Schema,
                            parallelism: int = 1):
    """Characteristics for every table in ``sources`` (table name -> rows)."""
    tables = [schema.table(name) for name in sources]
    if parallelism <= 1:
        return [extract_table(sources[t.name], t) for t in tables]
    with ThreadPoolExecutor(parallelism) as pool:
        return list(pool.map(lambda t: extract_table(sources[t.name], t), tables))


def read_table_file(path, table: TableDef, delimiter=","):
    """Yield rows (lists of raw strings in schema column order) from a table file."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            return
        try:
            order = [header.index(n) for n in table.column_names]
        except ValueError:
            raise GrammarError(f"{path}: header {header} does not match table {table.name}") from None
        for row in reader:
            if row:
                yield [row[k] for k in order]


def write_table_file(path, table: TableDef, rows: Iterable, delimiter=","):
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(table.column_names)
        for row in rows:
            w.writerow([format_value(v) for v in row])
            n += 1
    return n


def table_path(directory, table_name):
    return os.path.join(directory, f"{table_name}.csv")


def extract_directory(directory, schema: Schema, parallelism: int = 1):
    sources = {}
    for t in schema.tables:
        path = table_path(directory, t.name)
        if os.path.exists(path):
            sources[t.name] = read_table_file(path, t)
    return extract_characteristics(sources, schema, parallelism)


# ---------------------------------------------------------------------------
# stats file


def _num(text):
    v = float(text)
    return int(v) if v.is_integer() and "." not in text and "e" not in text.lower() else v


def dump_characteristics(chars) -> str:
    out = []
    for tc in chars:
        out.append(f"[table {tc.table}]")
        out.append(f"size={tc.size}")
        out.append("")
        for cc in tc.columns.values():
            out.append(f"[column {tc.table}.{cc.column}]")
            out.append(f"type={cc.dtype}")
            if cc.dtype == "varchar":
                out.append(f"min_length={cc.min}")
                out.append(f"max_length={cc.max}")
            else:
                out.append(f"min={cc.min!r}")
                out.append(f"max={cc.max!r}")
            out.append(f"cardinality={cc.cardinality}")
            out.append("")
    return "\n".join(out)


def load_characteristics(text) -> dict:
    """Parse a stats file into {table name: TableCharacteristics}."""
    tables: dict = {}
    current = None
    pending = None

    def flush():
        nonlocal pending
        if pending is not None:
            tname, cname, kv = pending
            lo = kv.get("min", kv.get("min_length"))
            hi = kv.get("max", kv.get("max_length"))
            tables[tname].columns[cname] = ColumnCharacteristics(
                cname, kv["type"], _num(lo), _num(hi), int(kv["cardinality"]))
            pending = None

    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            flush()
            kind, _, name = line[1:-1].partition(" ")
            if kind == "table":
                current = TableCharacteristics(name, 0)
                tables[name] = current
            elif kind == "column":
                tname, _, cname = name.partition(".")
                if tname not in tables:
                    raise GrammarError(f"column block for unknown table {tname}", line_no)
                pending = (tname, cname, {})
            else:
                raise GrammarError(f"unknown block {line}", line_no)
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise GrammarError(f"expected key=value, got {line!r}", line_no)
        if pending is not None:
            pending[2][key.strip()] = value.strip()
        elif current is not None and key.strip() == "size":
            current.size = int(value)
        else:
            raise GrammarError(f"stray entry {line!r}", line_no)
    flush()
    return tables


def characteristic_of(chars: Optional[dict], ref: str) -> Optional[ColumnCharacteristics]:
    if not chars or not ref:
        return None
    tname, _, cname = ref.partition(".")
    tc = chars.get(tname)
    if tc is None:
        return None
    return tc.columns.get(cname)
