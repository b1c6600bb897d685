"""Synthetic database generation.

Primary keys are enumerated sequentially (composite keys lexicographically over
their component domains), foreign keys are drawn uniformly from the referenced
key domain and non-key columns come from deterministic column generators fed
by a uniform random index.
"""

from __future__ import annotations

import math
import os
import random
import re
import string
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .characteristics import ColumnCharacteristics, table_path, write_table_file
from .errors import UnknownColumn, UnresolvableComposite
from .model import Schema, TableDef

BLOCK_ROWS = 4096
SEED_STRINGS = 1000


@dataclass(frozen=True)
class KeyDomain:
    lo: int
    hi: int
    provenance: str  # singlePK | inheritedFK | residualComposite

    @property
    def size(self):
        return self.hi - self.lo + 1


def derive_key_domains(schema: Schema, sizes: Mapping[str, int]):
    """Integer domain of every key column: {table: {column: KeyDomain}}.

    Tables are visited referenced-first, so cascaded references resolve in one
    pass over the topological order.
    """
    domains: dict = {}
    for name in schema.topological_order():
        t = schema.table(name)
        s = int(sizes[name])
        doms = {}
        for fk in t.foreign_keys:
            for col, ref_col in zip(fk.columns, fk.ref_columns):
                ref = domains.get(fk.ref_table, {}).get(ref_col)
                if ref is None:
                    raise UnknownColumn(f"{fk.ref_table}.{ref_col} (referenced key has no domain)")
                doms[col] = KeyDomain(ref.lo, ref.hi, "inheritedFK")
        pk = t.primary_key
        if len(pk) == 1:
            if pk[0] not in doms:
                doms[pk[0]] = KeyDomain(1, s, "singlePK")
        elif pk:
            residual = [c for c in pk if c not in doms]
            if len(residual) > 1:
                raise UnresolvableComposite(name, residual)
            if residual:
                prod = math.prod(doms[c].size for c in pk if c in doms)
                doms[residual[0]] = KeyDomain(1, max(1, s // prod), "residualComposite")
        domains[name] = doms
    return domains


def _stable_hash(value):
    return zlib.crc32(str(value).encode())


@dataclass(frozen=True)
class ColumnGenerator:
    """Deterministic index -> value transformer over indices 1..n."""

    n: int
    kind: str  # numericLinear | stringSeeded
    lo: float = 1
    hi: float = 1
    dtype: str = "integer"
    seeds: tuple = ()

    def value(self, index):
        index = int(index)
        if self.kind == "stringSeeded":
            return f"{index}{self.seeds[index % len(self.seeds)]}"
        if self.n == 1:
            x = self.lo
        else:
            x = self.lo + (index - 1) * (self.hi - self.lo) / (self.n - 1)
        return self._cast(x)

    def _cast(self, x):
        if self.dtype in ("integer", "datetime"):
            return int(math.floor(x + 0.5))
        if self.dtype == "boolean":
            return bool(math.floor(x + 0.5))
        return round(float(x), 9)

    def values(self, indices):
        if self.kind == "numericLinear" and self.dtype in ("integer", "datetime", "decimal"):
            idx = np.asarray(indices, dtype=np.float64)
            if self.n == 1:
                x = np.full(idx.shape, float(self.lo))
            else:
                # same operation order as value() so both paths round alike
                x = self.lo + (idx - 1) * (self.hi - self.lo) / (self.n - 1)
            if self.dtype == "decimal":
                return np.round(x, 9).tolist()
            return np.floor(x + 0.5).astype(np.int64).tolist()
        return [self.value(i) for i in np.asarray(indices).tolist()]

    def index_of(self, value):
        """Nearest index whose value approximates ``value`` (inverse transform)."""
        if self.kind == "stringSeeded":
            m = re.fullmatch(r"(\d+)([A-Za-z]*)", str(value))
            if m:
                k = int(m.group(1))
                if 1 <= k <= self.n and self.value(k) == value:
                    return k
            return _stable_hash(value) % self.n + 1
        if self.n == 1 or self.hi == self.lo:
            return 1
        k = int(math.floor((float(value) - self.lo) * (self.n - 1) / (self.hi - self.lo) + 0.5)) + 1
        return min(max(k, 1), self.n)

    def draw(self, rng: random.Random):
        return self.value(rng.randint(1, self.n))


def identity_generator(lo, hi):
    """Generator for a sequential integer key domain [lo, hi]."""
    return ColumnGenerator(int(hi) - int(lo) + 1, "numericLinear", int(lo), int(hi), "integer")


def _seed_strings(k, min_len, max_len, digits, seed):
    rng = random.Random(f"seed-strings:{seed}")
    lo = max(1, int(min_len) - digits)
    hi = max(lo, int(max_len) - digits)
    letters = string.ascii_letters
    return tuple(
        "".join(rng.choice(letters) for _ in range(rng.randint(lo, hi))) for _ in range(k)
    )


def make_column_generator(cc: ColumnCharacteristics, domain=None, seed=0) -> ColumnGenerator:
    """Generator reproducing ``cc``'s cardinality within ``domain`` (default cc's)."""
    n = max(1, int(cc.cardinality))
    lo, hi = domain if domain is not None else (cc.min, cc.max)
    if cc.dtype == "varchar":
        seeds = _seed_strings(SEED_STRINGS, lo, hi, len(str(n)), f"{seed}:{cc.column}")
        return ColumnGenerator(n, "stringSeeded", lo, hi, "varchar", seeds)
    if cc.dtype in ("integer", "datetime", "boolean"):
        lo, hi = int(lo), int(hi)
        n = min(n, hi - lo + 1)
    return ColumnGenerator(n, "numericLinear", lo, hi, cc.dtype)


class TablePlan:
    """Everything needed to emit rows of one table, picklable for worker processes."""

    def __init__(self, table: TableDef, key_domains, column_gens, seed):
        self.table = table
        self.seed = seed
        doms = key_domains.get(table.name, {})
        self.pk = table.primary_key
        self.radices = [doms[c].size for c in self.pk]
        self.pk_lo = [doms[c].lo for c in self.pk]
        self.rows = math.prod(self.radices) if self.pk else 0
        self.random_cols = []  # (position, kind, payload)
        for pos, col in enumerate(table.columns):
            if col.name in self.pk:
                continue
            if table.reference_of(col.name) is not None:
                d = doms[col.name]
                self.random_cols.append((pos, "fk", (d.lo, d.size)))
            elif col.name in column_gens:
                self.random_cols.append((pos, "gen", column_gens[col.name]))
            else:
                raise UnknownColumn(f"{table.name}.{col.name} (no generator)")
        self.table_hash = _stable_hash(table.name)

    def pk_columns(self, ordinals):
        """Decode 1-based row ordinals into PK component value arrays."""
        rest = np.asarray(ordinals, dtype=np.int64) - 1
        out = [None] * len(self.pk)
        for k in range(len(self.pk) - 1, -1, -1):
            out[k] = rest % self.radices[k] + self.pk_lo[k]
            rest = rest // self.radices[k]
        return out

    def block(self, b):
        """Rows of block ``b`` as a list of lists (deterministic in seed and b)."""
        first = b * BLOCK_ROWS + 1
        last = min(self.rows, (b + 1) * BLOCK_ROWS)
        count = last - first + 1
        rng = np.random.default_rng([self.seed, self.table_hash, b])
        u = rng.random((count, len(self.random_cols)))
        cols = [None] * len(self.table.columns)
        keys = self.pk_columns(np.arange(first, last + 1))
        for name, vals in zip(self.pk, keys):
            cols[self.table.column_names.index(name)] = vals.tolist()
        for k, (pos, kind, payload) in enumerate(self.random_cols):
            if kind == "fk":
                lo, size = payload
                cols[pos] = (lo + np.minimum((u[:, k] * size).astype(np.int64), size - 1)).tolist()
            else:
                gen = payload
                idx = np.minimum((u[:, k] * gen.n).astype(np.int64), gen.n - 1) + 1
                cols[pos] = gen.values(idx)
        return first, [list(r) for r in zip(*cols)]


def generate_table(table: TableDef, key_domains, column_gens, pk_range=None, seed=0):
    """Yield rows whose PK ordinals fall in ``pk_range`` (inclusive, 1-based).

    Randomness is drawn per fixed block of ordinals, so any split of the ordinal
    space into ranges yields the same rows as generating the union at once.
    """
    plan = TablePlan(table, key_domains, column_gens, seed)
    lo, hi = pk_range if pk_range is not None else (1, plan.rows)
    hi = min(hi, plan.rows)
    if lo > hi:
        return
    for b in range((lo - 1) // BLOCK_ROWS, (hi - 1) // BLOCK_ROWS + 1):
        first, rows = plan.block(b)
        for k, row in enumerate(rows):
            if lo <= first + k <= hi:
                yield row


def table_row_count(table: TableDef, key_domains):
    doms = key_domains.get(table.name, {})
    return math.prod(doms[c].size for c in table.primary_key) if table.primary_key else 0


def split_ranges(total, parts):
    parts = max(1, min(parts, total)) if total else 1
    bounds = np.linspace(0, total, parts + 1).astype(int)
    return [(int(bounds[k]) + 1, int(bounds[k + 1])) for k in range(parts) if bounds[k + 1] > bounds[k]]


def _write_part(args):
    table, key_domains, gens, rng_range, seed, path = args
    return write_table_file(path, table, generate_table(table, key_domains, gens, rng_range, seed))


def build_generators(schema: Schema, chars: Mapping, seed=0):
    """Column generators for every non-key column that has characteristics."""
    gens = {}
    for t in schema.tables:
        tc = chars.get(t.name)
        g = {}
        for col in t.columns:
            if t.is_key_column(col.name) or tc is None or col.name not in tc.columns:
                continue
            g[col.name] = make_column_generator(tc.columns[col.name], seed=seed)
        gens[t.name] = g
    return gens


def generate_database(schema: Schema, chars: Mapping, out_dir, seed=0, parallelism=1,
                      sizes: Optional[Mapping[str, int]] = None):
    """Write one file per table into ``out_dir``; returns {table: rows written}."""
    sizes = sizes or {name: tc.size for name, tc in chars.items()}
    key_domains = derive_key_domains(schema, sizes)
    gens = build_generators(schema, chars, seed)
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    for t in schema.tables:
        total = table_row_count(t, key_domains)
        path = table_path(out_dir, t.name)
        ranges = split_ranges(total, parallelism)
        if parallelism <= 1 or len(ranges) == 1:
            written[t.name] = _write_part((t, key_domains, gens[t.name], None, seed, path))
            continue
        parts = [f"{path}.part{k}" for k in range(len(ranges))]
        jobs = [(t, key_domains, gens[t.name], r, seed, p) for r, p in zip(ranges, parts)]
        with ProcessPoolExecutor(parallelism) as pool:
            counts = list(pool.map(_write_part, jobs))
        with open(path, "w") as out:
            for k, p in enumerate(parts):
                with open(p) as fh:
                    header = fh.readline()
                    if k == 0:
                        out.write(header)
                    for line in fh:
                        out.write(line)
                os.remove(p)
        written[t.name] = sum(counts)
    return written
