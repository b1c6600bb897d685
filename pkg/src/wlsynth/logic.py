"""Transaction-logic extraction from heavy traces.

Six steps per template: structure statistics, between (BR) increments,
equal/inclusive (ER/IR) pair counts, linear (LR) fits over random instance
pairs, greedy selection of the inter-item dependency list, and linear
relations between successive loop runs.

Equality and membership candidates are also counted against a shifted pairing
(instance k's target with instance k-1's source). That rate estimates how
often the pair coincides by chance; candidates not clearly above it are noise
and surviving probabilities are corrected for it.
"""

from __future__ import annotations

import contextlib
import gc
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import EmptyTrace, GrammarError, TemplateMismatch
from .model import NUMERIC_TYPES, P, R, Ref, TransactionInstance, TransactionTemplate


@dataclass(frozen=True)
class ExtractionConfig:
    K: int = 10_000
    N: int = 10_000
    max_deps: int = 10
    min_pr: float = 0.01
    chance_correction: bool = True
    z: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.K < 2 or self.N < 1:
            raise ValueError("K must be >= 2 and N >= 1")


@dataclass(frozen=True)
class DepItem:
    target: Ref
    kind: str  # ER | IR | LR | BR
    pr: float
    source: Optional[Ref] = None  # None for successive-run (loop) items
    a: Optional[float] = None
    b: Optional[float] = None
    delta: Optional[float] = None

    def describe(self):
        src = f" <- {self.source}" if self.source is not None else ""
        s = f"{self.target}{src} {self.kind} pr={_fmt(self.pr)}"
        if self.kind == "LR":
            s += f" a={_fmt(self.a)} b={_fmt(self.b)}"
        if self.kind == "BR":
            s += f" delta={_fmt(self.delta)}"
        return s


@dataclass
class StructureInfo:
    branches: List[tuple] = field(default_factory=list)  # per branch: alt probabilities
    loops: List[float] = field(default_factory=list)  # per loop: mean executions

    def is_empty(self):
        return not self.branches and not self.loops


@dataclass
class ParamLogic:
    pd1: Optional[DepItem] = None
    pd2: List[DepItem] = field(default_factory=list)
    pd3: List[DepItem] = field(default_factory=list)


@dataclass
class TransactionLogic:
    template: str
    structure: StructureInfo = field(default_factory=StructureInfo)
    params: Dict[Ref, ParamLogic] = field(default_factory=dict)

    def of(self, ref) -> ParamLogic:
        return self.params.get(ref) or ParamLogic()

    def items(self):
        for ref in sorted(self.params):
            pl = self.params[ref]
            if pl.pd1:
                yield "PD1", pl.pd1
            for d in pl.pd2:
                yield "PD2", d
            for d in pl.pd3:
                yield "PD3", d

    def without_dependencies(self, kinds=("ER", "IR", "LR", "BR"), loops=True):
        """Copy with the given dependency kinds dropped (structure kept)."""
        out = TransactionLogic(self.template, self.structure, {})
        for ref, pl in self.params.items():
            q = ParamLogic(
                pl.pd1 if pl.pd1 and pl.pd1.kind not in kinds else None,
                [d for d in pl.pd2 if d.kind not in kinds],
                [] if loops else list(pl.pd3),
            )
            if q.pd1 or q.pd2 or q.pd3:
                out.params[ref] = q
        return out


def _fmt(x):
    if x is None:
        return "-"
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 1e15 else repr(x)


def _num(x):
    """Int when integral, else float."""
    x = float(x)
    return int(x) if x.is_integer() and abs(x) < 1e15 else x


@contextlib.contextmanager
def _gc_paused():
    """Extraction allocates many acyclic objects; full collections over a large
    trace would rescan all of them and make the run superlinear in K."""
    was = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was:
            gc.enable()


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


# ---------------------------------------------------------------------------
# instance table


class InstanceTable:
    """Column-wise view of K instances of one template (first executions only)."""

    def __init__(self, instances: Sequence[TransactionInstance], tpl: TransactionTemplate):
        self.tpl = tpl
        self.K = K = len(instances)
        self.executions = {op.index: np.zeros(K, dtype=np.int64) for op in tpl.ops}
        self.values: Dict[Ref, list] = {}
        self.sets: Dict[Ref, list] = {}
        first = {op.index: [None] * K for op in tpl.ops}
        for k, inst in enumerate(instances):
            for rec in inst.ops:
                self.executions[rec.op][k] += 1
                if rec.ordinal == 1:
                    first[rec.op][k] = rec
        for op in tpl.ops:
            recs = first[op.index]
            for j in range(1, len(op.params) + 1):
                self.values[P(op.index, j)] = [r.params[j - 1] if r else None for r in recs]
            for v in range(1, len(op.returns) + 1):
                ref = R(op.index, v)
                if op.filter == "pk":
                    self.values[ref] = [
                        r.rows[0][v - 1] if r and r.rows and len(r.rows) == 1 else None
                        for r in recs
                    ]
                else:
                    self.sets[ref] = [
                        frozenset(row[v - 1] for row in r.rows) if r and r.rows is not None else None
                        for r in recs
                    ]
        self.codes: Dict[Ref, np.ndarray] = self._encode(K)
        self._numeric: Dict[Ref, np.ndarray] = {}

    def _encode(self, K):
        """Shared integer codes so equal values compare equal across items.

        Exactly representable numbers are coded in one vectorized pass; other
        values (strings, booleans, huge ints) go through a dictionary.
        """
        refs = list(self.values)
        nums = np.full((len(refs), K), np.nan)
        other: dict = {}
        other_at = []
        for r, ref in enumerate(refs):
            row = nums[r]
            for k, v in enumerate(self.values[ref]):
                t = type(v)
                if (t is int and -_EXACT < v < _EXACT) or (t is float and math.isfinite(v)):
                    row[k] = v
                elif v is not None:
                    other_at.append((r, k, other.setdefault(_key(v), len(other))))
        finite = np.isfinite(nums)
        codes = np.full(nums.shape, -1, dtype=np.int64)
        if finite.any():
            _, inv = np.unique(nums[finite], return_inverse=True)
            codes[finite] = inv.ravel() + len(other)
        for r, k, c in other_at:
            codes[r, k] = c
        return {ref: codes[r] for r, ref in enumerate(refs)}

    def executed(self, op_index):
        return self.executions[op_index] > 0

    def numeric(self, ref) -> Optional[np.ndarray]:
        if ref not in self._numeric:
            vals = self.values.get(ref)
            arr = None
            if vals is not None and self.tpl.slot(ref).dtype in NUMERIC_TYPES:
                arr = np.array([float(v) if _is_number(v) else np.nan for v in vals])
            self._numeric[ref] = arr
        return self._numeric[ref]


_EXACT = 2 ** 53


def _key(v):
    # keep 1 and True apart; 1 and 1.0 are the same value
    return ("b", v) if isinstance(v, bool) else v


def _check(instances, tpl):
    if not instances:
        raise EmptyTrace(f"no instances of template {tpl.name}")
    for inst in instances:
        if inst.template != tpl.name:
            raise TemplateMismatch(f"instance of {inst.template!r} given for template {tpl.name!r}")


# ---------------------------------------------------------------------------
# step 1: structure


def extract_structure(instances, tpl: TransactionTemplate) -> StructureInfo:
    _check(instances, tpl)
    table = instances if isinstance(instances, InstanceTable) else InstanceTable(instances, tpl)
    return _structure(table)


def _structure(table: InstanceTable) -> StructureInfo:
    tpl, K = table.tpl, table.K
    info = StructureInfo()
    for br in tpl.branches:
        counts = []
        any_run = np.zeros(K, dtype=bool)
        for alt in br.alternatives:
            if alt:
                ran = table.executed(alt[0].index)
                counts.append(int(ran.sum()))
                any_run |= ran
            else:
                counts.append(None)
        empty = [a for a, c in enumerate(counts) if c is None]
        counts = [c or 0 for c in counts]
        if empty:
            counts[empty[0]] = int((~any_run).sum())
        total = sum(counts)
        info.branches.append(tuple(c / total if total else 0.0 for c in counts))
    for lp in tpl.loops:
        runs = table.executions[lp.body[0].index].sum() if lp.body else 0
        info.loops.append(float(runs) / K)
    return info


# ---------------------------------------------------------------------------
# step 2: between relations


def extract_between(instances, tpl: TransactionTemplate) -> List[DepItem]:
    _check(instances, tpl)
    items = []
    for op in tpl.ops:
        for l, j in op.between_pairs():
            diffs = []
            for inst in instances:
                for rec in inst.ops:
                    if rec.op == op.index:
                        lo, hi = rec.params[l - 1], rec.params[j - 1]
                        if _is_number(lo) and _is_number(hi):
                            diffs.append(hi - lo)
            if diffs:
                delta = math.fsum(diffs) / len(diffs)
                items.append(DepItem(P(op.index, j), "BR", 1.0, P(op.index, l), delta=_num(delta)))
    return items


# ---------------------------------------------------------------------------
# step 3: equal / inclusive counts


@dataclass
class PairStat:
    source: Ref
    target: Ref
    kind: str
    count: int  # instances satisfying the relation
    n: int  # instances where the target was executed
    both: int  # instances where source and target were both present
    chance: float = 0.0  # coincidence rate from the shifted pairing
    chance_n: int = 0
    a: Optional[float] = None
    b: Optional[float] = None
    rate: Optional[float] = None  # LR: share of instances on the fitted line

    @property
    def pr(self):
        return self.count / self.n if self.n else 0.0


def _sources(tpl: TransactionTemplate, target: Ref):
    i, j = target.op, target.pos
    for op in tpl.ops:
        if op.index > i:
            break
        for n in range(1, len(op.params) + 1):
            if op.index < i or n < j:
                yield P(op.index, n)
        if op.index < i:
            for v in range(1, len(op.returns) + 1):
                yield R(op.index, v)


def _targets(tpl, exclude):
    return [ref for ref in tpl.param_refs() if ref not in exclude]


def collect_pair_stats(instances, tpl: TransactionTemplate, exclude=()) -> List[PairStat]:
    """ER/IR counts for every admissible (source, target) pair."""
    table = instances if isinstance(instances, InstanceTable) else InstanceTable(instances, tpl)
    stats = []
    for target in _targets(tpl, set(exclude)):
        t = table.codes[target]
        t_ok = t >= 0
        n = int(t_ok.sum())
        if n == 0:
            continue
        for src in _sources(tpl, target):
            if src in table.codes:
                s = table.codes[src]
                ok = t_ok & (s >= 0)
                count = int((ok & (s == t)).sum())
                sb = np.roll(s, 1)
                okb = t_ok & (sb >= 0)
                okb[0] = False
                nb = int(okb.sum())
                chance = float((okb & (sb == t)).sum()) / nb if nb else 0.0
                stats.append(PairStat(src, target, "ER", count, n, int(ok.sum()), chance, nb))
            elif src in table.sets:
                sets = table.sets[src]
                tv = table.values[target]
                count = both = hits_b = nb = 0
                for k in range(table.K):
                    if tv[k] is None:
                        continue
                    if sets[k] is not None:
                        both += 1
                        count += tv[k] in sets[k]
                    if k and sets[k - 1] is not None:
                        nb += 1
                        hits_b += tv[k] in sets[k - 1]
                stats.append(PairStat(src, target, "IR", count, n, both, hits_b / nb if nb else 0.0, nb))
    return stats


# ---------------------------------------------------------------------------
# step 4: linear fits


def _round_sig(x, digits=9):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    nz = np.isfinite(x) & (x != 0)
    mag = np.floor(np.log10(np.abs(x[nz])))
    scale = 10.0 ** (digits - 1 - mag)
    out[nz] = np.round(x[nz] * scale) / scale
    out[~np.isfinite(x)] = np.nan
    return out


def _modal_fit(x1, y1, x2, y2, resample=None, rounds=3):
    """Solve y = a*x + b per group and vote; returns (a, b, support, groups)."""
    x1, y1, x2, y2 = (np.array(v, dtype=np.float64) for v in (x1, y1, x2, y2))
    for _ in range(rounds):
        degenerate = np.isfinite(x1) & np.isfinite(x2) & (x1 == x2)
        if resample is None or not degenerate.any():
            break
        idx = np.flatnonzero(degenerate)
        nx1, ny1, nx2, ny2 = resample(len(idx))
        x1[idx], y1[idx], x2[idx], y2[idx] = nx1, ny1, nx2, ny2
    valid_target = np.isfinite(y1) & np.isfinite(y2)
    degenerate = np.isfinite(x1) & np.isfinite(x2) & (x1 == x2)
    groups = int((valid_target & ~degenerate).sum())
    ok = valid_target & np.isfinite(x1) & np.isfinite(x2) & ~degenerate
    if not ok.any():
        return None
    dx = x2[ok] - x1[ok]
    a = (y2[ok] - y1[ok]) / dx
    b = y1[ok] - a * x1[ok]
    ra, rb = _round_sig(a), _round_sig(b)
    if len(ra) <= VOTE_SAMPLE:
        a0, b0, support = _vote(ra, rb)
        return a0, b0, support, groups
    # candidates from a prefix of the (already random) groups, support counted
    # over all of them: linear in N, and any mode frequent enough to survive
    # selection shows up in the prefix
    best = None
    for ca, cb in _top_pairs(ra[:VOTE_SAMPLE], rb[:VOTE_SAMPLE], 16):
        support = int(((ra == ca) & (rb == cb)).sum())
        if best is None or support > best[2]:
            best = (ca, cb, support)
    return best[0], best[1], best[2], groups


VOTE_SAMPLE = 2048


def _codes(ra, rb):
    ua, ia = np.unique(ra, return_inverse=True)
    ub, ib = np.unique(rb, return_inverse=True)
    return ua, ub, ia.astype(np.int64) * len(ub) + ib


def _vote(ra, rb):
    ua, ub, codes = _codes(ra, rb)
    uniq, counts = np.unique(codes, return_counts=True)
    top = int(np.argmax(counts))
    code = int(uniq[top])
    return float(ua[code // len(ub)]), float(ub[code % len(ub)]), int(counts[top])


def _top_pairs(ra, rb, k):
    ua, ub, codes = _codes(ra, rb)
    uniq, counts = np.unique(codes, return_counts=True)
    order = np.argsort(-counts, kind="stable")[:k]
    return [(float(ua[int(c) // len(ub)]), float(ub[int(c) % len(ub)])) for c in uniq[order]]


def _numeric_items(table: InstanceTable):
    items = []
    for op in table.tpl.ops:
        for j, slot in enumerate(op.params, 1):
            if slot.dtype in NUMERIC_TYPES:
                items.append(P(op.index, j))
        if op.filter == "pk":
            for v, slot in enumerate(op.returns, 1):
                if slot.dtype in NUMERIC_TYPES:
                    items.append(R(op.index, v))
    return set(items)


def fit_linear(instances, tpl: TransactionTemplate, N: int, rng=None, exclude=()) -> List[PairStat]:
    """Modal (a, b) per numeric pair over N random instance pairs.

    ``count`` of the returned stats is the modal support and ``n`` the number of
    usable groups; (1, 0) (equality) and a == 0 (constant target) are dropped.
    """
    table = instances if isinstance(instances, InstanceTable) else InstanceTable(instances, tpl)
    rng = np.random.default_rng(rng)
    K = table.K
    if K < 2:
        return []
    g1 = rng.integers(0, K, N)
    g2 = (g1 + rng.integers(1, K, N)) % K
    numeric = _numeric_items(table)
    out = []
    for target in _targets(tpl, set(exclude)):
        if target not in numeric:
            continue
        y = table.numeric(target)
        if not np.isfinite(y).any():
            continue
        for src in _sources(tpl, target):
            if src not in numeric:
                continue
            x = table.numeric(src)

            def resample(m, x=x, y=y):
                r1 = rng.integers(0, K, m)
                r2 = (r1 + rng.integers(1, K, m)) % K
                return x[r1], y[r1], x[r2], y[r2]

            fit = _modal_fit(x[g1], y[g1], x[g2], y[g2], resample)
            if fit is None:
                continue
            a, b, support, groups = fit
            if (a == 1.0 and b == 0.0) or a == 0.0:
                continue
            rate, n, chance, nb = _line_rates(x, y, a, b)
            out.append(PairStat(src, target, "LR", support, groups, n, chance, nb,
                                a=_num(a), b=_num(b), rate=rate))
    return out


def _on_line(x, y, a, b):
    fx = a * x + b
    return np.isfinite(x) & np.isfinite(y) & (np.abs(y - fx) <= 1e-9 * np.maximum(1.0, np.abs(y)))


def _line_rates(x, y, a, b):
    """Per-instance rate on the line y = a*x + b, and the same rate with the
    source shifted by one instance (the coincidence baseline)."""
    ok = np.isfinite(x) & np.isfinite(y)
    n = int(ok.sum())
    rate = float(_on_line(x, y, a, b).sum()) / n if n else 0.0
    xb = np.roll(x, 1)
    okb = np.isfinite(xb) & np.isfinite(y)
    okb[0] = False
    nb = int(okb.sum())
    hits = _on_line(xb, y, a, b)
    hits[0] = False
    chance = float(hits.sum()) / nb if nb else 0.0
    return rate, n, chance, nb


# ---------------------------------------------------------------------------
# step 5: selection


def _equal_classes(stats: List[PairStat]):
    """Map each item to the earliest item it always equals (exact ER classes)."""
    parent: dict = {}

    def find(x):
        while parent.get(x, x) != x:
            x = parent[x]
        return x

    for s in stats:
        if s.kind == "ER" and s.both and s.count == s.both == s.n:
            a, b = find(s.source), find(s.target)
            if a != b:
                lo, hi = sorted((a, b), key=_order)
                parent[hi] = lo
    return find


def _order(ref: Ref):
    return (ref.op, 0 if ref.kind == "p" else 1, ref.pos)


def _candidate(stat: PairStat, config: ExtractionConfig):
    pr = stat.pr
    if stat.kind == "LR" and config.chance_correction and stat.rate is not None:
        # keep the pair-based probability; only test that the line beats chance
        c = stat.chance
        se = math.sqrt(2 * c * (1 - c) / max(1, min(stat.both, stat.chance_n)))
        if stat.rate - c <= config.z * se:
            return None
    if stat.kind in ("ER", "IR") and config.chance_correction and stat.chance > 0:
        c = stat.chance
        if c >= 1.0:
            return None
        se = math.sqrt(2 * c * (1 - c) / max(1, min(stat.n, stat.chance_n)))
        if pr - c <= config.z * se:
            return None
        pr = (pr - c) / (1 - c)
    if pr < config.min_pr:
        return None
    if stat.kind == "LR":
        return DepItem(stat.target, "LR", pr, stat.source, a=stat.a, b=stat.b)
    return DepItem(stat.target, stat.kind, pr, stat.source)


def select_deps(stats: List[PairStat], config: ExtractionConfig = ExtractionConfig()):
    """Greedy per-target dependency lists: {target: [DepItem, ...]}."""
    find = _equal_classes(stats)
    by_target: dict = {}
    seen = set()
    for s in stats:
        cand = _candidate(s, config)
        if cand is None:
            continue
        key = (s.target, s.kind, find(s.source), cand.a, cand.b)
        if key in seen:
            continue
        seen.add(key)
        by_target.setdefault(s.target, []).append(cand)
    out = {}
    for target, cands in by_target.items():
        cands.sort(key=lambda d: (-(2 * d.pr if d.kind == "ER" else d.pr), _order(d.source)))
        kept, total = [], 0.0
        for d in cands:
            if len(kept) >= config.max_deps:
                break
            if total + d.pr <= 1.0 + 1e-12:
                kept.append(d)
                total += d.pr
        if kept:
            out[target] = kept
    return out


def _greedy(items: List[DepItem], config):
    items = sorted(items, key=lambda d: -d.pr)
    kept, total = [], 0.0
    for d in items:
        if d.pr < config.min_pr or len(kept) >= config.max_deps:
            continue
        if total + d.pr <= 1.0 + 1e-12:
            kept.append(d)
            total += d.pr
    return kept


# ---------------------------------------------------------------------------
# step 6: successive loop runs


def extract_loop_deps(instances, tpl: TransactionTemplate, N: int, rng=None, exclude=(),
                      config: ExtractionConfig = None) -> Dict[Ref, List[DepItem]]:
    config = config or ExtractionConfig(N=max(1, N))
    rng = np.random.default_rng(rng)
    out = {}
    exclude = set(exclude)
    for op_index in sorted(tpl.loop_ops):
        op = tpl.op(op_index)
        for j, slot in enumerate(op.params, 1):
            ref = P(op_index, j)
            if ref in exclude or slot.dtype not in NUMERIC_TYPES:
                continue
            prev, cur = [], []
            for inst in instances:
                last = None
                for rec in inst.ops:
                    if rec.op != op_index:
                        continue
                    v = rec.params[j - 1]
                    v = float(v) if _is_number(v) else None
                    if last is not None and v is not None:
                        prev.append(last)
                        cur.append(v)
                    last = v
            m = len(prev)
            if m < 2:
                continue
            prev, cur = np.array(prev), np.array(cur)
            g1 = rng.integers(0, m, N)
            g2 = (g1 + rng.integers(1, m, N)) % m

            def resample(c, prev=prev, cur=cur, m=m):
                r1 = rng.integers(0, m, c)
                r2 = (r1 + rng.integers(1, m, c)) % m
                return prev[r1], cur[r1], prev[r2], cur[r2]

            fit = _modal_fit(prev[g1], cur[g1], prev[g2], cur[g2], resample)
            if fit is None:
                continue
            a, b, support, groups = fit
            pr = support / groups if groups else 0.0
            kept = _greedy([DepItem(ref, "LR", pr, None, a=_num(a), b=_num(b))], config)
            if kept:
                out[ref] = kept
    return out


# ---------------------------------------------------------------------------
# orchestration


def extract_transaction_logic(instances, tpl: TransactionTemplate,
                              config: ExtractionConfig = ExtractionConfig()) -> TransactionLogic:
    with _gc_paused():
        return _extract(instances, tpl, config)


def _extract(instances, tpl, config):
    instances = list(instances)[: config.K]
    _check(instances, tpl)
    rng = np.random.default_rng(config.seed)
    table = InstanceTable(instances, tpl)
    logic = TransactionLogic(tpl.name, _structure(table))
    between = extract_between(instances, tpl)
    excluded = {d.target for d in between}
    for d in between:
        logic.params[d.target] = ParamLogic(pd1=d)
    stats = collect_pair_stats(table, tpl, excluded)
    stats += fit_linear(table, tpl, config.N, rng, excluded)
    for target, items in select_deps(stats, config).items():
        logic.params.setdefault(target, ParamLogic()).pd2 = items
    for target, items in extract_loop_deps(instances, tpl, config.N, rng, excluded, config).items():
        logic.params.setdefault(target, ParamLogic()).pd3 = items
    return logic


def extract_all(instances, templates, config: ExtractionConfig = ExtractionConfig()):
    """Group a mixed trace by template and extract each group's logic."""
    by_name: dict = {}
    for inst in instances:
        bucket = by_name.setdefault(inst.template, [])
        if len(bucket) < config.K:
            bucket.append(inst)
    tpls = {t.name: t for t in templates}
    return {name: extract_transaction_logic(insts, tpls[name], config)
            for name, insts in by_name.items() if name in tpls}


# ---------------------------------------------------------------------------
# logic file


def dump_logic(logics) -> str:
    out = []
    for lg in logics:
        out.append(f"[template {lg.template}]")
        for b, probs in enumerate(lg.structure.branches, 1):
            out.append(f"branch {b} = " + " ".join(_fmt(p) for p in probs))
        for l, avg in enumerate(lg.structure.loops, 1):
            out.append(f"loop {l} = {_fmt(avg)}")
        for slot, d in lg.items():
            out.append(f"{slot} {d.describe()}")
        out.append("")
    return "\n".join(out)


def load_logic(text) -> Dict[str, TransactionLogic]:
    logics: Dict[str, TransactionLogic] = {}
    cur = None
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[template ") and line.endswith("]"):
            cur = TransactionLogic(line[10:-1].strip())
            logics[cur.template] = cur
            continue
        if cur is None:
            raise GrammarError("entry before any [template] block", line_no)
        words = line.split()
        try:
            if words[0] == "branch":
                cur.structure.branches.append(tuple(float(w) for w in words[3:]))
            elif words[0] == "loop":
                cur.structure.loops.append(float(words[3]))
            elif words[0] in ("PD1", "PD2", "PD3"):
                target = Ref.parse(words[1])
                k = 2
                source = None
                if words[k] == "<-":
                    source = Ref.parse(words[k + 1])
                    k += 2
                kind = words[k]
                kv = dict(w.split("=", 1) for w in words[k + 1:])
                num = lambda key: _num(kv[key]) if key in kv else None
                item = DepItem(target, kind, float(kv["pr"]), source, num("a"), num("b"), num("delta"))
                pl = cur.params.setdefault(target, ParamLogic())
                if words[0] == "PD1":
                    pl.pd1 = item
                elif words[0] == "PD2":
                    pl.pd2.append(item)
                else:
                    pl.pd3.append(item)
            else:
                raise ValueError(words[0])
        except (ValueError, IndexError, KeyError) as exc:
            raise GrammarError(f"bad logic entry {line!r} ({exc})", line_no) from None
    return logics
