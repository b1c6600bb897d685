"""Synthetic workload generation.

Each worker owns its RNG stream, its execution-target session and its
instance context, so workers never share mutable state. A transaction runs as
follows. Its type is drawn from the current window's mix. The branch
alternative comes from the recorded probabilities and the loop count from the
recorded average. Every parameter is filled from the dependency information
first and from the access distribution only as a fallback.
"""

from __future__ import annotations

import heapq
import math
import random
import zlib
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from .dbgen import BLOCK_ROWS, TablePlan, build_generators, derive_key_domains, make_column_generator
from .errors import MissingSource
from .logic import TransactionLogic
from .model import (
    NUMERIC_TYPES,
    Branch,
    Loop,
    OpRecord,
    P,
    Schema,
    SqlOp,
    TransactionInstance,
    TransactionTemplate,
)


@dataclass(frozen=True)
class GeneratorConfig:
    workers: int = 1
    model: str = "loop"  # loop | tps | scale
    rate: Optional[float] = None  # tps for "tps", factor for "scale"
    duration: float = 10.0  # seconds
    seed: int = 0
    dist_mode: str = "d"  # s | d | c
    window: float = 1.0
    transactions: Optional[int] = None  # loop model without an observed schedule

    def __post_init__(self):
        if self.model not in ("loop", "tps", "scale"):
            raise ValueError(f"unknown execution model {self.model!r}")
        if self.model != "loop" and (self.rate is None or self.rate <= 0):
            raise ValueError("fixed-throughput models need exactly one positive rate")
        if self.model == "loop" and self.rate is not None:
            raise ValueError("the loop model takes no rate")
        if self.workers < 1:
            raise ValueError("need at least one worker")
        if self.dist_mode not in ("s", "d", "c"):
            raise ValueError(f"unknown distribution mode {self.dist_mode!r}")


def parse_model(text):
    """'loop' | 'tps:N' | 'scale:X' -> (model, rate)."""
    name, _, arg = text.partition(":")
    if name == "loop" and not arg:
        return "loop", None
    if name in ("tps", "scale") and arg:
        return name, float(arg)
    raise ValueError(f"bad execution model {text!r}")


# ---------------------------------------------------------------------------
# mix schedule and pacing


@dataclass
class MixSchedule:
    window: float
    proportions: List[Dict[str, float]]
    throughput: List[float]  # observed tx/s per window

    @classmethod
    def from_counts(cls, counts: Dict[int, Dict[str, int]], window=1.0):
        """Schedule from per-window template counts (absolute window indices)."""
        if not counts:
            raise ValueError("empty schedule")
        lo, hi = min(counts), max(counts)
        props, tps = [], []
        last = None
        for w in range(lo, hi + 1):
            c = counts.get(w, {})
            total = sum(c.values())
            if total:
                last = {k: v / total for k, v in sorted(c.items())}
            props.append(last)
            tps.append(total / window)
        first = next(p for p in props if p is not None)
        props = [p if p is not None else first for p in props]
        return cls(window, props, tps)

    @classmethod
    def uniform(cls, names, window=1.0, tps=0.0):
        return cls(window, [{n: 1 / len(names) for n in names}], [tps])

    def __len__(self):
        return len(self.proportions)

    def at(self, t):
        """Proportions of window ``t``; past the end the schedule wraps."""
        return self.proportions[t % len(self.proportions)]

    def observed(self, t):
        return self.throughput[t % len(self.throughput)]


def pick_transaction(schedule: MixSchedule, t, rng: random.Random):
    props = schedule.at(t)
    u = rng.random()
    acc = 0.0
    name = None
    for name, p in props.items():
        acc += p
        if u < acc:
            return name
    return name


def target_rate(config: GeneratorConfig, schedule: Optional[MixSchedule], t):
    if config.model == "tps":
        return config.rate
    if config.model == "scale":
        return config.rate * schedule.observed(t)
    return None


class Pacer:
    """Issue times for one worker under a target throughput.

    The worker's share of the target rate is integrated over time, so issue
    times follow the target even when it changes between windows; the think
    time before a transaction is whatever is left until its issue time.
    """

    def __init__(self, config: GeneratorConfig, schedule: Optional[MixSchedule] = None,
                 offset=0.0):
        self.config = config
        self.schedule = schedule
        self.due = offset

    def rate(self, t):
        r = target_rate(self.config, self.schedule, t)
        return None if r is None else r / self.config.workers

    def next_issue(self):
        """Issue time (s) of the next transaction, or None past the duration."""
        while self.due < self.config.duration:
            t = int(self.due // self.config.window)
            r = self.rate(t)
            if r is None:
                return None
            if r <= 0:
                self.due = (t + 1) * self.config.window
                continue
            issue = self.due
            self.due += 1.0 / r
            return issue
        return None

    def think(self, elapsed):
        """Think time before the next transaction at time ``elapsed``."""
        if self.config.model == "loop":
            return 0.0
        issue = self.next_issue()
        return 0.0 if issue is None else max(0.0, issue - elapsed)


def pace(config: GeneratorConfig, schedule, t, service_time):
    """Mean think time per transaction for one worker in window ``t``."""
    r = target_rate(config, schedule, t)
    if r is None:
        return 0.0
    return max(0.0, config.workers / r - service_time)


# ---------------------------------------------------------------------------
# execution targets


class ExecutionTarget:
    """Where a worker sends its operations; one instance per worker session."""

    def begin(self, worker, template, ts):
        pass

    def submit(self, op: SqlOp, ordinal, params):
        """Execute one operation; returns the result rows (or None)."""
        raise NotImplementedError

    def commit(self):
        pass

    def abort(self, reason):
        pass


class HashRows:
    """Deterministic stand-in rows when no synthetic database is described."""

    def rows(self, op: SqlOp, params):
        if not op.returns:
            return None
        seed = repr(params)
        row = []
        for slot in op.returns:
            h = zlib.crc32(f"{slot.column}|{seed}".encode())
            if slot.dtype in ("integer", "datetime"):
                row.append(h % 1000 + 1)
            elif slot.dtype == "decimal":
                row.append(round((h % 100000) / 100.0, 2))
            elif slot.dtype == "boolean":
                row.append(bool(h & 1))
            else:
                row.append(f"v{h:08x}")
        return [tuple(row)]


class DatabaseRows:
    """Result rows looked up in the (virtual) synthetic database.

    Rows are regenerated from the deterministic table plans, so no table file
    has to be read. Point lookups on the full primary key return that row;
    equality or range predicates on a key prefix enumerate up to ``limit``
    rows; other predicates return stand-in rows.
    """

    def __init__(self, schema: Schema, chars, seed=0, sizes=None, limit=100, cache_blocks=256):
        sizes = sizes or {name: tc.size for name, tc in chars.items()}
        self.schema = schema
        self.key_domains = derive_key_domains(schema, sizes)
        gens = build_generators(schema, chars, seed)
        self.plans = {}
        for t in schema.tables:
            try:
                self.plans[t.name] = TablePlan(t, self.key_domains, gens.get(t.name, {}), seed)
            except Exception:
                continue
        self.limit = limit
        self._blocks: Dict[tuple, list] = {}
        self._cache_blocks = cache_blocks
        self.fallback = HashRows()

    def _row(self, plan, ordinal):
        b = (ordinal - 1) // BLOCK_ROWS
        key = (plan.table.name, b)
        rows = self._blocks.get(key)
        if rows is None:
            if len(self._blocks) >= self._cache_blocks:
                self._blocks.clear()
            rows = plan.block(b)[1]
            self._blocks[key] = rows
        return rows[(ordinal - 1) % BLOCK_ROWS]

    def _predicates(self, op: SqlOp, params):
        """{column: (lo, hi)} for the op's key predicates on its table."""
        table = next((s.table for s in op.params if s.pivotal and s.column), None)
        if table is None:
            return None, {}
        preds = {}
        between = {j for l, j in op.between_pairs()} | {l for l, j in op.between_pairs()}
        for l, j in op.between_pairs():
            s = op.params[l - 1]
            if s.table == table:
                preds[s.column.partition(".")[2]] = (params[l - 1], params[j - 1])
        for k, s in enumerate(op.params, 1):
            if s.pivotal and s.table == table and k not in between:
                c = s.column.partition(".")[2]
                preds.setdefault(c, (params[k - 1], params[k - 1]))
        return table, preds

    def rows(self, op: SqlOp, params):
        if not op.returns:
            return None
        table, preds = self._predicates(op, params)
        plan = self.plans.get(table)
        if plan is None or not plan.pk:
            return self.fallback.rows(op, params)
        ranges = []
        for c in plan.pk:
            d = self.key_domains[table][c]
            if c in preds:
                lo, hi = preds[c]
                try:
                    lo, hi = max(int(lo), d.lo), min(int(hi), d.hi)
                except (TypeError, ValueError):
                    return []
                if lo > hi:
                    return []
                ranges.append((lo, hi))
            else:
                ranges.append((d.lo, d.hi))
        cols = [c.name for c in plan.table.columns]
        picks = []
        for slot in op.returns:
            t, _, c = slot.column.partition(".")
            picks.append(cols.index(c) if t == table and c in cols else None)
        out = []
        for combo in _product(ranges, self.limit):
            ordinal, mult = 0, 1
            for (v, r, lo) in reversed(list(zip(combo, plan.radices, plan.pk_lo))):
                ordinal += (v - lo) * mult
                mult *= r
            row = self._row(plan, ordinal + 1)
            out.append(tuple(row[p] if p is not None else None for p in picks))
        if any(p is None for p in picks):
            fb = self.fallback.rows(op, params)[0]
            out = [tuple(fb[k] if p is None else v for k, (p, v) in enumerate(zip(picks, r)))
                   for r in out]
        return out


def _product(ranges, limit):
    """Lexicographic tuples over inclusive integer ranges, at most ``limit``."""
    n = 0
    idx = [lo for lo, _ in ranges]
    if not ranges:
        return
    while n < limit:
        yield tuple(idx)
        n += 1
        k = len(ranges) - 1
        while k >= 0:
            if idx[k] < ranges[k][1]:
                idx[k] += 1
                break
            idx[k] = ranges[k][0]
            k -= 1
        if k < 0:
            return


class SimTarget(ExecutionTarget):
    """Records submitted operations as trace instances; rows come from ``row_source``."""

    def __init__(self, row_source=None, worker=None):
        self.row_source = row_source or HashRows()
        self.worker = worker
        self.instances: List[TransactionInstance] = []
        self.submits = 0
        self._cur = None

    def begin(self, worker, template, ts):
        self._cur = (template, ts, worker, [])

    def submit(self, op: SqlOp, ordinal, params):
        self.submits += 1
        rows = self.row_source.rows(op, params)
        if rows is not None:
            rows = tuple(tuple(r) for r in rows)
        self._cur[3].append(OpRecord(op.index, ordinal, tuple(params), rows))
        return rows

    def commit(self):
        template, ts, worker, ops = self._cur
        self.instances.append(TransactionInstance(template, ts, tuple(ops), worker))
        self._cur = None

    def abort(self, reason):
        self._cur = None


# ---------------------------------------------------------------------------
# instantiation


@dataclass
class InstanceContext:
    params: dict = field(default_factory=dict)  # Ref -> latest value
    rows: dict = field(default_factory=dict)  # op index -> rows of latest execution
    executed: set = field(default_factory=set)  # op indices executed so far
    run: int = 1  # current loop run (1-based)
    prev_run: dict = field(default_factory=dict)  # Ref -> value in the previous run
    current_op: int = 0


@dataclass
class Counters:
    sampler_calls: int = 0
    dependency_hits: int = 0


def _cast(value, dtype):
    if dtype in ("integer", "datetime") and isinstance(value, float):
        return int(math.floor(value + 0.5))
    if dtype == "decimal" and isinstance(value, float):
        return round(value, 9)
    return value


def _source_value(ref, tpl: TransactionTemplate, ctx: InstanceContext, rng):
    """Value of a dependency source, or None when its operation did not run."""
    if not tpl.has_op(ref.op) or ref.op > ctx.current_op:
        raise MissingSource(ref)
    if ref.kind == "p" and ref.op == ctx.current_op:
        if ref not in ctx.params:
            raise MissingSource(ref)
        return ctx.params[ref]
    if ref.op not in ctx.executed:
        return None
    if ref.kind == "p":
        if ref not in ctx.params:
            raise MissingSource(ref)
        return ctx.params[ref]
    rows = ctx.rows.get(ref.op)
    if not rows:
        return None
    return rows[0][ref.pos - 1]


def instantiate_param(ref, slot, tpl: TransactionTemplate, logic: Optional[TransactionLogic],
                      fallback: Callable[[], object], ctx: InstanceContext, rng: random.Random,
                      counters: Optional[Counters] = None):
    """Concrete value for parameter ``ref``: dependencies first, sampler last."""
    pl = logic.of(ref) if logic is not None else None
    if pl is not None and pl.pd1 is not None:
        base = _source_value(pl.pd1.source, tpl, ctx, rng)
        if base is None:
            raise MissingSource(pl.pd1.source)
        if counters:
            counters.dependency_hits += 1
        return _cast(base + pl.pd1.delta, slot.dtype)
    if pl is not None and pl.pd3 and ctx.run > 1 and ref in ctx.prev_run:
        u = rng.random()
        acc = 0.0
        for d in pl.pd3:
            acc += d.pr
            if u < acc:
                if counters:
                    counters.dependency_hits += 1
                return _cast(d.a * ctx.prev_run[ref] + d.b, slot.dtype)
    if pl is not None and pl.pd2:
        u = rng.random()
        acc = 0.0
        for d in pl.pd2:
            acc += d.pr
            if u < acc:
                v = _apply(d, tpl, ctx, rng, slot)
                if v is not None:
                    if counters:
                        counters.dependency_hits += 1
                    return v
                break
    if counters:
        counters.sampler_calls += 1
    return fallback()


def _apply(d, tpl, ctx, rng, slot):
    if d.kind == "IR":
        rows = ctx.rows.get(d.source.op) if d.source.op in ctx.executed else None
        if not rows:
            return None
        return rng.choice([r[d.source.pos - 1] for r in rows])
    x = _source_value(d.source, tpl, ctx, rng)
    if x is None:
        return None
    if d.kind == "LR":
        return _cast(d.a * x + d.b, slot.dtype)
    return x


@dataclass
class Outcome:
    committed: bool
    reason: Optional[str] = None
    ops: int = 0


def loop_count(avg, rng: random.Random):
    base = int(math.floor(avg))
    return base + (1 if rng.random() < avg - base else 0)


def _pick_alt(probs, n, rng):
    if not probs:
        return rng.randrange(n)
    u = rng.random()
    acc = 0.0
    for a, p in enumerate(probs):
        acc += p
        if u < acc:
            return a
    return n - 1


def execute_transaction(tpl: TransactionTemplate, logic: Optional[TransactionLogic], sampler_for,
                        target: ExecutionTarget, rng: random.Random, worker=0, ts=0,
                        counters: Optional[Counters] = None) -> Outcome:
    """Run one transaction of ``tpl`` against ``target``.

    ``sampler_for(ref, slot)`` returns a zero-argument callable producing a
    distribution-driven value for the slot.
    """
    ctx = InstanceContext()
    structure = logic.structure if logic is not None else None
    target.begin(worker, tpl.name, ts)
    n_ops = 0
    b_no = l_no = 0
    try:
        for node in tpl.body:
            if isinstance(node, SqlOp):
                _run_op(node, 1, tpl, logic, sampler_for, target, ctx, rng, counters)
                n_ops += 1
            elif isinstance(node, Branch):
                probs = structure.branches[b_no] if structure and b_no < len(structure.branches) else None
                b_no += 1
                alt = node.alternatives[_pick_alt(probs, len(node.alternatives), rng)]
                for op in alt:
                    _run_op(op, 1, tpl, logic, sampler_for, target, ctx, rng, counters)
                    n_ops += 1
            elif isinstance(node, Loop):
                avg = structure.loops[l_no] if structure and l_no < len(structure.loops) else 1.0
                l_no += 1
                runs = loop_count(avg, rng)
                for run in range(1, runs + 1):
                    ctx.run = run
                    for op in node.body:
                        _run_op(op, run, tpl, logic, sampler_for, target, ctx, rng, counters)
                        n_ops += 1
                ctx.run = 1
    except MissingSource:
        target.abort("missing dependency source")
        raise
    except Exception as exc:  # target failures surface as aborts
        target.abort(str(exc))
        return Outcome(False, str(exc), n_ops)
    target.commit()
    return Outcome(True, None, n_ops)


def _run_op(op: SqlOp, run, tpl, logic, sampler_for, target, ctx: InstanceContext, rng, counters):
    ctx.current_op = op.index
    values = []
    for j, slot in enumerate(op.params, 1):
        ref = P(op.index, j)
        if run > 1 and ref in ctx.params:
            ctx.prev_run[ref] = ctx.params[ref]
        v = instantiate_param(ref, slot, tpl, logic, sampler_for(ref, slot), ctx, rng, counters)
        ctx.params[ref] = v
        values.append(v)
    rows = target.submit(op, run, values)
    ctx.rows[op.index] = rows
    ctx.executed.add(op.index)


# ---------------------------------------------------------------------------
# samplers bound to the current window


class SamplerBank:
    """Per-worker view onto the parameter samplers for the current window."""

    def __init__(self, param_samplers: Dict[tuple, object], column_gens: Dict[str, object],
                 rng: random.Random):
        self.param_samplers = param_samplers
        self.column_gens = column_gens
        self.rng = rng
        self.t = 0
        self.template = None

    def __call__(self, ref, slot):
        ps = self.param_samplers.get((self.template, ref))
        if ps is not None:
            return lambda: ps.sample(self.t, self.rng)
        gen = self.column_gens.get(slot.column) if slot.column else None
        if gen is not None:
            return lambda: gen.draw(self.rng)
        if slot.dtype in NUMERIC_TYPES:
            return lambda: self.rng.randint(1, 1000)
        if slot.dtype == "boolean":
            return lambda: self.rng.random() < 0.5
        return lambda: f"s{self.rng.randint(1, 1000)}"


def column_generators(schema: Optional[Schema], chars, seed=0):
    """'table.column' -> generator used for parameters without a distribution."""
    out = {}
    if not chars:
        return out
    for tname, tc in chars.items():
        for cname, cc in tc.columns.items():
            out[f"{tname}.{cname}"] = make_column_generator(cc, seed=seed)
    if schema is not None:
        sizes = {n: tc.size for n, tc in chars.items()}
        try:
            doms = derive_key_domains(schema, sizes)
        except Exception:
            doms = {}
        from .dbgen import identity_generator
        for tname, cols in doms.items():
            for cname, d in cols.items():
                out[f"{tname}.{cname}"] = identity_generator(d.lo, d.hi)
    return out


@dataclass
class GenerationResult:
    instances: List[TransactionInstance]
    outcomes: int = 0
    aborted: int = 0
    counters: Counters = field(default_factory=Counters)


def _issue_plan(config: GeneratorConfig, schedule: Optional[MixSchedule], worker):
    """Issue times (s) for one worker."""
    if config.model != "loop":
        offset = worker / max(1e-9, target_rate(config, schedule, 0) or 1.0)
        pacer = Pacer(config, schedule, offset=offset)
        while True:
            t = pacer.next_issue()
            if t is None:
                return
            yield t
        return
    windows = int(math.ceil(config.duration / config.window))
    if schedule is not None and config.transactions is None:
        for t in range(windows):
            n = int(round(schedule.observed(t) * config.window))
            for k in range(worker, n, config.workers):
                yield t * config.window + k * config.window / n
        return
    total = config.transactions or 0
    for k in range(worker, total, config.workers):
        yield k * config.duration / total


def generate_workload(templates, logics: Dict[str, TransactionLogic], param_samplers,
                      schedule: Optional[MixSchedule], config: GeneratorConfig,
                      target_factory: Callable[[int], ExecutionTarget], column_gens=None,
                      ) -> GenerationResult:
    """Run every worker and merge their transactions into one time-ordered list."""
    tpls = {t.name: t for t in templates}
    if schedule is None:
        schedule = MixSchedule.uniform(sorted(tpls), config.window)
    column_gens = column_gens or {}
    counters = Counters()
    per_worker = []
    aborted = 0
    for w in range(config.workers):
        rng = random.Random(f"{config.seed}:{w}")
        bank = SamplerBank(param_samplers, column_gens, rng)
        target = target_factory(w)
        for issue in _issue_plan(config, schedule, w):
            t = int(issue // config.window)
            name = pick_transaction(schedule, t, rng)
            bank.t, bank.template = t, name
            out = execute_transaction(tpls[name], logics.get(name), bank, target, rng, w,
                                      int(round(issue * 1000)), counters)
            if not out.committed:
                aborted += 1
        per_worker.append(getattr(target, "instances", []))
    merged = list(heapq.merge(*per_worker, key=lambda i: (i.ts, i.worker)))
    return GenerationResult(merged, len(merged) + aborted, aborted, counters)
