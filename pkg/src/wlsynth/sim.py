"""Discrete-event simulator for lock conflicts, partitioning and buffering.

Transactions run under strict two-phase locking at record granularity with
shared/exclusive modes. Waits are FIFO per record, and an upgrade request
goes to the front of its queue. Deadlocks are found by a cycle search over
the wait-for graph whenever a wait starts or a lock changes hands. The
youngest transaction on the cycle is aborted and not retried. Every
operation costs a fixed service time. Every record it touches goes through
an LRU buffer.

Time is kept in integer microseconds so runs are bit-for-bit repeatable.
"""

from __future__ import annotations

import heapq
import math
import random
import zlib
from collections import OrderedDict, deque
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List

from .errors import EmptyInput, UnresolvedKey
from .model import TransactionInstance


@dataclass(frozen=True)
class SimConfig:
    partitions: int = 5
    buffer: int = 1000  # records
    op_cost_us: int = 1000
    miss_cost_us: int = 0  # extra service time per buffer miss
    cost_jitter: float = 0.0  # op cost scaled by 1 + U(-j, j)
    seed: int = 0
    issue: str = "closed"  # closed: back to back per worker; scheduled: at trace timestamps
    range_limit: int = 1000  # widest between-range expanded into record keys
    window: float = 1.0

    def __post_init__(self):
        if self.partitions < 1 or self.buffer < 0:
            raise ValueError("need partitions >= 1 and buffer >= 0")
        if not 0.0 <= self.cost_jitter < 1.0:
            raise ValueError("cost_jitter must be in [0, 1)")
        if self.issue not in ("closed", "scheduled"):
            raise ValueError("issue must be 'closed' or 'scheduled'")


@dataclass(frozen=True)
class SimOp:
    keys: tuple  # record keys, each (table, key values)
    write: bool


@dataclass(frozen=True)
class SimTx:
    worker: int
    ts: int  # ms
    template: str
    ops: tuple


@dataclass
class SimMetrics:
    transactions: int = 0
    committed: int = 0
    aborted: int = 0
    duration_s: float = 0.0
    throughput: float = 0.0
    success_tps: float = 0.0
    failure_tps: float = 0.0
    mean_latency_ms: float = 0.0
    p95_latency_ms: float = 0.0
    lock_wait_share: float = 0.0
    deadlocks: int = 0
    deadlocks_per_s: float = 0.0
    distributed_ratio: float = 0.0
    buffer_misses: int = 0
    mean_think_ms: float = 0.0
    window_tps: list = field(default_factory=list)

    def as_dict(self):
        return asdict(self)


COMPARED = ("throughput", "success_tps", "failure_tps", "mean_latency_ms", "p95_latency_ms",
            "lock_wait_share", "deadlocks_per_s", "distributed_ratio", "buffer_misses")


# ---------------------------------------------------------------------------
# operation keys from a trace


def op_keys(op, params, cfg: SimConfig):
    """Record keys touched by one executed operation."""
    tables = [s.table for s in op.params if s.pivotal and s.column]
    if not tables:
        raise UnresolvedKey(None, op.index)
    table = tables[0]
    between = {}
    inside = set()
    for l, j in op.between_pairs():
        s = op.params[l - 1]
        if s.table == table and s.pivotal:
            between[s.column] = (params[l - 1], params[j - 1])
            inside.update((l, j))
    eq = []
    for k, s in enumerate(op.params, 1):
        if s.pivotal and s.table == table and k not in inside and s.column not in between:
            eq.append((s.column, params[k - 1]))
    # key values ordered by column name position of first appearance
    if between:
        (col, (lo, hi)), = list(between.items())[:1]
        try:
            lo, hi = int(lo), int(hi)
        except (TypeError, ValueError):
            return ((table, ("range", col, lo, hi)),)
        if hi < lo or hi - lo + 1 > cfg.range_limit:
            return ((table, ("range", col, lo, hi)),)
        prefix = tuple(v for _, v in eq)
        return tuple((table, (v,) + prefix) for v in range(lo, hi + 1))
    return ((table, tuple(v for _, v in eq)),)


def instance_to_tx(inst: TransactionInstance, tpl, cfg: SimConfig) -> SimTx:
    ops = []
    for rec in inst.ops:
        op = tpl.op(rec.op)
        try:
            keys = op_keys(op, rec.params, cfg)
        except UnresolvedKey:
            raise UnresolvedKey(tpl.name, rec.op) from None
        ops.append(SimOp(keys, op.is_write))
    return SimTx(inst.worker or 0, inst.ts, inst.template, tuple(ops))


def transactions_from_trace(records: Iterable[TransactionInstance], templates,
                            cfg: SimConfig) -> List[SimTx]:
    tpls = templates if isinstance(templates, dict) else {t.name: t for t in templates}
    return [instance_to_tx(r, tpls[r.template], cfg) for r in records]


def partition_of(key, partitions):
    table, values = key
    v = values[0] if values else None
    if isinstance(v, int) and not isinstance(v, bool):
        return v % partitions
    return zlib.crc32(repr(v).encode()) % partitions


# ---------------------------------------------------------------------------
# lock manager


class _Lock:
    __slots__ = ("holders", "queue")

    def __init__(self):
        self.holders: Dict[int, str] = {}
        self.queue: deque = deque()  # (tid, mode)


def _compatible(a, b):
    return a == "S" and b == "S"


class _Tx:
    __slots__ = ("tid", "spec", "start", "next_op", "key_pos", "held", "waiting", "wait_since",
                 "wait_total", "alive", "partitions")

    def __init__(self, tid, spec: SimTx, start):
        self.tid = tid
        self.spec = spec
        self.start = start
        self.next_op = 0
        self.key_pos = 0
        self.held = set()
        self.waiting = None  # (key, mode)
        self.wait_since = 0
        self.wait_total = 0
        self.alive = True
        self.partitions = set()


class Simulator:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.locks: Dict[tuple, _Lock] = {}
        self.buffer: OrderedDict = OrderedDict()
        self.misses = 0
        self.events = []
        self.seq = 0
        self.now = 0
        self.history = []  # (time, tid, key, mode) at grant, for committed txs
        self._grants: Dict[int, list] = {}
        self.commit_order = []
        self.deadlocks = 0
        self.rng = random.Random(cfg.seed)

    # -- events
    def push(self, t, kind, payload):
        self.seq += 1
        heapq.heappush(self.events, (t, self.seq, kind, payload))

    # -- buffer
    def touch(self, key):
        """Reference a record; returns 1 on a miss."""
        if self.cfg.buffer == 0:
            self.misses += 1
            return 1
        if key in self.buffer:
            self.buffer.move_to_end(key)
            return 0
        self.misses += 1
        self.buffer[key] = True
        if len(self.buffer) > self.cfg.buffer:
            self.buffer.popitem(last=False)
        return 1

    # -- locking
    def request(self, tx: _Tx, key, mode):
        """True when granted now; otherwise the tx is queued."""
        lk = self.locks.setdefault(key, _Lock())
        cur = lk.holders.get(tx.tid)
        if cur == "X" or cur == mode:
            return True
        others = [m for t, m in lk.holders.items() if t != tx.tid]
        if cur == "S" and mode == "X":
            if not others:
                lk.holders[tx.tid] = "X"
                self._grants[tx.tid].append((self.now, key, "X"))
                return True
            lk.queue.appendleft((tx.tid, "X"))
        elif not lk.queue and all(_compatible(m, mode) for m in others):
            lk.holders[tx.tid] = mode
            tx.held.add(key)
            self._grants[tx.tid].append((self.now, key, mode))
            return True
        else:
            lk.queue.append((tx.tid, mode))
        tx.waiting = (key, mode)
        tx.wait_since = self.now
        return False

    def release_all(self, tx: _Tx, txs):
        woken = []
        for key in sorted(tx.held, key=repr):
            lk = self.locks.get(key)
            if lk is None:
                continue
            lk.holders.pop(tx.tid, None)
            woken += self._grant_waiters(key, lk, txs)
            if not lk.holders and not lk.queue:
                del self.locks[key]
        tx.held.clear()
        return woken

    def _grant_waiters(self, key, lk: _Lock, txs):
        woken = []
        while lk.queue:
            tid, mode = lk.queue[0]
            others = [m for t, m in lk.holders.items() if t != tid]
            if all(_compatible(m, mode) for m in others):
                lk.queue.popleft()
                lk.holders[tid] = mode
                w = txs[tid]
                w.held.add(key)
                w.waiting = None
                w.wait_total += self.now - w.wait_since
                self._grants[tid].append((self.now, key, mode))
                woken.append(w)
            else:
                break
        return woken

    def _waits_for(self, tx: _Tx):
        key, mode = tx.waiting
        lk = self.locks[key]
        out = [t for t, m in lk.holders.items() if t != tx.tid and not _compatible(m, mode)]
        for t, m in lk.queue:
            if t == tx.tid:
                break
            if not _compatible(m, mode):
                out.append(t)
        return out

    def find_cycle(self, txs):
        """Some wait-for cycle as a list of tids, or None."""
        graph = {t.tid: self._waits_for(t) for t in txs.values() if t.alive and t.waiting}
        color = {}
        for root in sorted(graph):
            if root in color:
                continue
            stack = [(root, iter(graph.get(root, ())))]
            path = [root]
            color[root] = 1
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    color[node] = 2
                    stack.pop()
                    path.pop()
                    continue
                if nxt not in graph:
                    continue
                c = color.get(nxt)
                if c == 1:
                    return path[path.index(nxt):]
                if c is None:
                    color[nxt] = 1
                    stack.append((nxt, iter(graph[nxt])))
                    path.append(nxt)
        return None


def simulate(txs: List[SimTx], cfg: SimConfig = SimConfig(), keep_history=False):
    """Run the transactions; returns SimMetrics (and the committed history if asked)."""
    if not txs:
        raise EmptyInput("no transactions to simulate")
    sim = Simulator(cfg)
    t0 = min(t.ts for t in txs)
    queues: Dict[int, deque] = {}
    for t in sorted(txs, key=lambda t: (t.worker, t.ts)):
        queues.setdefault(t.worker, deque()).append(t)
    live: Dict[int, _Tx] = {}
    latencies, waits, thinks = [], 0, []
    committed = aborted = distributed = 0
    busy_end = {}
    next_tid = [0]
    commits_at = []

    def start_next(worker, free_at):
        q = queues[worker]
        if not q:
            return
        spec = q.popleft()
        at = free_at
        if cfg.issue == "scheduled":
            at = max(free_at, (spec.ts - t0) * 1000)
        if worker in busy_end:
            thinks.append(at - busy_end[worker])
        sim.push(at, "start", (worker, spec))

    def proceed(tx: _Tx):
        """Acquire locks for the next op; schedule its completion when all are held."""
        while tx.next_op < len(tx.spec.ops):
            op = tx.spec.ops[tx.next_op]
            mode = "X" if op.write else "S"
            while tx.key_pos < len(op.keys):
                key = op.keys[tx.key_pos]
                if not sim.request(tx, key, mode):
                    resolve_deadlocks()
                    return
                tx.key_pos += 1
            missed = 0
            for key in op.keys:
                missed += sim.touch(key)
            cost = cfg.op_cost_us + missed * cfg.miss_cost_us
            if cfg.cost_jitter:
                cost = max(1, int(round(cost * (1 + sim.rng.uniform(-cfg.cost_jitter,
                                                                    cfg.cost_jitter)))))
            sim.push(sim.now + cost, "op_done", tx.tid)
            return
        finish(tx, True)

    def finish(tx: _Tx, ok):
        nonlocal committed, aborted, distributed, waits
        tx.alive = False
        if tx.waiting is not None:
            key, _ = tx.waiting
            lk = sim.locks.get(key)
            if lk is not None:
                lk.queue = deque(e for e in lk.queue if e[0] != tx.tid)
                woken_q = sim._grant_waiters(key, lk, live)
                for w in woken_q:
                    sim.push(sim.now, "resume", w.tid)
            tx.wait_total += sim.now - tx.wait_since
            tx.waiting = None
        woken = sim.release_all(tx, live)
        lat = sim.now - tx.start
        latencies.append((lat, ok))
        waits += tx.wait_total
        if len(tx.partitions) >= 2:
            distributed += 1
        if ok:
            committed += 1
            commits_at.append(sim.now)
            sim.commit_order.append(tx.tid)
            if keep_history:
                sim.history.extend((t, tx.tid, k, m) for t, k, m in sim._grants[tx.tid])
        else:
            aborted += 1
        sim._grants.pop(tx.tid, None)
        del live[tx.tid]
        busy_end[tx.spec.worker] = sim.now
        for w in woken:
            sim.push(sim.now, "resume", w.tid)
        start_next(tx.spec.worker, sim.now)
        if woken:
            resolve_deadlocks()

    def resolve_deadlocks():
        while True:
            cycle = sim.find_cycle(live)
            if not cycle:
                return
            victim = max((live[t] for t in cycle), key=lambda t: (t.start, t.tid))
            sim.deadlocks += 1
            finish(victim, False)

    for w in sorted(queues):
        start_next(w, 0)
    while sim.events:
        t, _, kind, payload = heapq.heappop(sim.events)
        sim.now = t
        if kind == "start":
            worker, spec = payload
            tid = next_tid[0]
            next_tid[0] += 1
            tx = _Tx(tid, spec, t)
            # a transaction is distributed by the keys it addresses, even if it aborts early
            tx.partitions = {partition_of(k, cfg.partitions) for op in spec.ops for k in op.keys}
            live[tid] = tx
            sim._grants[tid] = []
            proceed(tx)
        elif kind == "op_done":
            tx = live.get(payload)
            if tx is None:
                continue
            tx.next_op += 1
            tx.key_pos = 0
            proceed(tx)
        elif kind == "resume":
            tx = live.get(payload)
            if tx is None or tx.waiting is not None:
                continue
            tx.key_pos += 1
            proceed(tx)
    end = sim.now
    m = _metrics(txs, cfg, latencies, waits, committed, aborted, distributed, sim, end, thinks,
                 commits_at)
    if keep_history:
        return m, sim
    return m


def _metrics(txs, cfg, latencies, waits, committed, aborted, distributed, sim, end, thinks,
             commits_at):
    total = committed + aborted
    dur = max(end, 1) / 1e6
    ok_lat = sorted(l for l, ok in latencies if ok)
    all_lat = sum(l for l, _ in latencies)
    p95 = ok_lat[min(len(ok_lat) - 1, int(math.ceil(0.95 * len(ok_lat))) - 1)] if ok_lat else 0
    win_us = cfg.window * 1e6
    n_win = int(math.ceil(end / win_us)) if end else 0
    per = [0] * max(1, n_win)
    for t in commits_at:
        per[min(len(per) - 1, int(t // win_us))] += 1
    return SimMetrics(
        transactions=total,
        committed=committed,
        aborted=aborted,
        duration_s=dur,
        throughput=total / dur,
        success_tps=committed / dur,
        failure_tps=aborted / dur,
        mean_latency_ms=(sum(ok_lat) / len(ok_lat) / 1000.0) if ok_lat else 0.0,
        p95_latency_ms=p95 / 1000.0,
        lock_wait_share=(waits / all_lat) if all_lat else 0.0,
        deadlocks=sim.deadlocks,
        deadlocks_per_s=sim.deadlocks / dur,
        distributed_ratio=distributed / total if total else 0.0,
        buffer_misses=sim.misses,
        mean_think_ms=(sum(thinks) / len(thinks) / 1000.0) if thinks else 0.0,
        window_tps=[c / cfg.window for c in per],
    )


# ---------------------------------------------------------------------------
# comparison and report files


@dataclass
class Deviation:
    metric: str
    real: float
    synth: float
    deviation: float
    flagged: bool


def relative_deviation(real, synth):
    if real == 0:
        return 0.0 if synth == 0 else math.inf
    return (synth - real) / abs(real)


def compare(real: SimMetrics, synth: SimMetrics, threshold=0.10, metrics=COMPARED):
    if synth.transactions == 0:
        raise EmptyInput("synthetic run executed no transactions")
    out = []
    for name in metrics:
        r, s = float(getattr(real, name)), float(getattr(synth, name))
        d = relative_deviation(r, s)
        out.append(Deviation(name, r, s, d, abs(d) > threshold))
    return out


def format_deviation_table(rows: List[Deviation], threshold=0.10) -> str:
    lines = [f"{'metric':<20} {'real':>14} {'synthetic':>14} {'deviation':>10}  flag"]
    for r in rows:
        dev = "inf" if math.isinf(r.deviation) else f"{r.deviation * 100:+.2f}%"
        flag = f">{threshold * 100:.0f}%" if r.flagged else ""
        lines.append(f"{r.metric:<20} {r.real:>14.6g} {r.synth:>14.6g} {dev:>10}  {flag}")
    return "\n".join(lines) + "\n"


def dump_metrics(m: SimMetrics) -> str:
    lines = ["[metrics]"]
    for k, v in m.as_dict().items():
        if k == "window_tps":
            v = ",".join(repr(float(x)) for x in v)
        lines.append(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")
    return "\n".join(lines) + "\n"


def load_metrics(text) -> SimMetrics:
    m = SimMetrics()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("[") or line.startswith("#"):
            continue
        k, _, v = line.partition("=")
        if k == "window_tps":
            setattr(m, k, [float(x) for x in v.split(",") if x])
        elif k in ("transactions", "committed", "aborted", "deadlocks", "buffer_misses"):
            setattr(m, k, int(v))
        elif hasattr(m, k):
            setattr(m, k, float(v))
    return m
