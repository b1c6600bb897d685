"""Data access distributions of pivotal parameters.

A window's distribution keeps the H hottest values with their frequencies and
spreads the remaining mass over I intervals (frequency plus distinct count).
Windowed lists of these capture drift over time; per-window repetition rates
against the previous window capture continuity.

Generation works in the synthetic index space of the bound column: HFI values
are pushed through the column generator, interval mass is spread over equal
slices of the index range, and candidate lists (continuity mode) are kept as
indices so interval membership is exact.
"""

from __future__ import annotations

import json
import math
import os
import pickle
import random
import zlib
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

from .dbgen import ColumnGenerator, identity_generator, make_column_generator
from .characteristics import ColumnCharacteristics
from .errors import EmptyValues, GrammarError
from .model import NUMERIC_TYPES, Ref

DEFAULT_H = 50
DEFAULT_I = 50
DEFAULT_WINDOW = 1.0


def _hash(value):
    return zlib.crc32(str(value).encode())


@dataclass
class Interval:
    freq: float = 0.0
    cdn: int = 0
    psi: float = 0.0


@dataclass
class SDist:
    hfi: list  # [(value, freq)], hottest first
    intervals: list  # [Interval] * I
    domain: Optional[tuple] = None  # (lo, hi) used for the interval division
    kind: str = "numeric"  # numeric | key | string
    count: int = 0
    kappa: float = 0.0

    @property
    def I(self):
        return len(self.intervals)

    @property
    def empty(self):
        return self.count == 0

    def interval_of(self, value):
        return interval_of(value, self.kind, self.domain, self.I)

    def total(self):
        return math.fsum(f for _, f in self.hfi) + math.fsum(iv.freq for iv in self.intervals)


def interval_of(value, kind, domain, I):
    if kind == "string" or not isinstance(value, (int, float)) or isinstance(value, bool):
        return _hash(value) % I
    lo, hi = domain
    if hi <= lo:
        return 0
    return min(I - 1, max(0, int((value - lo) / (hi - lo) * I)))


def empty_sdist(I, kind="numeric"):
    return SDist([], [Interval() for _ in range(I)], None, kind, 0)


def _sort_key(v):
    return (0, v, "") if isinstance(v, (int, float)) else (1, 0, str(v))


def _split(counter: Counter, H):
    """Top-H items by count, ties broken by ascending value."""
    ranked = sorted(counter.items(), key=lambda kv: (-kv[1], _sort_key(kv[0])))
    return ranked[:H], ranked[H:]


def build_sdist(values, H=DEFAULT_H, I=DEFAULT_I, domain=None, kind="numeric") -> SDist:
    counter = values if isinstance(values, Counter) else Counter(values)
    return _sdist_from_counter(counter, H, I, domain, kind)[0]


def _sdist_from_counter(counter: Counter, H, I, domain, kind):
    total = sum(counter.values())
    if total == 0:
        raise EmptyValues("no values to build a distribution from")
    if kind != "string" and domain is None:
        nums = [v for v in counter if isinstance(v, (int, float))]
        domain = (min(nums), max(nums)) if nums else None
        if domain is None:
            kind = "string"
    hot, rest = _split(counter, H)
    intervals = [Interval() for _ in range(I)]
    residual = [set() for _ in range(I)]
    for v, c in rest:
        i = interval_of(v, kind, domain, I)
        intervals[i].freq += c
        residual[i].add(v)
    for i, iv in enumerate(intervals):
        iv.freq /= total
        iv.cdn = len(residual[i])
    sd = SDist([(v, c / total) for v, c in hot], intervals, domain, kind, total)
    return sd, residual


# ---------------------------------------------------------------------------
# windowed distributions


@dataclass
class DDist:
    window: float
    windows: Dict[int, SDist] = field(default_factory=dict)  # absolute window index -> SDist
    late: int = 0

    @property
    def first(self):
        return min(self.windows) if self.windows else 0

    def ordered(self):
        return [self.windows[w] for w in sorted(self.windows)]


class CDist(DDist):
    """Windowed distributions whose windows carry kappa and per-interval psi."""


class WindowBuilder:
    """Streaming per-window builder for one parameter.

    Values arrive as (ts_ms, value) in roughly time order; one window of
    reordering slack is kept, anything older is dropped and counted in
    ``late``. Closed windows are yielded in order, gaps as empty windows.
    Only the previous window's HFI and residual sets survive a close, so
    memory does not grow with trace length.
    """

    def __init__(self, window=DEFAULT_WINDOW, H=DEFAULT_H, I=DEFAULT_I, kind="numeric",
                 range_mode="window", domain=None, continuity=True):
        if range_mode not in ("window", "domain"):
            raise ValueError("range_mode must be 'window' or 'domain'")
        if range_mode == "domain" and domain is None and kind != "string":
            raise ValueError("domain range mode needs a domain")
        self.window_ms = window * 1000.0
        self.window = window
        self.H, self.I, self.kind = H, I, kind
        self.range_mode, self.domain = range_mode, domain
        self.continuity = continuity
        self.open: Dict[int, Counter] = {}
        self.next_close = None
        self.late = 0
        self._prev_hfi = None
        self._prev_residual = None
        self._prev_w = None

    def window_of(self, ts):
        return int(math.floor(ts / self.window_ms))

    def feed(self, ts, value) -> List[Tuple[int, SDist]]:
        w = self.window_of(ts)
        if self.next_close is None:
            self.next_close = w
        if w < self.next_close:
            self.late += 1
            return []
        self.open.setdefault(w, Counter())[value] += 1
        out = []
        while self.next_close < w - 1:
            out.append(self._close(self.next_close))
        return out

    def finish(self) -> List[Tuple[int, SDist]]:
        out = []
        if self.open:
            last = max(self.open)
            while self.next_close <= last:
                out.append(self._close(self.next_close))
        return out

    def _close(self, w):
        counter = self.open.pop(w, None)
        self.next_close = w + 1
        if not counter:
            sd = empty_sdist(self.I, self.kind)
            self._prev_hfi, self._prev_residual, self._prev_w = None, None, w
            return w, sd
        domain = self.domain if self.range_mode == "domain" else None
        sd, residual = _sdist_from_counter(counter, self.H, self.I, domain, self.kind)
        if self.continuity:
            hot = {v for v, _ in sd.hfi}
            if self._prev_hfi is not None and self._prev_w == w - 1:
                sd.kappa = len(hot & self._prev_hfi) / len(hot) if hot else 0.0
                prev = self._prev_residual
                for i, iv in enumerate(sd.intervals):
                    if iv.cdn:
                        iv.psi = len(residual[i] & prev) / iv.cdn
            self._prev_hfi = hot
            self._prev_residual = set().union(*residual)
            self._prev_w = w
        return w, sd


def _run(points, builder, cls):
    dist = cls(builder.window)
    for ts, v in points:
        for w, sd in builder.feed(ts, v):
            dist.windows[w] = sd
    for w, sd in builder.finish():
        dist.windows[w] = sd
    dist.late = builder.late
    return dist


def build_ddist(points: Iterable, window=DEFAULT_WINDOW, H=DEFAULT_H, I=DEFAULT_I,
                kind="numeric", range_mode="window", domain=None) -> DDist:
    """Per-window distributions from (ts_ms, value) points."""
    b = WindowBuilder(window, H, I, kind, range_mode, domain, continuity=False)
    return _run(points, b, DDist)


def build_cdist(points: Iterable, window=DEFAULT_WINDOW, H=DEFAULT_H, I=DEFAULT_I,
                kind="numeric", range_mode="window", domain=None) -> CDist:
    b = WindowBuilder(window, H, I, kind, range_mode, domain, continuity=True)
    return _run(points, b, CDist)


def iter_cdist(points: Iterable, window=DEFAULT_WINDOW, H=DEFAULT_H, I=DEFAULT_I,
               kind="numeric", range_mode="window", domain=None) -> Iterator[Tuple[int, SDist]]:
    """Streaming variant of :func:`build_cdist`; yields windows as they close."""
    b = WindowBuilder(window, H, I, kind, range_mode, domain, continuity=True)
    for ts, v in points:
        yield from b.feed(ts, v)
    yield from b.finish()


# ---------------------------------------------------------------------------
# synthetic value space


@dataclass(frozen=True)
class ValueMap:
    """Maps trace (real) values to generator indices and indices to values.

    With ``real`` set (key columns) values are remapped affinely from the real
    key domain onto the generator's index range; otherwise the generator's own
    inverse is used.
    """

    gen: ColumnGenerator
    real: Optional[tuple] = None

    @property
    def n(self):
        return self.gen.n

    def to_index(self, value):
        if self.real is not None and isinstance(value, (int, float)) and not isinstance(value, bool):
            lo, hi = self.real
            if hi <= lo or self.n == 1:
                return 1
            k = int(math.floor((value - lo) * (self.n - 1) / (hi - lo) + 0.5)) + 1
            return min(max(k, 1), self.n)
        return self.gen.index_of(value)

    def value(self, index):
        return self.gen.value(index)

    def transform(self, value):
        return self.value(self.to_index(value))


def value_map_for(slot_column, dtype, kind, chars_col: Optional[ColumnCharacteristics],
                  synth_key_domain=None, observed=None, seed=0) -> ValueMap:
    """Value map for one parameter.

    Key columns use the synthetic key domain with the real one (from the
    characteristics) as remap source. Other columns use the generator built
    from their characteristics. Without characteristics the observed range
    stands in.
    """
    if kind == "key" and synth_key_domain is not None:
        gen = identity_generator(*synth_key_domain)
        real = (chars_col.min, chars_col.max) if chars_col is not None else observed
        return ValueMap(gen, tuple(real) if real else None)
    if chars_col is not None:
        return ValueMap(make_column_generator(chars_col, seed=seed))
    if observed is None:
        observed = (1, 1)
    lo, hi = observed
    if dtype in NUMERIC_TYPES and isinstance(lo, (int, float)):
        if dtype == "decimal":
            return ValueMap(ColumnGenerator(max(2, int(hi - lo) + 1), "numericLinear", lo, hi, "decimal"))
        return ValueMap(identity_generator(int(lo), int(hi)))
    cc = ColumnCharacteristics(slot_column or "-", "varchar", 1, 16, 1000)
    return ValueMap(make_column_generator(cc, seed=seed))


def transform_hfi(sd: SDist, mapping, to_index=None) -> SDist:
    """Copy of ``sd`` whose HFI values live in the synthetic domain.

    ``mapping`` is a ValueMap or a ColumnGenerator; ``to_index`` overrides the
    value-to-index heuristic.
    """
    vmap = mapping if isinstance(mapping, ValueMap) else ValueMap(mapping)
    pick = to_index or vmap.to_index
    return replace(sd, hfi=[(vmap.value(pick(v)), f) for v, f in sd.hfi],
                   intervals=[replace(iv) for iv in sd.intervals])


# ---------------------------------------------------------------------------
# sampling


class IndexSpace:
    """Index range [lo, hi] split into I equal slices."""

    def __init__(self, lo, hi, I):
        self.lo, self.hi, self.I = int(lo), int(max(lo, hi)), I
        self.avg = (self.hi - self.lo + 1) / I

    def min_idx(self, i):
        return self.lo + int(math.floor(self.avg * i))

    def bounds(self, i):
        lo = self.min_idx(i)
        hi = self.min_idx(i + 1) - 1 if i < self.I - 1 else self.hi
        return lo, max(lo, hi)

    def interval_of(self, index):
        if index < self.lo or index > self.hi:
            return None
        return min(self.I - 1, max(0, int((index - self.lo) / self.avg)))


@dataclass
class CandidateWindow:
    phi: list  # HFI candidate indices
    omega: list  # per interval: candidate indices
    gamma: list  # per interval: carried-over count
    C: list  # per interval: target cardinality


class SamplerState:
    """Cumulative array over [HFI..., intervals...] plus interval index generators."""

    def __init__(self, sd: SDist, vmap: ValueMap, space: Optional[IndexSpace] = None,
                 candidates: Optional[CandidateWindow] = None):
        if sd.empty:
            raise EmptyValues("cannot sample from an empty distribution")
        self.vmap = vmap
        self.sd = sd
        self.space = space or IndexSpace(1, vmap.n, sd.I)
        self.candidates = candidates
        if candidates is not None:
            self.hfi_values = [vmap.value(k) for k in candidates.phi]
            # too few candidates: the real hot values fill the missing slots
            for v, _ in sd.hfi[len(self.hfi_values):]:
                self.hfi_values.append(vmap.transform(v))
        else:
            self.hfi_values = [vmap.transform(v) for v, _ in sd.hfi]
        weights = [f for _, f in sd.hfi] + [iv.freq for iv in sd.intervals]
        total = math.fsum(weights)
        cum, acc = [], 0.0
        for w in weights:
            acc += w / total
            cum.append(acc)
        cum[-1] = 1.0
        self.cum = cum
        self.H = len(sd.hfi)
        self.cdn = [max(1, iv.cdn) for iv in sd.intervals]
        self.comparisons = 0

    def index_generator(self, i):
        """(cdn_i, cdn_avg, minIdx_i) of interval ``i``."""
        return self.cdn[i], self.space.avg, self.space.min_idx(i)

    def slot(self, u):
        """Smallest slot k with u < cum[k] (binary search, comparisons counted)."""
        lo, hi = 0, len(self.cum) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            self.comparisons += 1
            if u < self.cum[mid]:
                hi = mid
            else:
                lo = mid + 1
        return lo

    def interval_index(self, i, r):
        cdn, avg, min_idx = self.index_generator(i)
        # slices of fractional width can be one index short of avg
        return min(int(math.floor(r / cdn * avg)) + min_idx, self.space.bounds(i)[1])

    def sample(self, rng: random.Random, u=None):
        k = self.slot(rng.random() if u is None else u)
        if k < self.H:
            return self.hfi_values[k]
        i = k - self.H
        if self.candidates is not None and self.candidates.omega[i]:
            return self.vmap.value(rng.choice(self.candidates.omega[i]))
        return self.vmap.value(self.interval_index(i, rng.randrange(self.cdn[i])))


def build_sampler(sd: SDist, mapping, space=None, candidates=None) -> SamplerState:
    vmap = mapping if isinstance(mapping, ValueMap) else ValueMap(mapping)
    return SamplerState(sd, vmap, space, candidates)


def sample(state: SamplerState, u, rng: Optional[random.Random] = None):
    return state.sample(rng or random.Random(0), u)


def window_space(sd: SDist, vmap: ValueMap, range_mode="window") -> IndexSpace:
    """Index range a window's intervals are spread over."""
    if range_mode == "window" and sd.kind != "string" and sd.domain is not None:
        a, b = vmap.to_index(sd.domain[0]), vmap.to_index(sd.domain[1])
        return IndexSpace(min(a, b), max(a, b), sd.I)
    return IndexSpace(1, vmap.n, sd.I)


# ---------------------------------------------------------------------------
# candidate generation


def _fresh(lo, hi, k, exclude, rng: random.Random):
    if k <= 0 or hi < lo:
        return []
    size = hi - lo + 1
    if size <= 4 * (k + len(exclude)) + 1024:
        pool = [x for x in range(lo, hi + 1) if x not in exclude]
        return rng.sample(pool, min(k, len(pool)))
    out, seen = [], set()
    while len(out) < k:
        x = rng.randint(lo, hi)
        if x not in exclude and x not in seen:
            seen.add(x)
            out.append(x)
    return out


def carry_target(C, psi):
    """Repeated candidates kept for an interval: smallest count reaching C*psi."""
    return int(math.ceil(round(C * psi, 9)))


def gen_candidates(prev: Optional[CandidateWindow], kappa, psi, C, H, I, space: IndexSpace,
                   rng: random.Random, hfi_indices=None) -> CandidateWindow:
    """Candidate HFI and interval lists for one window.

    Without a predecessor the HFI come from ``hfi_indices`` (or fresh draws)
    and every interval is generated fresh.
    """
    if prev is None:
        phi = list(dict.fromkeys(hfi_indices or []))[:H]
        phi += _fresh(space.lo, space.hi, H - len(phi), set(phi), rng)
        omega = []
        used = set(phi)
        for i in range(I):
            lo, hi = space.bounds(i)
            vals = _fresh(lo, hi, C[i], used, rng)
            used.update(vals)
            omega.append(vals)
        return CandidateWindow(phi, omega, [0] * I, list(C))
    prev_all = set(prev.phi)
    for lst in prev.omega:
        prev_all.update(lst)
    if hfi_indices:
        # mapped hot values already repeat at the observed rate, and parameters
        # bound to the same column keep sharing them
        phi = list(dict.fromkeys(hfi_indices))[:H]
    else:
        keep = min(len(prev.phi), int(round(H * kappa)))
        phi = rng.sample(prev.phi, keep)
    phi += _fresh(space.lo, space.hi, H - len(phi), prev_all | set(phi), rng)
    if len(phi) < H:  # narrow domain: the previous window may be reused
        phi += _fresh(space.lo, space.hi, H - len(phi), set(phi), rng)
    gamma = [0] * I
    omega = [[] for _ in range(I)]
    targets = [carry_target(C[i], psi[i]) for i in range(I)]
    pool = [p for lst in prev.omega for p in lst]
    rng.shuffle(pool)
    taken = set(phi)
    for p in pool:
        i = space.interval_of(p)
        if i is not None and gamma[i] < targets[i] and gamma[i] < C[i] and p not in taken:
            omega[i].append(p)
            gamma[i] += 1
            taken.add(p)
    exclude = prev_all | taken
    for i in range(I):
        lo, hi = space.bounds(i)
        vals = _fresh(lo, hi, C[i] - gamma[i], exclude, rng)
        exclude.update(vals)
        omega[i].extend(vals)
    return CandidateWindow(phi, omega, gamma, list(C))


def generate_candidate_windows(windows: Dict[int, SDist], vmap: ValueMap, seed=0,
                               range_mode="window") -> Iterator[Tuple[int, CandidateWindow]]:
    """Candidate windows for a whole windowed distribution, in window order."""
    rng = random.Random(f"candidates:{seed}")
    prev, prev_w = None, None
    for w in sorted(windows):
        sd = windows[w]
        if sd.empty:
            prev, prev_w = None, None
            continue
        space = window_space(sd, vmap, range_mode)
        C = [iv.cdn for iv in sd.intervals]
        link = prev if prev_w == w - 1 else None
        hfi = [vmap.to_index(v) for v, _ in sd.hfi]
        cw = gen_candidates(link, sd.kappa, [iv.psi for iv in sd.intervals], C, len(sd.hfi),
                            sd.I, space, rng, hfi_indices=hfi)
        yield w, cw
        prev, prev_w = cw, w


class CandidateSpool:
    """Append-only on-disk store of candidate windows keyed by (param, window)."""

    def __init__(self, path):
        self.path = path
        self.offsets: Dict[tuple, int] = {}
        if os.path.exists(path):
            with open(path, "rb") as fh:
                while True:
                    pos = fh.tell()
                    try:
                        key, _ = pickle.load(fh)
                    except EOFError:
                        break
                    self.offsets[key] = pos

    def write(self, items: Iterable[Tuple[tuple, CandidateWindow]]):
        with open(self.path, "ab") as fh:
            for key, cw in items:
                self.offsets[key] = fh.tell()
                pickle.dump((key, cw), fh, protocol=pickle.HIGHEST_PROTOCOL)

    def get(self, key) -> Optional[CandidateWindow]:
        pos = self.offsets.get(key)
        if pos is None:
            return None
        with open(self.path, "rb") as fh:
            fh.seek(pos)
            return pickle.load(fh)[1]


# ---------------------------------------------------------------------------
# per-parameter sampling over time


class ParamSampler:
    """Sampler for one parameter in S, D or C mode.

    ``t`` is the generation window ordinal (0-based from the start of the
    run); windows past the end wrap around, empty windows fall back to the
    closest earlier non-empty one.
    """

    def __init__(self, windows: Dict[int, SDist], vmap: ValueMap, mode="d",
                 range_mode="window", candidates=None, global_sdist: Optional[SDist] = None):
        self.mode = mode
        self.vmap = vmap
        self.range_mode = range_mode
        self.candidates = candidates  # dict or CandidateSpool keyed by window, or None
        self.order = sorted(windows)
        self.windows = windows
        self.global_sdist = global_sdist
        self._cache: Dict[int, SamplerState] = {}
        self.calls = 0

    def _window(self, t):
        if not self.order:
            return None
        k = t % len(self.order)
        for step in range(len(self.order)):
            w = self.order[(k - step) % len(self.order)]
            if not self.windows[w].empty:
                return w
        return None

    def state(self, t) -> Optional[SamplerState]:
        if self.mode == "s":
            t = -1
        st = self._cache.get(t)
        if st is not None:
            return st
        if self.mode == "s":
            sd = self.global_sdist
            if sd is None or sd.empty:
                return None
            st = SamplerState(sd, self.vmap, IndexSpace(1, self.vmap.n, sd.I))
        else:
            w = self._window(t)
            if w is None:
                return None
            sd = self.windows[w]
            cw = None
            if self.mode == "c" and self.candidates is not None:
                cw = self.candidates.get(w)
            st = SamplerState(sd, self.vmap, window_space(sd, self.vmap, self.range_mode), cw)
        if len(self._cache) > 4:
            self._cache.clear()
        self._cache[t] = st
        return st

    def sample(self, t, rng: random.Random):
        self.calls += 1
        st = self.state(t)
        if st is None:
            return self.vmap.value(rng.randint(1, self.vmap.n))
        return st.sample(rng)


# ---------------------------------------------------------------------------
# trace -> per-parameter points


@dataclass(frozen=True)
class ParamInfo:
    template: str
    ref: Ref
    column: Optional[str]
    dtype: str
    kind: str  # numeric | key | string

    @property
    def key(self):
        return (self.template, self.ref)


def param_infos(templates, schema=None) -> Dict[tuple, ParamInfo]:
    out = {}
    for tpl in templates:
        for op in tpl.ops:
            for j, slot in enumerate(op.params, 1):
                if not slot.pivotal:
                    continue
                kind = "string" if slot.dtype == "varchar" else "numeric"
                if schema is not None and slot.column and schema.has_table(slot.table):
                    if schema.table(slot.table).is_key_column(slot.column.partition(".")[2]):
                        kind = "key"
                elif slot.column is None and slot.dtype in NUMERIC_TYPES:
                    kind = "numeric"
                info = ParamInfo(tpl.name, Ref("p", op.index, j), slot.column, slot.dtype, kind)
                out[info.key] = info
    return out


@dataclass
class MixWindow:
    counts: Dict[str, int] = field(default_factory=dict)

    @property
    def total(self):
        return sum(self.counts.values())


class DistExtractor:
    """Single streaming pass over a light trace.

    Feeds one WindowBuilder per pivotal parameter, counts the transaction mix
    per window and optionally accumulates a whole-trace distribution per
    parameter (the static view).
    """

    def __init__(self, templates, schema=None, chars=None, window=DEFAULT_WINDOW, H=DEFAULT_H,
                 I=DEFAULT_I, range_mode="window", keep_global=True):
        self.infos = param_infos(templates, schema)
        self.window, self.H, self.I = window, H, I
        self.range_mode = range_mode
        self.builders: Dict[tuple, WindowBuilder] = {}
        for key, info in self.infos.items():
            domain = None
            cc = _chars_col(chars, info.column)
            if cc is not None and info.kind != "string":
                domain = (cc.min, cc.max)
            mode = range_mode if (domain is not None or info.kind == "string") else "window"
            self.builders[key] = WindowBuilder(window, H, I, info.kind, mode, domain, True)
        self.global_counts: Optional[Dict[tuple, Counter]] = (
            {k: Counter() for k in self.infos} if keep_global else None)
        self.mix: Dict[int, MixWindow] = {}
        self.mix_flushed = -math.inf
        self.records = 0

    def feed(self, rec) -> List[Tuple[tuple, int, SDist]]:
        self.records += 1
        w = int(math.floor(rec.ts / (self.window * 1000.0)))
        if w > self.mix_flushed:  # late records of flushed windows are not counted
            counts = self.mix.setdefault(w, MixWindow()).counts
            counts[rec.template] = counts.get(rec.template, 0) + 1
        out = []
        for op in rec.ops:
            values = op.values if hasattr(op, "values") else tuple(enumerate(op.params, 1))
            for j, v in values:
                key = (rec.template, Ref("p", op.op, j))
                b = self.builders.get(key)
                if b is None or v is None:
                    continue
                if self.global_counts is not None:
                    self.global_counts[key][v] += 1
                for w2, sd in b.feed(rec.ts, v):
                    out.append((key, w2, sd))
        return out

    def finish(self) -> List[Tuple[tuple, int, SDist]]:
        out = []
        for key, b in self.builders.items():
            for w, sd in b.finish():
                out.append((key, w, sd))
        return out

    def global_sdist(self, key) -> Optional[SDist]:
        c = self.global_counts.get(key) if self.global_counts else None
        if not c:
            return None
        info = self.infos[key]
        b = self.builders[key]
        domain = b.domain
        return build_sdist(c, self.H, self.I, domain, info.kind)

    @property
    def late(self):
        return sum(b.late for b in self.builders.values())

    def closed_mix(self, final=False) -> Dict[int, MixWindow]:
        """Pop mix windows that can no longer change (one window of lag)."""
        if not self.mix:
            return {}
        last = max(self.mix)
        done = sorted(w for w in self.mix if final or w < last - 1)
        if done:
            self.mix_flushed = max(self.mix_flushed, done[-1])
        return {w: self.mix.pop(w) for w in done}


def _chars_col(chars, column):
    if not chars or not column:
        return None
    t, _, c = column.partition(".")
    tc = chars.get(t)
    return tc.columns.get(c) if tc is not None else None


# ---------------------------------------------------------------------------
# stats file


def _jv(v):
    return json.dumps(v, separators=(",", ":"))


def _fmt(x):
    return repr(float(x)) if not float(x).is_integer() else str(int(x))


def format_sdist_lines(sd: SDist):
    lines = []
    for v, f in sd.hfi:
        lines.append(f"hfi {_jv(v)} {f!r}")
    for i, iv in enumerate(sd.intervals):
        if iv.freq or iv.cdn:
            lines.append(f"interval {i} {iv.freq!r} {iv.cdn} {iv.psi!r}")
    return lines


class DistWriter:
    """Streams a distribution stats file: header lines, then windows as they close."""

    def __init__(self, fh, extractor: DistExtractor):
        self.fh = fh
        self.ids = {}
        ex = extractor
        fh.write(f"# window={ex.window} H={ex.H} I={ex.I} range={ex.range_mode}\n")
        for n, (key, info) in enumerate(sorted(ex.infos.items(), key=lambda kv: (kv[0][0], kv[0][1])), 1):
            self.ids[key] = n
            b = ex.builders[key]
            dom = f" domain={_jv(list(b.domain))}" if b.domain is not None else ""
            fh.write(f"param {n} {info.template} {info.ref} kind={info.kind} "
                     f"column={info.column or '-'} type={info.dtype} range={b.range_mode}{dom}\n")

    def window(self, key, w, sd: SDist):
        head = f"window {self.ids[key]} {w} count={sd.count} kappa={sd.kappa!r}"
        if sd.domain is not None and sd.kind != "string":
            head += f" lo={_jv(sd.domain[0])} hi={_jv(sd.domain[1])}"
        self.fh.write(head + "\n")
        for line in format_sdist_lines(sd):
            self.fh.write(line + "\n")

    def global_(self, key, sd: Optional[SDist]):
        if sd is None:
            return
        head = f"global {self.ids[key]} count={sd.count}"
        if sd.domain is not None and sd.kind != "string":
            head += f" lo={_jv(sd.domain[0])} hi={_jv(sd.domain[1])}"
        self.fh.write(head + "\n")
        for line in format_sdist_lines(sd):
            self.fh.write(line + "\n")

    def mix(self, mix: Dict[int, MixWindow]):
        for w in sorted(mix):
            counts = " ".join(f"{k}={v}" for k, v in sorted(mix[w].counts.items()))
            self.fh.write(f"mix {w} {counts}\n")


def extract_distributions(records: Iterable, templates, fh, schema=None, chars=None,
                          window=DEFAULT_WINDOW, H=DEFAULT_H, I=DEFAULT_I, range_mode="window",
                          keep_global=True) -> DistExtractor:
    """Stream a light (or heavy) trace into a distribution stats file."""
    ex = DistExtractor(templates, schema, chars, window, H, I, range_mode, keep_global)
    writer = DistWriter(fh, ex)
    for rec in records:
        for key, w, sd in ex.feed(rec):
            writer.window(key, w, sd)
        if len(ex.mix) > 2:
            writer.mix(ex.closed_mix())
    for key, w, sd in ex.finish():
        writer.window(key, w, sd)
    if keep_global:
        for key in ex.infos:
            writer.global_(key, ex.global_sdist(key))
    writer.mix(ex.closed_mix(final=True))
    return ex


@dataclass
class ParamDist:
    info: ParamInfo
    range_mode: str
    domain: Optional[tuple]
    windows: Dict[int, SDist] = field(default_factory=dict)
    global_sdist: Optional[SDist] = None

    def observed_range(self):
        sds = [sd for sd in self.windows.values() if not sd.empty and sd.domain is not None]
        if self.global_sdist is not None and self.global_sdist.domain is not None:
            sds.append(self.global_sdist)
        if not sds:
            return self.domain
        return (min(sd.domain[0] for sd in sds), max(sd.domain[1] for sd in sds))


@dataclass
class DistFile:
    window: float
    H: int
    I: int
    params: Dict[tuple, ParamDist] = field(default_factory=dict)
    mix: Dict[int, Dict[str, int]] = field(default_factory=dict)


def load_distributions(lines: Iterable[str]) -> DistFile:
    out = DistFile(DEFAULT_WINDOW, DEFAULT_H, DEFAULT_I)
    by_id: Dict[int, ParamDist] = {}
    cur: Optional[SDist] = None
    for line_no, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        try:
            if line.startswith("#"):
                kv = dict(w.split("=", 1) for w in line[1:].split() if "=" in w)
                if "window" in kv:
                    out.window, out.H, out.I = float(kv["window"]), int(kv["H"]), int(kv["I"])
                continue
            word, rest = line.split(" ", 1)
            if word == "param":
                parts = rest.split(" ")
                pid, tpl, ref = int(parts[0]), parts[1], Ref.parse(parts[2])
                kv = dict(p.split("=", 1) for p in parts[3:])
                column = None if kv["column"] == "-" else kv["column"]
                info = ParamInfo(tpl, ref, column, kv["type"], kv["kind"])
                dom = tuple(json.loads(kv["domain"])) if "domain" in kv else None
                pd = ParamDist(info, kv["range"], dom)
                by_id[pid] = pd
                out.params[info.key] = pd
            elif word in ("window", "global"):
                parts = rest.split(" ")
                pd = by_id[int(parts[0])]
                k = 2 if word == "window" else 1
                kv = dict(p.split("=", 1) for p in parts[k:])
                dom = (json.loads(kv["lo"]), json.loads(kv["hi"])) if "lo" in kv else None
                if pd.info.kind == "string":
                    dom = None
                cur = SDist([], [Interval() for _ in range(out.I)], dom, pd.info.kind,
                            int(kv["count"]), float(kv.get("kappa", 0.0)))
                if word == "window":
                    pd.windows[int(parts[1])] = cur
                else:
                    pd.global_sdist = cur
            elif word == "hfi":
                val, end = json.JSONDecoder().raw_decode(rest)
                cur.hfi.append((val, float(rest[end:])))
            elif word == "interval":
                i, f, c, psi = rest.split()
                cur.intervals[int(i)] = Interval(float(f), int(c), float(psi))
            elif word == "mix":
                parts = rest.split(" ")
                out.mix[int(parts[0])] = {k: int(v) for k, v in (p.split("=", 1) for p in parts[1:])}
            else:
                raise ValueError(f"unknown entry {word!r}")
        except (ValueError, KeyError, IndexError, AttributeError) as exc:
            raise GrammarError(f"bad distribution entry ({exc})", line_no) from None
    return out
