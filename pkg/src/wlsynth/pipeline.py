"""In-memory wiring of the whole flow: extract statistics, synthesize, simulate.

The statistics pass through their text formats (as they would between the
production and evaluation sides), so this exercises the same code paths as
the command-line tools.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Dict, Optional

from . import access, dbgen, logic, workload
from .model import to_light


class _SpoolView:
    def __init__(self, spool, key):
        self.spool, self.key = spool, key

    def get(self, w):
        return self.spool.get((self.key, w))


def build_param_samplers(dist: access.DistFile, schema, chars, mode, seed=0, spool_path=None):
    """ParamSampler per parameter, windows re-based to the start of the trace."""
    starts = [min(pd.windows) for pd in dist.params.values() if pd.windows]
    if dist.mix:
        starts.append(min(dist.mix))
    start = min(starts) if starts else 0
    key_domains = {}
    if schema is not None and chars:
        key_domains = dbgen.derive_key_domains(schema, {n: tc.size for n, tc in chars.items()})
    spool = None
    if mode == "c" and spool_path:
        if os.path.exists(spool_path):
            os.remove(spool_path)
        spool = access.CandidateSpool(spool_path)
    out = {}
    for n, (key, pd) in enumerate(sorted(dist.params.items())):
        info = pd.info
        cc = access._chars_col(chars, info.column)
        synth = None
        if info.kind == "key" and info.column:
            t, _, c = info.column.partition(".")
            d = key_domains.get(t, {}).get(c)
            synth = (d.lo, d.hi) if d else None
        vmap = access.value_map_for(info.column, info.dtype, info.kind, cc, synth,
                                    pd.observed_range(), seed)
        windows = {}
        if pd.windows:
            for w in range(start, max(pd.windows) + 1):
                windows[w - start] = pd.windows.get(w) or access.empty_sdist(dist.I, info.kind)
        candidates = None
        if mode == "c":
            cands = access.generate_candidate_windows(windows, vmap, seed=f"{seed}:{n}",
                                                      range_mode=pd.range_mode)
            if spool is not None:
                spool.write(((key, w), cw) for w, cw in cands)
                candidates = _SpoolView(spool, key)
            else:
                candidates = dict(cands)
        out[key] = access.ParamSampler(windows, vmap, mode, pd.range_mode, candidates,
                                       pd.global_sdist)
    return out


@dataclass
class Statistics:
    logic_text: str
    dist_text: str
    logics: Dict[str, logic.TransactionLogic] = field(default_factory=dict)
    dist: Optional[access.DistFile] = None


def extract_statistics(instances, templates, schema=None, chars=None,
                       config: logic.ExtractionConfig = logic.ExtractionConfig(),
                       window=access.DEFAULT_WINDOW, H=access.DEFAULT_H, I=access.DEFAULT_I,
                       range_mode="window") -> Statistics:
    instances = list(instances)
    tpls = {t.name: t for t in templates}
    logics = logic.extract_all(instances, templates, config)
    logic_text = logic.dump_logic([logics[n] for n in tpls if n in logics])
    buf = io.StringIO()
    light = (to_light(i, tpls[i.template]) for i in instances)
    access.extract_distributions(light, templates, buf, schema, chars, window, H, I, range_mode)
    dist_text = buf.getvalue()
    return Statistics(logic_text, dist_text, logic.load_logic(logic_text),
                      access.load_distributions(dist_text.splitlines()))


def synthesize(stats: Statistics, templates, schema, chars, config: workload.GeneratorConfig,
               deps=True, db_seed=0, spool_path=None) -> workload.GenerationResult:
    logics = stats.logics
    if not deps:
        logics = {k: v.without_dependencies() for k, v in logics.items()}
    dist = stats.dist
    schedule = workload.MixSchedule.from_counts(dist.mix, dist.window) if dist.mix else None
    samplers = build_param_samplers(dist, schema, chars, config.dist_mode, config.seed, spool_path)
    rows = workload.DatabaseRows(schema, chars, db_seed) if schema and chars else workload.HashRows()
    return workload.generate_workload(templates, logics, samplers, schedule, config,
                                      lambda w: workload.SimTarget(rows),
                                      workload.column_generators(schema, chars, db_seed))
