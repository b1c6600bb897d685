"""Command-line entry point.

Production-side commands read raw tables and traces and write statistics
files; evaluation-side commands (gen-db, gen-workload, report) read only
those statistics and their own outputs.

Exit codes: 0 success, 1 input or usage error, 2 internal error. Every run
leaves a JSON manifest next to its main output, also on failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import resource
import sys
import time

from . import access, characteristics, dbgen, logic, model, sim, workload
from .pipeline import build_param_samplers
from .errors import WlsynthError

EVAL_COMMANDS = ("gen-db", "gen-workload", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    def __init__(self, command, args, inputs, outputs, path):
        self.path = path
        self.data = {
            "command": command,
            "config": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
            "inputs": {},
            "seed": getattr(args, "seed", None),
            "outputs": outputs,
            "status": "running",
        }
        # digests are taken before any processing starts
        for p in inputs:
            if p and os.path.isfile(p):
                self.data["inputs"][p] = _digest(p)
            elif p and os.path.isdir(p):
                self.data["inputs"][p] = {
                    f: _digest(os.path.join(p, f)) for f in sorted(os.listdir(p))
                    if os.path.isfile(os.path.join(p, f))}
            elif p:
                self.data["inputs"][p] = None
        self._t0 = time.perf_counter()

    def finish(self, status, error=None, extra=None):
        self.data["status"] = status
        if error:
            self.data["error"] = error
        if extra:
            self.data.update(extra)
        self.data["wall_clock_s"] = time.perf_counter() - self._t0
        self.data["peak_memory_kb"] = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        if self.path:
            d = os.path.dirname(self.path)
            if d:
                os.makedirs(d, exist_ok=True)
            with open(self.path, "w") as fh:
                json.dump(self.data, fh, indent=2, sort_keys=True, default=str)
                fh.write("\n")


def _read(path):
    with open(path) as fh:
        return fh.read()


def _schema(path):
    return model.parse_schema(_read(path)) if path else None


def _templates(path, schema):
    return model.parse_templates(_read(path), schema)


def _chars(path):
    return characteristics.load_characteristics(_read(path)) if path else None


def _open_out(path):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    return open(path, "w")


# ---------------------------------------------------------------------------
# commands


def cmd_extract_chars(args):
    schema = _schema(args.schema)
    chars = characteristics.extract_directory(args.data_dir, schema, args.parallelism)
    with _open_out(args.out) as fh:
        fh.write(characteristics.dump_characteristics(chars))
    return {"tables": len(chars)}


def cmd_extract_logic(args):
    schema = _schema(args.schema)
    tpls = _templates(args.templates, schema)
    cfg = logic.ExtractionConfig(K=args.K, N=args.N, max_deps=args.max_deps, min_pr=args.min_pr,
                                 seed=args.seed)
    with open(args.trace) as fh:
        reader = model.TraceReader(fh, "heavy", tpls)
        logics = logic.extract_all(reader, tpls, cfg)
    if not logics:
        raise WlsynthError("trace holds no instance of any given template")
    with _open_out(args.out) as fh:
        fh.write(logic.dump_logic([logics[t.name] for t in tpls if t.name in logics]))
    return {"malformed_records": reader.malformed, "templates": sorted(logics)}


def cmd_extract_dist(args):
    schema = _schema(args.schema)
    tpls = _templates(args.templates, schema)
    chars = _chars(args.chars)
    with open(args.trace) as fh, _open_out(args.out) as out:
        reader = model.TraceReader(fh, args.trace_mode, tpls)
        ex = access.extract_distributions(reader, tpls, out, schema, chars, args.window, args.H,
                                          args.I, args.range, keep_global=not args.no_global)
    return {"records": ex.records, "malformed_records": reader.malformed, "late_values": ex.late}


def cmd_gen_db(args):
    schema = _schema(args.schema)
    chars = _chars(args.chars)
    written = dbgen.generate_database(schema, chars, args.out_dir, args.seed, args.parallelism)
    return {"rows": written}


def cmd_gen_workload(args):
    schema = _schema(args.schema)
    tpls = _templates(args.templates, schema)
    chars = _chars(args.chars)
    logics = logic.load_logic(_read(args.logic)) if args.logic else {}
    if args.no_deps:
        logics = {k: v.without_dependencies() for k, v in logics.items()}
    dist = None
    if args.dist:
        with open(args.dist) as fh:
            dist = access.load_distributions(fh)
    model_name, rate = workload.parse_model(args.model)
    window = dist.window if dist else args.window
    cfg = workload.GeneratorConfig(workers=args.workers, model=model_name, rate=rate,
                                   duration=args.duration, seed=args.seed, dist_mode=args.mode,
                                   window=window, transactions=args.transactions)
    schedule = workload.MixSchedule.from_counts(dist.mix, window) if dist and dist.mix else None
    samplers = {}
    if dist is not None:
        samplers = build_param_samplers(dist, schema, chars, args.mode, args.seed, args.spool)
    if args.target != "sim":
        raise WlsynthError(f"unknown execution target {args.target!r}")
    rows = workload.DatabaseRows(schema, chars, args.db_seed) if schema and chars else workload.HashRows()
    result = workload.generate_workload(
        tpls, logics, samplers, schedule, cfg, lambda w: workload.SimTarget(rows),
        workload.column_generators(schema, chars, args.db_seed))
    with _open_out(args.emit_trace) as fh:
        model.write_trace(result.instances, fh)
    return {"transactions": len(result.instances), "aborted": result.aborted,
            "sampler_calls": result.counters.sampler_calls}


def cmd_simulate(args):
    schema = _schema(args.schema)
    tpls = _templates(args.templates, schema)
    cfg = sim.SimConfig(partitions=args.partitions, buffer=args.buffer, op_cost_us=args.op_cost,
                        issue=args.issue, window=args.window)
    with open(args.trace) as fh:
        reader = model.TraceReader(fh, "heavy", tpls)
        txs = sim.transactions_from_trace(reader, tpls, cfg)
    metrics = sim.simulate(txs, cfg)
    with _open_out(args.out) as fh:
        fh.write(sim.dump_metrics(metrics))
    return {"transactions": metrics.transactions, "malformed_records": reader.malformed}


def cmd_report(args):
    real = sim.load_metrics(_read(args.real))
    synth = sim.load_metrics(_read(args.synth))
    rows = sim.compare(real, synth, args.threshold)
    table = sim.format_deviation_table(rows, args.threshold)
    sys.stdout.write(table)
    if args.out:
        with _open_out(args.out) as fh:
            fh.write("[report]\n")
            for r in rows:
                fh.write(f"{r.metric} real={r.real!r} synth={r.synth!r} "
                         f"deviation={r.deviation!r} flagged={str(r.flagged).lower()}\n")
    return {"flagged": [r.metric for r in rows if r.flagged]}


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = _Parser(prog="wlsynth", description="Workload statistics extraction and synthesis.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--manifest", help="manifest path (default: <main output>.manifest.json)")
        return sp

    sp = add("extract-chars", cmd_extract_chars, "data characteristics from table files")
    sp.add_argument("--schema", required=True)
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--parallelism", type=int, default=1)

    sp = add("extract-logic", cmd_extract_logic, "transaction logic from a heavy trace")
    sp.add_argument("--templates", required=True)
    sp.add_argument("--schema")
    sp.add_argument("--trace", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--K", type=int, default=10_000)
    sp.add_argument("--N", type=int, default=10_000)
    sp.add_argument("--max-deps", type=int, default=10)
    sp.add_argument("--min-pr", type=float, default=0.01)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("extract-dist", cmd_extract_dist, "access distributions from a trace")
    sp.add_argument("--templates", required=True)
    sp.add_argument("--schema")
    sp.add_argument("--chars")
    sp.add_argument("--trace", required=True)
    sp.add_argument("--trace-mode", choices=("light", "heavy"), default="light")
    sp.add_argument("--out", required=True)
    sp.add_argument("--window", type=float, default=access.DEFAULT_WINDOW)
    sp.add_argument("--H", type=int, default=access.DEFAULT_H)
    sp.add_argument("--I", type=int, default=access.DEFAULT_I)
    sp.add_argument("--range", choices=("window", "domain"), default="window")
    sp.add_argument("--no-global", action="store_true", help="skip the whole-trace distribution")

    sp = add("gen-db", cmd_gen_db, "synthetic database from characteristics")
    sp.add_argument("--schema", required=True)
    sp.add_argument("--chars", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--parallelism", type=int, default=1)

    sp = add("gen-workload", cmd_gen_workload, "synthetic workload from statistics")
    sp.add_argument("--templates", required=True)
    sp.add_argument("--schema")
    sp.add_argument("--chars")
    sp.add_argument("--logic")
    sp.add_argument("--dist")
    sp.add_argument("--mode", choices=("s", "d", "c"), default="d")
    sp.add_argument("--model", default="loop", help="loop | tps:N | scale:X")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--duration", type=float, default=10.0)
    sp.add_argument("--transactions", type=int)
    sp.add_argument("--window", type=float, default=access.DEFAULT_WINDOW)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--db-seed", type=int, default=0, help="seed the database was generated with")
    sp.add_argument("--target", default="sim")
    sp.add_argument("--emit-trace", required=True)
    sp.add_argument("--spool", help="candidate spool file (continuity mode)")
    sp.add_argument("--no-deps", action="store_true", help="ignore parameter dependencies")

    sp = add("simulate", cmd_simulate, "run a heavy trace through the conflict simulator")
    sp.add_argument("--templates", required=True)
    sp.add_argument("--schema")
    sp.add_argument("--trace", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--partitions", type=int, default=5)
    sp.add_argument("--buffer", type=int, default=1000)
    sp.add_argument("--op-cost", type=int, default=1000, help="microseconds per operation")
    sp.add_argument("--issue", choices=("closed", "scheduled"), default="closed")
    sp.add_argument("--window", type=float, default=1.0)

    sp = add("report", cmd_report, "compare two simulator metric files")
    sp.add_argument("--real", required=True)
    sp.add_argument("--synth", required=True)
    sp.add_argument("--threshold", type=float, default=0.10)
    sp.add_argument("--out")
    return p


INPUT_FLAGS = ("schema", "templates", "trace", "chars", "logic", "dist", "data_dir", "real", "synth")
OUTPUT_FLAGS = ("out", "emit_trace", "out_dir", "spool")


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"wlsynth: error: {exc}\n")
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    inputs = [getattr(args, f, None) for f in INPUT_FLAGS]
    outputs = {f: getattr(args, f) for f in OUTPUT_FLAGS if getattr(args, f, None)}
    main_out = next(iter(outputs.values()), None)
    path = args.manifest
    if path is None and main_out:
        path = main_out.rstrip("/") + ".manifest.json"
    manifest = RunManifest(args.command, args, inputs, outputs, path)
    try:
        extra = args.func(args)
    except (WlsynthError, OSError, ValueError, KeyError) as exc:
        manifest.finish("failed", f"{type(exc).__name__}: {exc}")
        sys.stderr.write(f"wlsynth {args.command}: {exc}\n")
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        manifest.finish("crashed", f"{type(exc).__name__}: {exc}")
        sys.stderr.write(f"wlsynth {args.command}: internal error: {exc!r}\n")
        return 2
    manifest.finish("ok", extra=extra)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
