import random
from collections import Counter

import pytest

from wlsynth.errors import MissingSource
from wlsynth.logic import DepItem, ParamLogic, StructureInfo, TransactionLogic, extract_transaction_logic
from wlsynth.model import P, R, parse_templates
from wlsynth.samples import planted_logic
from wlsynth.workload import (
    Counters,
    GeneratorConfig,
    HashRows,
    InstanceContext,
    MixSchedule,
    Pacer,
    SimTarget,
    execute_transaction,
    generate_workload,
    instantiate_param,
    loop_count,
    pace,
    parse_model,
    pick_transaction,
)

from conftest import chain_setup, planted_instances

ONE = parse_templates("""
TEMPLATE One {
    select a from A where k = ? -> params(key A.k:integer) returns(A.a:integer) filter(pk);
}
""")[0]

TWO = parse_templates("""
TEMPLATE Two {
    select a from A where k = ? -> params(key A.k:integer) returns(A.a:integer) filter(pk);
    update B set b = ? where k = ? -> params(val B.b:integer, key B.k:integer);
}
""")[0]


def test_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(model="tps")
    with pytest.raises(ValueError):
        GeneratorConfig(model="loop", rate=3.0)
    with pytest.raises(ValueError):
        GeneratorConfig(dist_mode="x")
    assert parse_model("tps:100") == ("tps", 100.0)
    assert parse_model("scale:2") == ("scale", 2.0)
    with pytest.raises(ValueError):
        parse_model("tps")


def test_single_type_mix():
    sched = MixSchedule(1.0, [{"A": 1.0}], [10.0])
    rng = random.Random(0)
    assert {pick_transaction(sched, t, rng) for t in range(100)} == {"A"}


def test_tpcc_like_mix_frequencies():
    props = {"A": 0.45, "B": 0.43, "C": 0.04, "D": 0.04, "E": 0.04}
    sched = MixSchedule(1.0, [props], [0.0])
    rng = random.Random(1)
    n = 100_000
    got = Counter(pick_transaction(sched, 0, rng) for _ in range(n))
    for k, p in props.items():
        assert got[k] / n == pytest.approx(p, abs=0.01)


def test_schedule_wraps_past_end():
    sched = MixSchedule.from_counts({3: {"A": 1}, 4: {"B": 3, "A": 1}, 6: {"B": 2}})
    assert len(sched) == 4
    assert sched.at(0) == {"A": 1.0}
    assert sched.at(1) == {"A": 0.25, "B": 0.75}
    assert sched.at(2) == sched.at(1)  # empty window keeps the last mix
    assert sched.at(5) == sched.at(1)
    assert sched.observed(2) == 0.0


def test_no_await_has_no_think_time():
    cfg = GeneratorConfig(workers=4)
    assert pace(cfg, None, 0, 0.005) == 0.0
    assert Pacer(cfg).think(1.23) == 0.0


def test_think_time_for_fixed_rate():
    cfg = GeneratorConfig(workers=10, model="tps", rate=100.0, duration=60.0)
    assert pace(cfg, None, 0, 0.005) == pytest.approx(0.095)
    pacer = Pacer(cfg)
    clock, thinks = pacer.next_issue(), []
    while True:
        clock += 0.005  # service time
        think = pacer.think(clock)
        if pacer.due >= cfg.duration:
            break
        thinks.append(think)
        clock += think
    assert sum(thinks) / len(thinks) == pytest.approx(0.095, abs=1e-6)


def test_scale_factor_target():
    sched = MixSchedule(1.0, [{"A": 1.0}], [50.0])
    cfg = GeneratorConfig(workers=1, model="scale", rate=2.0)
    assert Pacer(cfg, sched).rate(0) == 100.0


def _logic(ref, *deps, pd1=None):
    return TransactionLogic("Two", StructureInfo(), {ref: ParamLogic(pd1=pd1, pd2=list(deps))})


def _ctx_after_first(value, rows=((7,),)):
    ctx = InstanceContext()
    ctx.params[P(1, 1)] = value
    ctx.rows[1] = list(rows)
    ctx.executed.add(1)
    ctx.current_op = 2
    return ctx


def test_between_dependency_adds_delta():
    _, tpls, _ = chain_setup()
    txc = tpls["TXC"]
    ctx = InstanceContext(current_op=1)
    ctx.params[P(1, 1)] = 100
    logic = planted_logic()["TXC"]
    v = instantiate_param(P(1, 2), txc.op(1).params[1], txc, logic, lambda: -1, ctx, random.Random(0))
    assert v == 108


def test_certain_equality_never_samples():
    logic = _logic(P(2, 2), DepItem(P(2, 2), "ER", 1.0, P(1, 1)))
    counters = Counters()
    rng = random.Random(0)
    slot = TWO.op(2).params[1]
    vals = {instantiate_param(P(2, 2), slot, TWO, logic, lambda: -1, _ctx_after_first(42), rng, counters)
            for _ in range(1000)}
    assert vals == {42}
    assert counters.sampler_calls == 0


def test_partial_equality_rate():
    logic = _logic(P(2, 2), DepItem(P(2, 2), "ER", 0.99, P(1, 1)))
    rng = random.Random(3)
    slot = TWO.op(2).params[1]
    ctx = _ctx_after_first(42)
    n = 100_000
    vals = [instantiate_param(P(2, 2), slot, TWO, logic, lambda: rng.randint(1000, 2000), ctx, rng)
            for _ in range(n)]
    assert vals.count(42) / n == pytest.approx(0.99, abs=0.005)
    assert all(1000 <= v <= 2000 for v in vals if v != 42)


def test_linear_and_inclusive_dependencies():
    slot = TWO.op(2).params[0]
    rng = random.Random(0)
    lr = _logic(P(2, 1), DepItem(P(2, 1), "LR", 1.0, P(1, 1), a=2, b=1))
    assert instantiate_param(P(2, 1), slot, TWO, lr, lambda: -1, _ctx_after_first(5), rng) == 11
    ir = _logic(P(2, 1), DepItem(P(2, 1), "IR", 1.0, R(1, 1)))
    ctx = _ctx_after_first(5, rows=((3,), (4,)))
    assert {instantiate_param(P(2, 1), slot, TWO, ir, lambda: -1, ctx, rng) for _ in range(50)} == {3, 4}


def test_inclusive_dependency_without_rows_falls_back():
    slot = TWO.op(2).params[0]
    ir = _logic(P(2, 1), DepItem(P(2, 1), "IR", 1.0, R(1, 1)))
    ctx = _ctx_after_first(5, rows=())
    assert instantiate_param(P(2, 1), slot, TWO, ir, lambda: -1, ctx, random.Random(0)) == -1


def test_missing_source_raises():
    slot = TWO.op(2).params[0]
    bad = _logic(P(2, 1), DepItem(P(2, 1), "ER", 1.0, P(3, 1)))
    with pytest.raises(MissingSource):
        instantiate_param(P(2, 1), slot, TWO, bad, lambda: -1, _ctx_after_first(5), random.Random(0))


def test_loop_count_preserves_mean():
    rng = random.Random(0)
    n = 100_000
    assert sum(loop_count(2.3, rng) for _ in range(n)) / n == pytest.approx(2.3, abs=0.01)
    assert {loop_count(4.0, rng) for _ in range(100)} == {4}


def test_txc_branch_and_loop_rates():
    _, tpls, _ = chain_setup()
    logic = planted_logic()["TXC"]
    target = SimTarget()
    rng = random.Random(8)
    n = 10_000
    for k in range(n):
        out = execute_transaction(tpls["TXC"], logic, lambda ref, slot: (lambda: rng.randint(1, 20)),
                                  target, rng, ts=k)
        assert out.committed
    first_alt = sum(any(o.op == 2 for o in inst.ops) for inst in target.instances)
    runs = [sum(o.op == 4 for o in inst.ops) for inst in target.instances]
    assert first_alt / n == pytest.approx(0.40, abs=0.01)
    assert sum(runs) / n == pytest.approx(10.0, abs=0.2)
    inst = target.instances[0]
    loop = [o.params for o in inst.ops if o.op == 4]
    assert all(b[0] == a[0] and b[1] == a[1] + 1 for a, b in zip(loop, loop[1:]))


def test_plain_template_submits_once():
    target = SimTarget()
    out = execute_transaction(ONE, None, lambda ref, slot: (lambda: 1), target, random.Random(0))
    assert out.committed and out.ops == 1
    assert target.submits == 1


def test_target_failure_is_an_abort():
    class Failing(SimTarget):
        def submit(self, op, ordinal, params):
            raise RuntimeError("lock timeout")

    target = Failing()
    out = execute_transaction(ONE, None, lambda ref, slot: (lambda: 1), target, random.Random(0))
    assert not out.committed and out.reason == "lock timeout"
    assert target.instances == []


def _run_txa(seed, workers=1):
    _, tpls, _ = chain_setup()
    cfg = GeneratorConfig(workers=workers, transactions=300, duration=3.0, seed=seed)
    res = generate_workload([tpls["TXA"]], planted_logic(), {}, None, cfg, lambda w: SimTarget(HashRows()))
    return res


def test_single_worker_determinism():
    a, b = _run_txa(4), _run_txa(4)
    assert a.instances == b.instances
    assert _run_txa(5).instances != a.instances


def test_workers_merge_in_time_order():
    res = _run_txa(1, workers=3)
    assert len(res.instances) == 300
    assert [i.ts for i in res.instances] == sorted(i.ts for i in res.instances)
    assert {i.worker for i in res.instances} == {0, 1, 2}


def test_certain_dependency_bypasses_sampler_in_generation():
    res = _run_txa(0)
    for inst in res.instances:
        ops = {o.op: o for o in inst.ops}
        assert ops[4].params[1] == ops[3].params[0]


def test_closed_loop_logic_recovery():
    _, tpls, _ = chain_setup()
    planted = planted_logic()
    txa = extract_transaction_logic(planted_instances("TXA", 10_000), tpls["TXA"])
    assert txa.of(P(2, 2)).pd2[0].pr == pytest.approx(0.99, abs=0.02)
    assert txa.of(P(4, 2)).pd2[0].pr == pytest.approx(1.0, abs=0.02)
    txc = extract_transaction_logic(planted_instances("TXC", 10_000), tpls["TXC"])
    for got, want in zip(txc.structure.branches[0], planted["TXC"].structure.branches[0]):
        assert got == pytest.approx(want, abs=0.02)
    assert txc.of(P(1, 2)).pd1.delta == 8
    assert [d.pr for d in txc.of(P(4, 2)).pd3] == [pytest.approx(1.0, abs=0.02)]


def test_fixed_rate_issue_plan_tracks_target():
    sched = MixSchedule(1.0, [{"One": 1.0}] * 4, [50.0, 100.0, 25.0, 80.0])
    cfg = GeneratorConfig(workers=4, model="scale", rate=2.0, duration=4.0)
    res = generate_workload([ONE], {}, {}, sched, cfg, lambda w: SimTarget())
    per_window = Counter(i.ts // 1000 for i in res.instances)
    for t, tps in enumerate(sched.throughput):
        assert per_window[t] == pytest.approx(2 * tps, rel=0.05)
