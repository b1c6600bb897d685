import io

import pytest
from hypothesis import given, settings, strategies as st

from wlsynth.errors import CyclicForeignKey, GrammarError, PlaceholderMismatch, UnknownColumn
from wlsynth.model import (
    LightTraceRecord,
    OpRecord,
    P,
    R,
    Ref,
    TransactionInstance,
    format_record,
    parse_record,
    parse_schema,
    parse_templates,
    read_trace,
    serialize_schema,
    serialize_templates,
    to_light,
    write_trace,
)
from wlsynth.samples import CHAIN_SCHEMA, PAYMENT, PAYMENT_SCHEMA, TXA, TXB, TXC


@pytest.fixture
def chain():
    return parse_schema(CHAIN_SCHEMA)


def test_chain_schema_has_two_fk_edges(chain):
    edges = [(t.name, fk.ref_table) for t in chain.tables for fk in t.foreign_keys]
    assert sorted(edges) == [("S", "Z"), ("T", "S")]
    order = chain.topological_order()
    assert order.index("Z") < order.index("S") < order.index("T")


def test_single_table_schema():
    s = parse_schema("TABLE A (a integer, b varchar) PK(a)")
    assert len(s.tables) == 1
    assert s.tables[0].foreign_keys == ()


def test_cyclic_foreign_keys_rejected():
    text = """
    TABLE S (s1 integer) PK(s1) FK(s1 -> T(t1))
    TABLE T (t1 integer) PK(t1) FK(t1 -> S(s1))
    """
    with pytest.raises(CyclicForeignKey) as exc:
        parse_schema(text)
    assert set(exc.value.tables) == {"S", "T"}


def test_unknown_pk_column():
    with pytest.raises(UnknownColumn):
        parse_schema("TABLE A (a integer) PK(b)")


def test_bad_type_and_syntax():
    with pytest.raises(GrammarError):
        parse_schema("TABLE A (a blob) PK(a)")
    with pytest.raises(GrammarError):
        parse_schema("TABLE A (a integer PK(a)")


def test_schema_round_trip(chain):
    assert parse_schema(serialize_schema(chain)) == chain


def test_txa_has_four_plain_ops(chain):
    (txa,) = parse_templates(TXA, chain)
    assert [op.index for op in txa.ops] == [1, 2, 3, 4]
    assert not txa.branches and not txa.loops
    assert txa.op(3).kind == "select"
    assert txa.op(3).returns[0].column == "Z.z2"
    assert txa.op(1).filter == "pk"


def test_txc_structure(chain):
    (txc,) = parse_templates(TXC, chain)
    assert len(txc.branches) == 1
    assert len(txc.branches[0].alternatives) == 2
    assert len(txc.loops) == 1 and len(txc.loops[0].body) == 1
    assert txc.loop_ops == {4}
    assert txc.branch_position(3) == (0, 1)
    assert txc.op(1).between_pairs() == [(1, 2)]


def test_txb_is_single_proc_call(chain):
    (txb,) = parse_templates(TXB, chain)
    assert len(txb.ops) == 1
    assert txb.ops[0].kind == "procCall"


def test_placeholder_mismatch():
    text = "TEMPLATE X { select a from A where a = ? and b = ? -> params(key A.a:integer); }"
    with pytest.raises(PlaceholderMismatch) as exc:
        parse_templates(text)
    assert exc.value.op_index == 1


def test_pk_filter_must_cover_key(chain):
    text = "TEMPLATE X { select s3 from S where s1 = ? -> params(key S.s1) filter(pk); }"
    with pytest.raises(GrammarError):
        parse_templates(text, chain)


def test_duplicate_template_names_rejected():
    one = "TEMPLATE X { select 1 from A; }\n"
    with pytest.raises(GrammarError):
        parse_templates(one + one)


def test_template_serialization_round_trip(chain):
    tpls = parse_templates(TXA + TXC, chain)
    again = parse_templates(serialize_templates(tpls), chain)
    assert [t.name for t in again] == ["TXA", "TXC"]
    for a, b in zip(tpls, again):
        assert [(o.index, o.kind, o.params, o.returns, o.filter) for o in a.ops] == \
               [(o.index, o.kind, o.params, o.returns, o.filter) for o in b.ops]
        assert [type(n) for n in a.body] == [type(n) for n in b.body]


def test_refs():
    assert str(P(2, 3)) == "p(2,3)"
    assert Ref.parse("r(1,2)") == R(1, 2)


def _txc_instance():
    return TransactionInstance("TXC", 1000, (
        OpRecord(1, 1, (10, 18), ((1.5,), (1.25,))),
        OpRecord(2, 1, (3.0, 7)),
        OpRecord(4, 1, (5, 6, 1.0)),
        OpRecord(4, 2, (5, 7, 1.0)),
    ), 2)


def test_heavy_record_round_trip(chain):
    tpls = {t.name: t for t in parse_templates(TXC, chain)}
    inst = _txc_instance()
    line = format_record(inst)
    assert parse_record(line, "heavy", tpls) == inst


def test_light_projection_keeps_pivotal_only(chain):
    (txc,) = parse_templates(TXC, chain)
    light = to_light(_txc_instance(), txc)
    assert isinstance(light, LightTraceRecord)
    assert light.ops[1].values == ((2, 7),)
    assert light.ops[2].values == ((1, 5), (2, 6))
    assert parse_record(format_record(light), "light", {"TXC": txc}) == light


def test_reader_skips_malformed_lines(chain):
    tpls = parse_templates(TXC, chain)
    good = format_record(_txc_instance())
    lines = [good, "ts=1 tpl=TXC op=9#1 params=[1]", "garbage", good.replace("op=4#2", "op=4#3")]
    reader = read_trace(io.StringIO("\n".join(lines)), "heavy", tpls)
    got = list(reader)
    assert len(got) == 1
    assert reader.malformed == 3
    assert reader.errors[0].line_no == 2


def test_repeat_outside_loop_rejected(chain):
    tpls = {t.name: t for t in parse_templates(TXC, chain)}
    with pytest.raises(ValueError):
        parse_record("ts=1 tpl=TXC op=2#1 params=[1.0,2] op=2#2 params=[1.0,2]", "heavy", tpls)


def test_param_count_checked(chain):
    tpls = {t.name: t for t in parse_templates(TXC, chain)}
    with pytest.raises(ValueError):
        parse_record("ts=1 tpl=TXC op=2#1 params=[1.0]", "heavy", tpls)


def test_payment_template_parses():
    schema = parse_schema(PAYMENT_SCHEMA)
    (pay,) = parse_templates(PAYMENT, schema)
    assert len(pay.ops) == 7
    assert pay.op(7).filter == "none"
    assert [op.filter for op in pay.ops[:6]] == ["pk"] * 6


scalars = st.one_of(st.integers(-10**9, 10**9), st.text(max_size=8),
                    st.floats(allow_nan=False, allow_infinity=False))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10**12), st.lists(scalars, min_size=1, max_size=4)),
                min_size=1, max_size=6))
def test_trace_write_read_round_trip(items):
    recs = [TransactionInstance("X", ts, (OpRecord(1, 1, tuple(vals)),), k % 3)
            for k, (ts, vals) in enumerate(items)]
    buf = io.StringIO()
    write_trace(recs, buf)
    back = list(read_trace(io.StringIO(buf.getvalue())))
    assert back == recs
