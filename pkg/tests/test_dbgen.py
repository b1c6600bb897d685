import collections

import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from wlsynth.characteristics import (
    ColumnCharacteristics,
    extract_directory,
    read_table_file,
    table_path,
)
from wlsynth.dbgen import (
    ColumnGenerator,
    build_generators,
    derive_key_domains,
    generate_database,
    generate_table,
    make_column_generator,
)
from wlsynth.errors import UnresolvableComposite
from wlsynth.model import parse_schema
from wlsynth.samples import CHAIN_SCHEMA, chain_characteristics


@pytest.fixture
def chain():
    return parse_schema(CHAIN_SCHEMA)


def test_chain_key_domains(chain):
    d = derive_key_domains(chain, {"Z": 100, "S": 1000, "T": 2000})
    assert (d["Z"]["z1"].lo, d["Z"]["z1"].hi, d["Z"]["z1"].provenance) == (1, 100, "singlePK")
    assert (d["S"]["s1"].lo, d["S"]["s1"].hi, d["S"]["s1"].provenance) == (1, 100, "inheritedFK")
    assert (d["S"]["s2"].lo, d["S"]["s2"].hi) == (1, 10)
    assert (d["T"]["t1"].lo, d["T"]["t1"].hi) == (1, 100)
    assert (d["T"]["t2"].lo, d["T"]["t2"].hi, d["T"]["t2"].provenance) == (1, 20, "residualComposite")


def test_two_fk_composite():
    schema = parse_schema("""
    TABLE F1 (a integer) PK(a)
    TABLE F2 (b integer) PK(b)
    TABLE C (a integer, b integer, c integer) PK(a, b, c) FK(a -> F1(a)) FK(b -> F2(b))
    """)
    d = derive_key_domains(schema, {"F1": 10, "F2": 5, "C": 1000})
    assert (d["C"]["c"].lo, d["C"]["c"].hi) == (1, 20)


def test_residual_floor_minimum_one():
    schema = parse_schema("TABLE F (a integer) PK(a)\nTABLE C (a integer, c integer) PK(a, c) FK(a -> F(a))")
    d = derive_key_domains(schema, {"F": 50, "C": 10})
    assert (d["C"]["c"].lo, d["C"]["c"].hi) == (1, 1)


def test_two_residual_columns_unsupported():
    schema = parse_schema("TABLE C (a integer, b integer) PK(a, b)")
    with pytest.raises(UnresolvableComposite):
        derive_key_domains(schema, {"C": 100})


def test_numeric_generator_constants():
    g = make_column_generator(ColumnCharacteristics("v", "integer", 5, 2000, 400))
    assert g.value(1) == 5
    assert g.value(400) == 2000
    assert g.value(39) == 195
    assert g.index_of(195) == 39


def test_single_value_generator():
    g = make_column_generator(ColumnCharacteristics("v", "decimal", 3.5, 9.0, 1))
    assert {g.value(k) for k in (1, 1, 1)} == {3.5}


def test_string_seeded_generator():
    g = ColumnGenerator(10, "stringSeeded", 1, 5, "varchar", ("a", "bb", "ccc"))
    assert g.value(7) == "7bb"
    assert g.index_of("7bb") == 7


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 500), st.integers(-1000, 1000), st.integers(0, 5000))
def test_numeric_generator_injective(n, lo, width):
    cc = ColumnCharacteristics("v", "integer", lo, lo + width, n)
    g = make_column_generator(cc)
    vals = [g.value(k) for k in range(1, g.n + 1)]
    assert len(set(vals)) == g.n
    assert min(vals) >= lo and max(vals) <= lo + width
    assert g.values(range(1, g.n + 1)) == vals


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 2000), st.integers(2, 12))
def test_string_generator_injective(n, max_len):
    g = make_column_generator(ColumnCharacteristics("s", "varchar", 1, max_len, n), seed=3)
    vals = [g.value(k) for k in range(1, n + 1)]
    assert len(set(vals)) == n
    assert [g.value(k) for k in range(1, n + 1)] == vals


def test_sequential_pk_range(chain):
    chars = chain_characteristics()
    d = derive_key_domains(chain, {n: c.size for n, c in chars.items()})
    gens = build_generators(chain, chars)
    rows = list(generate_table(chain.table("Z"), d, gens["Z"], (1, 10), seed=1))
    assert [r[0] for r in rows] == list(range(1, 11))


def test_disjoint_ranges_match_whole(chain):
    chars = chain_characteristics()
    d = derive_key_domains(chain, {n: c.size for n, c in chars.items()})
    gens = build_generators(chain, chars)
    t = chain.table("S")
    whole = list(generate_table(t, d, gens["S"], seed=4))
    parts = list(generate_table(t, d, gens["S"], (1, 500), seed=4)) + \
        list(generate_table(t, d, gens["S"], (501, 1000), seed=4))
    assert parts == whole
    assert len({(r[0], r[1]) for r in parts}) == 1000


def test_composite_pk_lexicographic(chain):
    chars = chain_characteristics()
    d = derive_key_domains(chain, {n: c.size for n, c in chars.items()})
    gens = build_generators(chain, chars)
    rows = list(generate_table(chain.table("T"), d, gens["T"], (1, 22), seed=0))
    assert [(r[0], r[1]) for r in rows[:3]] == [(1, 1), (1, 2), (1, 3)]
    assert (rows[20][0], rows[20][1]) == (2, 1)


def test_fk_uniform_chi_square():
    schema = parse_schema("TABLE P (p integer) PK(p)\nTABLE C (c integer, p integer) PK(c) FK(p -> P(p))")
    d = derive_key_domains(schema, {"P": 100, "C": 10_000})
    rows = list(generate_table(schema.table("C"), d, {}, seed=11))
    counts = collections.Counter(r[1] for r in rows)
    assert set(counts) <= set(range(1, 101))
    obs = [counts.get(k, 0) for k in range(1, 101)]
    chi2 = sum((o - 100) ** 2 / 100 for o in obs)
    assert chi2 < stats.chi2.ppf(0.99, 99)


def test_parallel_files_identical(tmp_path, chain):
    chars = chain_characteristics()
    generate_database(chain, chars, tmp_path / "one", seed=5, parallelism=1)
    generate_database(chain, chars, tmp_path / "two", seed=5, parallelism=3)
    for t in ("Z", "S", "T"):
        a = open(table_path(tmp_path / "one", t)).read()
        b = open(table_path(tmp_path / "two", t)).read()
        assert a == b


def test_generated_files_re_extract(tmp_path, chain):
    chars = chain_characteristics()
    written = generate_database(chain, chars, tmp_path, seed=2)
    assert written == {"Z": 100, "S": 1000, "T": 2000}
    back = {tc.table: tc for tc in extract_directory(tmp_path, chain)}
    for name, tc in chars.items():
        assert back[name].size == tc.size
        for col, cc in tc.columns.items():
            got = back[name].columns[col]
            assert got.cardinality <= max(cc.cardinality, 100)
            assert cc.min <= got.min and got.max <= cc.max
    rows_t = list(read_table_file(table_path(tmp_path, "T"), chain.table("T")))
    assert {int(r[1]) for r in rows_t} == set(range(1, 21))
