import functools

import pytest

from wlsynth.model import parse_schema, parse_templates
from wlsynth.samples import CHAIN_SCHEMA, TXA, TXC, chain_characteristics, planted_logic
from wlsynth.workload import (
    DatabaseRows,
    GeneratorConfig,
    SimTarget,
    column_generators,
    generate_workload,
)


@functools.lru_cache(maxsize=None)
def chain_setup():
    schema = parse_schema(CHAIN_SCHEMA)
    tpls = {t.name: t for t in parse_templates(TXA + TXC, schema)}
    return schema, tpls, chain_characteristics()


@functools.lru_cache(maxsize=None)
def planted_instances(name, n, seed=0):
    """``n`` instances of TXA or TXC generated from the planted logic."""
    schema, tpls, chars = chain_setup()
    rows = DatabaseRows(schema, chars, seed)
    cfg = GeneratorConfig(workers=1, transactions=n, duration=n / 100.0, seed=seed)
    res = generate_workload([tpls[name]], {name: planted_logic()[name]}, {}, None, cfg,
                            lambda w: SimTarget(rows), column_generators(schema, chars, seed))
    return tuple(res.instances)


@pytest.fixture(scope="session")
def chain_env():
    return chain_setup()


ACCEPTANCE = []


@pytest.fixture
def accept(capsys):
    """Record (and print) one pass/fail line for an acceptance criterion."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
