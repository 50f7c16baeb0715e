from __future__ import annotations

from importlib import resources

import pytest

from dynshield.automata import Fsrs, SpecValidationError
from dynshield.envs import ENVIRONMENTS, make_env
from dynshield.textio import (
    ParseError,
    mealy_to_dot,
    parse_fsrs,
    parse_spec,
    parse_traces,
    serialize_fsrs,
    serialize_spec,
    serialize_traces,
    spec_to_dot,
    trace_alphabets,
)

from oracles import random_fsrs, random_spec

DEMO = """\
fsrs v1
# three-state demo
cont a b
env x y
out lo hi
init q0
t q0 a x q1 lo
t q0 b x q0 lo
t q1 a y q2 hi
t q1 b x q0 lo
t q2 a x q2 hi
t q2 b y q0 lo
"""


def test_demo_round_trip():
    m = parse_fsrs(DEMO)
    assert len(m) == 3
    assert parse_fsrs(serialize_fsrs(m)) == m


def test_shipped_demo_matches():
    text = resources.files("dynshield").joinpath("data/demo.fsrs").read_text(encoding="utf-8")
    assert parse_fsrs(text) == parse_fsrs(DEMO)


@pytest.mark.parametrize("seed", range(5))
def test_random_round_trip(seed):
    import numpy as np
    m = random_fsrs(np.random.default_rng(seed), 6, 2, 3, 3).relabel(str)
    assert parse_fsrs(serialize_fsrs(m)) == m


def test_isolated_state_survives():
    m = Fsrs({"a", "b"}, "a", ["c"], ["e"], ["o"], {})
    assert parse_fsrs(serialize_fsrs(m)).states == {"a", "b"}


@pytest.mark.parametrize("text, reason", [
    (DEMO + "t q0 a x q2 hi\n", "nondeterministic transition"),
    (DEMO.replace("t q0 a x q1 lo", "t q0 z x q1 lo"), "unknown cont symbol"),
    (DEMO.replace("out lo hi\n", ""), "transition before cont/env/out"),
    ("fsrs v1\ncont a\nenv x\ninit q\n", "missing 'out' line"),
    (DEMO.replace("init q0\n", ""), "missing 'init' line"),
    (DEMO.replace("fsrs v1", "fsrs v2"), "expected header"),
    (DEMO + "frobnicate\n", "unknown directive"),
    (DEMO + "t q0 a\n", "expected 't <src>"),
])
def test_fsrs_parse_errors(text, reason):
    with pytest.raises(ParseError, match=reason):
        parse_fsrs(text)


def test_parse_error_has_line_number():
    with pytest.raises(ParseError) as info:
        parse_fsrs(DEMO + "t q0 a x q2 hi\n")
    assert info.value.lineno == 13


SPEC = """\
spec v1
sigma lo hi
init ok
unsafe bad
t ok lo ok
t ok hi bad
t bad lo bad
t bad hi bad
"""


def test_spec_round_trip():
    s = parse_spec(SPEC)
    assert s.unsafe == {"bad"}
    assert parse_spec(serialize_spec(s)) == s


def test_spec_rejects_non_absorbing():
    with pytest.raises(SpecValidationError, match="unsafe region not absorbing"):
        parse_spec(SPEC.replace("t bad lo bad", "t bad lo ok"))


def test_spec_rejects_partial_and_bad_initial():
    with pytest.raises(SpecValidationError, match="not total"):
        parse_spec(SPEC.replace("t ok lo ok\n", ""))
    with pytest.raises(SpecValidationError, match="initial state is unsafe"):
        parse_spec(SPEC.replace("init ok", "init bad"))
    with pytest.raises(ParseError, match="nondeterministic"):
        parse_spec(SPEC + "t ok lo bad\n")


def test_random_spec_round_trip():
    import numpy as np
    rng = np.random.default_rng(3)
    for _ in range(20):
        s = random_spec(rng, ["p", "q", "r"], 3, 2)
        assert parse_spec(serialize_spec(s)) == s


def test_traces_round_trip():
    eps = [[("open", "i1o0", "open.safe.ok"), ("close", "i0o1", "close.safe.viol")], []]
    text = serialize_traces(eps, ["close", "open"], ["i0o1", "i1o0"], ["a", "b"])
    assert parse_traces(text) == [[tuple(s) for s in eps[0]], []]
    assert trace_alphabets(text)["cont"] == ["close", "open"]
    with pytest.raises(ParseError, match="step outside an 'ep' block"):
        parse_traces("s a b c\n")


def test_dot_is_deterministic_and_complete():
    m = parse_fsrs(DEMO)
    dot = mealy_to_dot(m)
    assert dot == mealy_to_dot(parse_fsrs(serialize_fsrs(m)))
    assert dot.count("->") == len(m.delta) + 1
    sdot = spec_to_dot(parse_spec(SPEC))
    assert '"bad" [shape=doublecircle]' in sdot
    assert '"ok" [shape=circle]' in sdot


@pytest.mark.parametrize("name", sorted(ENVIRONMENTS))
def test_shipped_specs(name):
    text = resources.files("dynshield").joinpath(f"data/{name}.spec").read_text(encoding="utf-8")
    spec = parse_spec(text)
    assert spec == make_env(name).spec()
    assert parse_spec(serialize_spec(spec)) == spec


@pytest.mark.parametrize("name", ["cliffwalk", "gridworld", "watertank"])
def test_shipped_truth_models(name):
    text = resources.files("dynshield").joinpath(f"data/{name}.fsrs").read_text(encoding="utf-8")
    m = parse_fsrs(text)
    assert m == make_env(name).truth_fsrs()
    assert parse_fsrs(serialize_fsrs(m)) == m
