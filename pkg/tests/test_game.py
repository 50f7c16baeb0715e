from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynshield.automata import AlphabetError, Fsrs, abstracts, avoid_spec
from dynshield.envs.watertank import level_model
from dynshield.game import (
    SINK,
    SafetyGame,
    compose,
    game_to_dot,
    parse_shield,
    serialize_shield,
    shield_from_model,
    synthesize_postposed,
    synthesize_preemptive,
    trivial_shield,
    verify_shield,
    winning_region,
)
from dynshield.learner import SampleSet, rpni_fsrs
from dynshield.textio import ParseError

from oracles import all_words_sample, backward_induction, random_fsrs, random_game, random_spec

HIGH_BAD = avoid_spec(["high", "low", "safe"], ["high"])


@pytest.fixture(scope="module")
def tank_shield():
    return shield_from_model(level_model(), HIGH_BAD)


# -- compose ----------------------------------------------------------------------

def test_compose_total_safe_model_has_no_sink():
    m = Fsrs({0, 1}, 0, ["a"], ["x", "y"], ["ok"],
             {(s, ("a", e)): (1 - s, "ok") for s in (0, 1) for e in ("x", "y")})
    game = compose(m, avoid_spec(["ok"], []))
    assert all(lab[0] != SINK for lab in game.labels[:2])
    assert game.safe == frozenset(range(len(game)))
    reachable_sink = {t for g in range(2) for i in range(1) for t in game.targets(g, i)} - {0, 1}
    assert not reachable_sink


def test_compose_routes_unknown_moves_to_safe_sink():
    tree = Fsrs({0, 1}, 0, ["a", "b"], ["x"], ["ok", "bad"], {(0, ("a", "x")): (1, "bad")})
    game = compose(tree, avoid_spec(["bad", "ok"], ["bad"]))
    g1, pred = game.step(0, 0, 0)
    assert game.labels[g1] == (1, "bad") and pred == "bad"
    assert g1 not in game.safe
    gs, pred = game.step(0, 1, 0)
    assert game.labels[gs] == (SINK, "ok") and pred is None
    assert gs in game.safe
    assert game.default[gs] == gs  # sink is absorbing, spec state frozen


def test_compose_watertank_level_99():
    game = compose(level_model(), HIGH_BAD)
    g = game.index((99, "ok"))
    t, pred = game.step(g, game.cont.index("open"), game.env.index("i2o0"))
    assert game.labels[t] == (100, "bad") and pred == "high"
    assert t not in game.safe


def test_compose_alphabet_mismatch():
    with pytest.raises(AlphabetError):
        compose(level_model(), avoid_spec(["high", "safe"], ["high"]))


# -- winning region ---------------------------------------------------------------------

def test_all_safe_means_everything_wins():
    game = SafetyGame.from_table(range(3), ["a"], ["x"], [[[1]], [[2]], [[0]]], {0, 1, 2})
    assert winning_region(game) == {0, 1, 2}


def test_hand_built_five_state_game():
    # 4 is unsafe and absorbing; 'b' from 0 and 'a' from 1 may reach it
    succ = [
        [[1, 2], [4, 2]],  # 0: a safe, b risky
        [[4, 3], [4, 4]],  # 1: every action can reach 4
        [[3, 3], [0, 0]],  # 2
        [[3, 3], [3, 3]],  # 3
        [[4, 4], [4, 4]],  # 4
    ]
    game = SafetyGame.from_table(range(5), ["a", "b"], ["x", "y"], succ, {0, 1, 2, 3})
    assert winning_region(game) == backward_induction(game) == {2, 3}
    # 0 loses only because its safe action leads to 1
    succ[0] = [[2, 2], [4, 2]]
    game = SafetyGame.from_table(range(5), ["a", "b"], ["x", "y"], succ, {0, 1, 2, 3})
    assert winning_region(game) == {0, 2, 3}


def test_unsafe_initial_state():
    game = SafetyGame.from_table(range(2), ["a"], ["x"], [[[1]], [[1]]], {1})
    shield = synthesize_preemptive(game)
    assert 0 not in shield.winning
    assert shield.allowed[0] == ()
    assert shield.allowed_actions() == ("a",)  # fallback
    assert shield.fallbacks == 1


@pytest.mark.parametrize("seed", range(8))
def test_winning_region_matches_backward_induction(seed):
    rng = np.random.default_rng(seed)
    for _ in range(25):
        game = random_game(rng, int(rng.integers(1, 30)), int(rng.integers(1, 4)),
                           int(rng.integers(1, 4)), float(rng.uniform(0, 0.3)))
        assert winning_region(game) == backward_induction(game)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_winning_region_is_a_fixpoint(seed):
    rng = np.random.default_rng(seed)
    game = random_game(rng, 20, 2, 2, 0.15)
    w = winning_region(game)
    assert w <= game.safe
    for g in range(len(game)):
        ok = g in game.safe and any(game.targets(g, i) <= w for i in range(len(game.cont)))
        assert (g in w) == ok


# -- preemptive shield --------------------------------------------------------------------

def test_level_99_allows_only_close(tank_shield):
    g = tank_shield.game.index((99, "ok"))
    assert tank_shield.allowed[g] == ("close",)
    g = tank_shield.game.index((50, "ok"))
    assert tank_shield.allowed[g] == ("close", "open")


def test_everything_winning_allows_everything():
    shield = trivial_shield(["a", "b"], ["x"], ["ok", "bad"], avoid_spec(["bad", "ok"], ["bad"]))
    assert all(a == ("a", "b") for a in shield.allowed)
    assert shield.allowed_actions() == ("a", "b")


def test_runtime_cursor(tank_shield):
    c = tank_shield.fork()
    assert c.label == (50, "ok") and not c.diverged
    c.advance("open", "i2o1", "safe")
    assert c.label == (51, "ok") and not c.diverged
    c.advance("open", "i1o1", "high")  # model says safe
    assert c.diverged
    assert c.allowed_actions() == ("close", "open")
    c.reset()
    assert c.label == (50, "ok") and not c.diverged
    assert tank_shield.label == (50, "ok")  # forks never move the original


def test_unexplored_move_goes_to_sink():
    tree = Fsrs({0, 1}, 0, ["a", "b"], ["x"], ["ok", "bad"], {(0, ("a", "x")): (1, "ok")})
    shield = shield_from_model(tree, avoid_spec(["bad", "ok"], ["bad"]))
    shield.advance("b", "x", "bad")
    assert shield.label[0] == SINK and not shield.diverged
    assert shield.allowed_actions() == ("a", "b")
    with pytest.raises(AlphabetError):
        shield.advance("c", "x", "ok")


def test_def7_shape(rng):
    """The allowed set is read from the state alone, whatever path led there."""
    for _ in range(20):
        truth = random_fsrs(rng, 5, 2, 2, 3)
        spec = random_spec(rng, list(truth.outputs), 2, 1)
        shield = shield_from_model(truth, spec)
        assert len(shield.allowed) == len(shield.game)
        seen: dict = {}
        for _ in range(30):
            c = shield.fork()
            for _ in range(6):
                seen.setdefault(c.state, c.allowed_at(c.state))
                assert c.allowed_at(c.state) == seen[c.state]
                a1 = truth.cont[int(rng.integers(2))]
                moves = [(e, hit) for (x, e), hit in truth.transitions_from(c.label[0]).items() if x == a1] \
                    if c.label[0] != SINK else []
                if not moves:
                    break
                e, (_, out) = moves[int(rng.integers(len(moves)))]
                c.advance(a1, e, out)


def test_disallowance_carries_model_evidence(rng):
    for _ in range(100):
        model = random_fsrs(rng, 6, 3, 2, 3, env_density=0.5)
        spec = random_spec(rng, list(model.outputs), 2, 1)
        shield = shield_from_model(model, spec)
        game = shield.game
        for g in shield.winning:
            for i, a1 in enumerate(game.cont):
                if a1 not in shield.allowed[g]:
                    assert any(t not in shield.winning for t, _ in game.moves[g][i].values())
                else:
                    assert game.targets(g, i) <= shield.winning


# -- post-posed shield ----------------------------------------------------------------------

def test_postposed(tank_shield):
    post = synthesize_postposed(tank_shield.fork())
    g99 = tank_shield.game.index((99, "ok"))
    assert post.substitute_at(g99, "close") == "close"
    assert post.substitute_at(g99, "open") == "close"
    assert post.substitute_at(g99, "open", diverged=True) == "open"
    assert post.substitute("open") == "open"


def test_postposed_passes_allowed_through(rng):
    for _ in range(30):
        model = random_fsrs(rng, 5, 3, 2, 3)
        shield = shield_from_model(model, random_spec(rng, list(model.outputs), 2, 1))
        post = synthesize_postposed(shield)
        for g in range(len(shield.game)):
            for a in shield.game.cont:
                sub = post.substitute_at(g, a)
                assert sub in shield.allowed_at(g)
                if a in shield.allowed_at(g):
                    assert sub == a


# -- verification -------------------------------------------------------------------------

THREE = Fsrs({"s", "m", "t"}, "s", ["go", "wait"], ["x"], ["bad", "ok"], {
    ("s", ("go", "x")): ("m", "ok"),
    ("s", ("wait", "x")): ("s", "ok"),
    ("m", ("go", "x")): ("t", "bad"),
    ("m", ("wait", "x")): ("s", "ok"),
    ("t", ("go", "x")): ("t", "ok"),
    ("t", ("wait", "x")): ("t", "ok"),
})
OK_ONLY = avoid_spec(["bad", "ok"], ["bad"])


def test_verify_shield_from_truth_is_clean():
    assert verify_shield(THREE, OK_ONLY, shield_from_model(THREE, OK_ONLY)) == []


def test_verify_all_sink_shield_finds_violation():
    found = verify_shield(THREE, OK_ONLY, trivial_shield(THREE.cont, THREE.env, THREE.outputs, OK_ONLY))
    assert len(found) == 1
    assert found[0].steps == (("go", "x", "ok"), ("go", "x", "bad"))
    assert found[0].truth_state == "t"


def test_verify_learned_abstraction_is_clean(rng):
    done = 0
    while done < 15:
        truth = random_fsrs(rng, 4, 2, 2, 3)
        spec = random_spec(rng, list(truth.outputs), 2, 1)
        d = SampleSet.from_dict(all_words_sample(truth, 4))
        model = rpni_fsrs(d, 0, truth.cont, truth.env, truth.outputs)
        shield = shield_from_model(model, spec)
        if not abstracts(model, truth) or shield.game.initial not in shield.winning:
            continue
        done += 1
        assert verify_shield(truth, spec, shield) == []


def test_losing_start_gives_no_guarantee():
    """Outside W the shield abstains, so the guarantee needs g0 in W."""
    always_bad = Fsrs({0}, 0, ["go"], ["x"], ["bad", "ok"], {(0, ("go", "x")): (0, "bad")})
    shield = shield_from_model(always_bad, OK_ONLY)
    assert shield.game.initial not in shield.winning
    assert len(verify_shield(always_bad, OK_ONLY, shield)) == 1


def test_verify_alphabet_mismatch():
    other = Fsrs({0}, 0, ["go"], ["x"], ["ok"], {})
    with pytest.raises(AlphabetError):
        verify_shield(other, OK_ONLY, shield_from_model(THREE, OK_ONLY))


# -- text format ----------------------------------------------------------------------------

def test_shield_round_trip(tank_shield):
    text = serialize_shield(tank_shield)
    back = parse_shield(text)
    assert back.allowed == tank_shield.allowed
    assert back.game.labels == tuple((l if l == SINK else str(l), q) for l, q in tank_shield.game.labels)
    assert back.game.moves == tank_shield.game.moves
    assert back.game.safe == tank_shield.game.safe
    assert serialize_shield(back) == text


def test_shield_round_trip_with_sink(rng):
    for _ in range(20):
        model = random_fsrs(rng, 4, 2, 3, 2, env_density=0.4).relabel(str)
        shield = shield_from_model(model, random_spec(rng, list(model.outputs), 2, 1))
        back = parse_shield(serialize_shield(shield))
        assert back.allowed == shield.allowed
        assert back.game.default == shield.game.default
        assert back.game.labels == shield.game.labels


def test_shield_parse_errors():
    with pytest.raises(ParseError, match="expected header"):
        parse_shield("shield v2\n")
    with pytest.raises(ParseError, match="missing cont"):
        parse_shield("shield v1\ncont a\n")
    with pytest.raises(ParseError, match="duplicate transition"):
        parse_shield("shield v1\ncont a\nenv x\ninit s|q\nt s|q a x s|q -\nt s|q a x s|q -\n")
    with pytest.raises(ParseError, match="no default"):
        parse_shield("shield v1\ncont a\nenv x y\ninit s|q\nt s|q a x s|q -\n")


def test_game_dot(tank_shield):
    dot = game_to_dot(tank_shield)
    assert dot.startswith('digraph "game"')
    assert '"100|bad" [shape=doublecircle, color=red]' in dot
    assert dot == game_to_dot(parse_shield(serialize_shield(tank_shield)))
