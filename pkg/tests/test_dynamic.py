from __future__ import annotations

import numpy as np
import pytest

from dynshield.automata import sa_accepts
from dynshield.dynamic import (
    DynamicShield,
    RebuildPolicy,
    TraceStore,
    UsageError,
    build_snapshot,
    maybe_rebuild,
)
from dynshield.envs import make_env
from dynshield.learner import SampleError, is_consistent


def store3() -> TraceStore:
    return TraceStore(["a", "b"], ["x"], ["ok", "bad"], max_ep_len=10)


def test_record_and_end():
    st = store3()
    st.start_episode()
    for a, out in (("a", "ok"), ("b", "ok"), ("a", "bad")):
        st.record_step(a, "x", out)
    ep = st.end_episode()
    assert len(ep) == 3
    assert st.runlog.lengths == [3]
    d = st.samples.as_dict()
    assert d == {(("a", "x"),): "ok", (("a", "x"), ("b", "x")): "ok",
                 (("a", "x"), ("b", "x"), ("a", "x")): "bad"}


def test_identical_episodes_leave_samples_alone():
    st = store3()
    for _ in range(2):
        st.start_episode()
        st.record_step("a", "x", "ok")
        st.end_episode()
    assert len(st.samples) == 1
    assert st.runlog.lengths == [1, 1]


def test_usage_errors():
    st = store3()
    with pytest.raises(UsageError):
        st.record_step("a", "x", "ok")
    st.start_episode()
    st.record_step("a", "x", "ok")
    with pytest.raises(UsageError):
        st.start_episode()
    st.end_episode()
    with pytest.raises(UsageError):
        st.record_step("a", "x", "ok")
    with pytest.raises(UsageError):
        st.end_episode()
    st.start_episode()
    for _ in range(10):
        st.record_step("a", "x", "ok")
    with pytest.raises(UsageError, match="longer than 10"):
        st.record_step("a", "x", "ok")


def test_samples_never_shrink(rng):
    st = store3()
    sizes = []
    for _ in range(30):
        st.start_episode()
        for _ in range(int(rng.integers(1, 8))):
            st.record_step(["a", "b"][int(rng.integers(2))], "x", ["ok", "bad"][int(rng.integers(2))])
        before = (len(st.episodes), st.total_steps, len(st.samples))
        try:
            st.end_episode()
        except SampleError:  # random outputs may contradict earlier ones
            assert (len(st.episodes), st.total_steps, len(st.samples)) == before
        sizes.append(len(st.samples))
    assert sizes == sorted(sizes)


def test_policy_validation():
    assert RebuildPolicy() == RebuildPolicy(1000, True, 5)
    with pytest.raises(ValueError):
        RebuildPolicy(min_new_steps=0)


def test_maybe_rebuild_policy():
    spec_env = make_env("watertank")
    spec = spec_env.spec()
    st = TraceStore(spec_env.cont, spec_env.env_actions, spec_env.outputs, 200)
    st.start_episode()
    st.record_step("close", "i0o0", "close.safe.ok")
    st.end_episode()
    assert maybe_rebuild(st, RebuildPolicy(), spec, 0) is None
    snap = maybe_rebuild(st, RebuildPolicy(min_new_steps=1), spec, 0)
    assert snap is not None and snap.sample_size == 1 and snap.steps_at_build == 1
    st.start_episode()
    st.record_step("open", "i0o0", "open.safe.viol")
    st.end_episode()
    snap = maybe_rebuild(st, RebuildPolicy(), spec, 1)
    assert snap is not None and snap.min_depth == 5
    assert maybe_rebuild(st, RebuildPolicy(rebuild_on_undesired=False), spec, 1) is None
    assert maybe_rebuild(st, RebuildPolicy(), spec, 2) is None  # nothing new since


def test_maybe_rebuild_only_between_episodes():
    env = make_env("watertank")
    st = TraceStore(env.cont, env.env_actions, env.outputs, 200)
    st.start_episode()
    st.record_step("close", "i0o0", "close.safe.ok")
    with pytest.raises(UsageError):
        maybe_rebuild(st, RebuildPolicy(), env.spec(), 0)


def run_script(env, shield, actions, rng):
    """Drive ``env`` with a fixed action list through ``shield``; returns the steps."""
    env.reset(rng)
    shield.on_episode_start()
    steps = []
    for a in actions:
        st = env.step(a)
        shield.advance(a, st.env_action, st.output)
        steps.append((a, st.env_action, st.output))
        if st.done:
            break
    shield.on_episode_end()
    return steps


@pytest.fixture
def tank_after_overflow():
    env = make_env("watertank")
    shield = DynamicShield(env.spec(), env.cont, env.env_actions, env.outputs, env.max_ep_len)
    assert shield.current_allowed() == ("close", "open")  # trivial shield
    steps = run_script(env, shield, ["open"] * 200, np.random.default_rng(4))
    assert steps[-1][2] == "open.high.ok"
    return env, shield, steps


def test_rebuild_learns_overflow(tank_after_overflow):
    env, shield, steps = tank_after_overflow
    assert shield.rebuild_count == 1  # undesired episode, below the step threshold
    assert is_consistent(shield.snapshot.model, shield.store.samples)
    shield.on_episode_start()
    for a1, a2, out in steps[:-1]:
        shield.advance(a1, a2, out)
    assert shield.current_allowed() == ("close",)


def test_snapshot_isolation(tank_after_overflow):
    env, shield, steps = tank_after_overflow
    shield.on_episode_start()
    cursor, tables = shield.cursor, shield.snapshot.shield.allowed
    shield.rebuild_now()
    assert shield.cursor is cursor and shield.snapshot.shield.allowed is not tables
    assert shield.cursor.allowed == tables


def test_previous_violations_are_blocked(rng):
    """Replaying each stored violation, the violating action is off the table."""
    env = make_env("watertank")
    shield = DynamicShield(env.spec(), env.cont, env.env_actions, env.outputs, env.max_ep_len)
    for _ in range(40):
        env.reset(rng)
        shield.on_episode_start()
        while True:
            a = shield.current_allowed()[int(rng.integers(len(shield.current_allowed())))]
            st = env.step(a)
            shield.advance(a, st.env_action, st.output)
            if st.done:
                break
        shield.on_episode_end()
    spec = env.spec()
    checked = 0
    for ep in shield.store.episodes:
        outs = [b for _, _, b in ep]
        k = next((i for i in range(len(ep)) if not sa_accepts(spec, outs[: i + 1])), None)
        if k is None:
            continue
        cur = shield.snapshot.shield.fork()
        for a1, a2, out in ep[:k]:
            cur.advance(a1, a2, out)
        assert not cur.diverged  # the model is consistent with its own data
        assert ep[k][0] not in cur.allowed[cur.state]
        checked += 1
    assert checked > 5


def test_snapshot_metadata(tank_after_overflow):
    env, shield, _ = tank_after_overflow
    snap = build_snapshot(shield.store, env.spec(), min_depth=0)
    assert snap.min_depth == 0
    assert snap.sample_size == len(shield.store.samples)
    assert snap.model_states == len(snap.model)
    assert snap.game_states == len(snap.shield.game)
    assert snap.build_ms >= 0
