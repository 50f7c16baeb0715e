"""Dynamic shielding: collect traces, rebuild the shield, serve allowed sets."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .automata import AutomataError, Fsrs, SafetyAutomaton, sa_accepts, sorted_ids
from .game import PreemptiveShield, shield_from_model, trivial_shield
from .learner import RunLog, SampleSet, adaptive_min_depth, rpni_fsrs


class UsageError(AutomataError, RuntimeError):
    pass


class RebuildError(AutomataError, RuntimeError):
    pass


class TraceStore:
    """Completed episodes of ``(a1, a2, out)`` steps and the samples they induce."""

    def __init__(self, cont: Sequence, env: Sequence, outputs: Sequence,
                 max_ep_len: int, min_depth_cap: int = 5):
        self.cont = tuple(sorted_ids(cont))
        self.env = tuple(sorted_ids(env))
        self.outputs = tuple(sorted_ids(outputs))
        self.episodes: list[tuple] = []
        self.current: Optional[list] = None
        self.samples = SampleSet()
        self.runlog = RunLog(max_ep_len, min_depth_cap)
        self.total_steps = 0

    def start_episode(self) -> None:
        if self.current:
            raise UsageError("previous episode was not ended")
        self.current = []

    def record_step(self, a1, a2, out) -> None:
        if self.current is None:
            raise UsageError("record_step called with no open episode; call start_episode first")
        if len(self.current) >= self.runlog.max_ep_len:
            raise UsageError(f"episode longer than {self.runlog.max_ep_len} steps")
        self.current.append((a1, a2, out))

    def end_episode(self) -> tuple:
        """Close the open episode and fold it into the samples; returns it."""
        if self.current is None:
            raise UsageError("no open episode")
        ep = tuple(self.current)
        self.current = None
        if ep:
            # samples first: a conflicting run then leaves the store untouched
            self.samples.add_run([(a1, a2) for a1, a2, _ in ep], [b for _, _, b in ep])
            self.episodes.append(ep)
            self.runlog.record(len(ep))
            self.total_steps += len(ep)
        return ep


@dataclass(frozen=True)
class RebuildPolicy:
    min_new_steps: int = 1000
    rebuild_on_undesired: bool = True
    min_depth_cap: int = 5

    def __post_init__(self):
        if self.min_new_steps < 1:
            raise ValueError("min_new_steps must be at least 1")
        if self.min_depth_cap < 0:
            raise ValueError("min_depth_cap must be non-negative")


@dataclass(frozen=True)
class ShieldSnapshot:
    shield: PreemptiveShield = field(compare=False)
    model: Optional[Fsrs] = field(compare=False)
    sample_size: int
    model_states: int
    game_states: int
    min_depth: Optional[int]
    build_ms: float
    steps_at_build: int


def build_snapshot(store: TraceStore, spec: SafetyAutomaton, min_depth: Optional[int] = None) -> ShieldSnapshot:
    """Learn from every stored trace and synthesize a fresh shield."""
    t0 = time.perf_counter()
    if min_depth is None:
        min_depth = adaptive_min_depth(store.runlog)
    try:
        model = rpni_fsrs(store.samples, min_depth, store.cont, store.env, store.outputs)
        shield = shield_from_model(model, spec)
    except AutomataError as exc:
        raise RebuildError(f"rebuild after {store.total_steps} steps failed: {exc}") from exc
    ms = (time.perf_counter() - t0) * 1000.0
    return ShieldSnapshot(shield, model, len(store.samples), len(model), len(shield.game),
                          min_depth, ms, store.total_steps)


def maybe_rebuild(store: TraceStore, policy: RebuildPolicy, spec: SafetyAutomaton,
                  last_build_steps: int) -> Optional[ShieldSnapshot]:
    """Rebuild at an episode boundary when the policy asks for it."""
    if store.current:
        raise UsageError("maybe_rebuild called inside an episode")
    due = store.total_steps - last_build_steps >= policy.min_new_steps
    if not due and policy.rebuild_on_undesired and store.episodes and store.total_steps > last_build_steps:
        due = not sa_accepts(spec, (b for _, _, b in store.episodes[-1]))
    if not due:
        return None
    return build_snapshot(store, spec)


class DynamicShield:
    """Handle used by the training loop.

    Owns the trace store, the latest snapshot and a cursor on it.  Rebuilds
    happen inline at episode ends, so queries never see a half-built shield.
    """

    def __init__(self, spec: SafetyAutomaton, cont, env, outputs, max_ep_len: int,
                 policy: RebuildPolicy = RebuildPolicy()):
        self.spec = spec
        self.policy = policy
        self.store = TraceStore(cont, env, outputs, max_ep_len, policy.min_depth_cap)
        start = time.perf_counter()
        shield = trivial_shield(self.store.cont, self.store.env, self.store.outputs, spec)
        self.snapshot = ShieldSnapshot(shield, None, 0, 1, len(shield.game), None,
                                       (time.perf_counter() - start) * 1000.0, 0)
        self.cursor = shield.fork()
        self.rebuild_count = 0
        self.rebuild_ms_total = 0.0
        self.fallbacks = 0

    def on_episode_start(self) -> None:
        self.cursor = self.snapshot.shield.fork()
        self.store.start_episode()

    def current_allowed(self) -> tuple:
        return self.cursor.allowed_actions()

    def advance(self, a1, a2, out) -> None:
        self.cursor.advance(a1, a2, out)
        self.store.record_step(a1, a2, out)

    def on_episode_end(self) -> Optional[ShieldSnapshot]:
        self.fallbacks += self.cursor.fallbacks
        self.cursor.fallbacks = 0
        self.store.end_episode()
        snap = maybe_rebuild(self.store, self.policy, self.spec, self.snapshot.steps_at_build)
        if snap is not None:
            self.snapshot = snap
            self.rebuild_count += 1
            self.rebuild_ms_total += snap.build_ms
        return snap

    def rebuild_now(self) -> ShieldSnapshot:
        snap = build_snapshot(self.store, self.spec)
        self.snapshot = snap
        self.rebuild_count += 1
        self.rebuild_ms_total += snap.build_ms
        return snap
