"""Mealy machines, finite-state reactive systems and safety automata.

All machines are immutable once built.  Partial transition maps are stored as
a single ``delta`` mapping ``(state, input) -> (successor, output)`` so the
transition and output functions always share one domain.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Mapping, Optional, Sequence

State = Hashable
Symbol = Hashable


class AutomataError(Exception):
    """Base class for errors raised by this package's automata code."""


class AlphabetError(AutomataError, ValueError):
    """A symbol or state is not part of the declared alphabet/state set."""


class StrategyError(AutomataError, ValueError):
    """An environment strategy puts mass on an undefined move."""


class SpecValidationError(AutomataError, ValueError):
    """A safety automaton violates one of its structural invariants."""


def order_key(x: Any) -> tuple:
    """Total order over the mixed ints/strings/tuples used as identifiers."""
    if isinstance(x, bool):
        return (0, int(x))
    if isinstance(x, int):
        return (0, x)
    if isinstance(x, str):
        return (1, x)
    if isinstance(x, tuple):
        return (2, tuple(order_key(e) for e in x))
    return (3, repr(x))


def sorted_ids(xs: Iterable[Any]) -> list:
    return sorted(xs, key=order_key)


def _check_alphabet(name: str, alphabet: Sequence[Symbol]) -> tuple:
    alphabet = tuple(alphabet)
    if not alphabet:
        raise AlphabetError(f"{name} alphabet is empty")
    if len(set(alphabet)) != len(alphabet):
        raise AlphabetError(f"{name} alphabet has duplicates")
    return tuple(sorted_ids(alphabet))


@dataclass(frozen=True, eq=False)
class MealyMachine:
    states: frozenset
    initial: State
    inputs: tuple
    outputs: tuple
    delta: Mapping[tuple, tuple]
    _succ: dict = field(init=False, repr=False, compare=False)

    def __init__(self, states, initial, inputs, outputs, delta):
        object.__setattr__(self, "states", frozenset(states))
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "inputs", _check_alphabet("input", inputs))
        object.__setattr__(self, "outputs", _check_alphabet("output", outputs))
        if initial not in self.states:
            raise AlphabetError(f"initial state {initial!r} is not a state")
        in_set, out_set = set(self.inputs), set(self.outputs)
        succ: dict = {s: {} for s in self.states}
        frozen = {}
        for (s, a), (t, b) in delta.items():
            if s not in self.states or t not in self.states:
                raise AlphabetError(f"transition {s!r} -{a!r}-> {t!r} uses an unknown state")
            if a not in in_set:
                raise AlphabetError(f"unknown input symbol {a!r}")
            if b not in out_set:
                raise AlphabetError(f"unknown output symbol {b!r}")
            succ[s][a] = (t, b)
            frozen[(s, a)] = (t, b)
        object.__setattr__(self, "delta", frozen)
        object.__setattr__(self, "_succ", succ)

    # The dict-backed fields make the default dataclass eq unusable with
    # frozenset/tuple mixes, so equality is spelled out.
    def __eq__(self, other: object) -> bool:
        if type(other) is not type(self):
            return NotImplemented
        return (
            self.states == other.states
            and self.initial == other.initial
            and self.inputs == other.inputs
            and self.outputs == other.outputs
            and self.delta == other.delta
            and self._extra_eq(other)
        )

    def _extra_eq(self, other) -> bool:
        return True

    def __repr__(self) -> str:
        return (f"{type(self).__name__}(states={len(self.states)}, initial={self.initial!r}, "
                f"transitions={len(self.delta)})")

    __hash__ = None  # type: ignore[assignment]

    @property
    def trans(self) -> dict:
        return {k: v[0] for k, v in self.delta.items()}

    @property
    def out(self) -> dict:
        return {k: v[1] for k, v in self.delta.items()}

    def transitions_from(self, state: State) -> Mapping[Symbol, tuple]:
        """``input -> (successor, output)`` for one state."""
        try:
            return self._succ[state]
        except KeyError:
            raise AlphabetError(f"unknown state {state!r}") from None

    def sorted_states(self) -> list:
        return sorted_ids(self.states)

    def __len__(self) -> int:
        return len(self.states)

    def relabel(self, fn) -> "MealyMachine":
        """Copy with every state ``s`` renamed to ``fn(s)`` (must be injective)."""
        names = {s: fn(s) for s in self.states}
        if len(set(names.values())) != len(names):
            raise AutomataError("relabelling is not injective")
        delta = {(names[s], a): (names[t], b) for (s, a), (t, b) in self.delta.items()}
        return self._rebuild(set(names.values()), names[self.initial], delta)

    def _rebuild(self, states, initial, delta) -> "MealyMachine":
        return MealyMachine(states, initial, self.inputs, self.outputs, delta)


class Fsrs(MealyMachine):
    """A Mealy machine over ``cont x env`` input pairs.

    Cont-totality is *not* enforced on construction because learned models
    are partial by nature; use :func:`validate_fsrs` to check it.
    """

    def __init__(self, states, initial, cont, env, outputs, delta):
        cont = _check_alphabet("cont", cont)
        env = _check_alphabet("env", env)
        object.__setattr__(self, "cont", cont)
        object.__setattr__(self, "env", env)
        super().__init__(states, initial, list(itertools.product(cont, env)), outputs, delta)

    def _extra_eq(self, other) -> bool:
        return self.cont == other.cont and self.env == other.env

    def _rebuild(self, states, initial, delta) -> "Fsrs":
        return Fsrs(states, initial, self.cont, self.env, self.outputs, delta)


def step(m: MealyMachine, s: State, a: Symbol) -> Optional[tuple]:
    """One transition: ``(successor, output)`` or ``None`` when undefined."""
    if a not in m.inputs:
        raise AlphabetError(f"unknown input symbol {a!r}")
    return m.transitions_from(s).get(a)


def run(m: MealyMachine, word: Sequence[Symbol]) -> Optional[tuple]:
    """Fold :func:`step` from the initial state.

    Returns ``(final_state, last_output)``; the empty word gives
    ``(initial, None)``.  ``None`` if some step is undefined.
    """
    s, b = m.initial, None
    for a in word:
        nxt = step(m, s, a)
        if nxt is None:
            return None
        s, b = nxt
    return s, b


def run_from(m: MealyMachine, s: State, word: Sequence[Symbol]) -> Optional[tuple]:
    b = None
    for a in word:
        nxt = step(m, s, a)
        if nxt is None:
            return None
        s, b = nxt
    return s, b


def output_word(m: MealyMachine, word: Sequence[Symbol]) -> Optional[list]:
    s, outs = m.initial, []
    for a in word:
        nxt = step(m, s, a)
        if nxt is None:
            return None
        s, b = nxt
        outs.append(b)
    return outs


def validate_fsrs(m: Fsrs) -> list[tuple]:
    """``(state, cont_action)`` pairs with no defined env response."""
    violations = []
    for s in m.sorted_states():
        moves = m.transitions_from(s)
        for a1 in m.cont:
            if not any((a1, a2) in moves for a2 in m.env):
                violations.append((s, a1))
    return violations


def reachable_states(m: MealyMachine) -> set:
    seen = {m.initial}
    queue = deque([m.initial])
    while queue:
        s = queue.popleft()
        for t, _ in m.transitions_from(s).values():
            if t not in seen:
                seen.add(t)
                queue.append(t)
    return seen


def abstracts(candidate: MealyMachine, reference: MealyMachine) -> bool:
    """True iff every word defined in ``reference`` is defined in ``candidate``
    with the same output.

    Decided by BFS over reachable state pairs of the synchronised product.
    """
    if candidate.inputs != reference.inputs:
        raise AlphabetError("input alphabets differ")
    start = (reference.initial, candidate.initial)
    seen = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        cmoves = candidate.transitions_from(c)
        for a, (r2, b) in reference.transitions_from(r).items():
            hit = cmoves.get(a)
            if hit is None or hit[1] != b:
                return False
            pair = (r2, hit[0])
            if pair not in seen:
                seen.add(pair)
                queue.append(pair)
    return True


def isomorphic(m1: MealyMachine, m2: MealyMachine) -> bool:
    """Equality up to state renaming (reachable parts only)."""
    if m1.inputs != m2.inputs:
        return False
    if len(reachable_states(m1)) != len(reachable_states(m2)):
        return False
    fwd = {m1.initial: m2.initial}
    queue = deque([m1.initial])
    while queue:
        s = queue.popleft()
        t = fwd[s]
        moves1, moves2 = m1.transitions_from(s), m2.transitions_from(t)
        if moves1.keys() != moves2.keys():
            return False
        for a, (s2, b1) in moves1.items():
            t2, b2 = moves2[a]
            if b1 != b2:
                return False
            if s2 in fwd:
                if fwd[s2] != t2:
                    return False
            else:
                fwd[s2] = t2
                queue.append(s2)
    return len(set(fwd.values())) == len(fwd)


@dataclass(frozen=True, eq=False)
class SafetyAutomaton:
    """Complete automaton over outputs whose unsafe states are absorbing."""

    states: frozenset
    initial: State
    safe: frozenset
    alphabet: tuple
    delta: Mapping[tuple, State]

    def __init__(self, states, initial, safe, alphabet, delta):
        object.__setattr__(self, "states", frozenset(states))
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "safe", frozenset(safe))
        object.__setattr__(self, "alphabet", _check_alphabet("spec", alphabet))
        object.__setattr__(self, "delta", dict(delta))
        problems = spec_problems(self)
        if problems:
            raise SpecValidationError("; ".join(problems))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SafetyAutomaton):
            return NotImplemented
        return (
            self.states == other.states
            and self.initial == other.initial
            and self.safe == other.safe
            and self.alphabet == other.alphabet
            and self.delta == other.delta
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"SafetyAutomaton(states={len(self.states)}, symbols={len(self.alphabet)})"

    @property
    def unsafe(self) -> frozenset:
        return self.states - self.safe

    def next(self, q: State, symbol: Symbol) -> State:
        try:
            return self.delta[(q, symbol)]
        except KeyError:
            if symbol not in self.alphabet:
                raise AlphabetError(f"unknown spec symbol {symbol!r}") from None
            raise AlphabetError(f"unknown spec state {q!r}") from None

    def final_state(self, word: Iterable[Symbol]) -> State:
        q = self.initial
        for b in word:
            q = self.next(q, b)
        return q


def spec_problems(spec: SafetyAutomaton) -> list[str]:
    problems = []
    if spec.initial not in spec.states:
        problems.append(f"initial state {spec.initial!r} is not a state")
    if not spec.safe <= spec.states:
        problems.append("safe set is not a subset of the states")
    if spec.initial not in spec.safe:
        problems.append("initial state is unsafe")
    for (q, b), q2 in spec.delta.items():
        if q not in spec.states or q2 not in spec.states:
            problems.append(f"transition {q!r} -{b!r}-> {q2!r} uses an unknown state")
        if b not in spec.alphabet:
            problems.append(f"transition uses unknown symbol {b!r}")
    for q in sorted_ids(spec.states):
        for b in spec.alphabet:
            q2 = spec.delta.get((q, b))
            if q2 is None:
                problems.append(f"transition function not total at ({q!r}, {b!r})")
            elif q not in spec.safe and q2 in spec.safe:
                problems.append(f"unsafe region not absorbing: {q!r} -{b!r}-> {q2!r}")
    return problems


def sa_accepts(spec: SafetyAutomaton, word: Iterable[Symbol]) -> bool:
    return spec.final_state(word) in spec.safe


def avoid_spec(alphabet: Iterable[Symbol], bad: Iterable[Symbol]) -> SafetyAutomaton:
    """Two-state spec that becomes unsafe forever on any ``bad`` symbol."""
    alphabet = sorted_ids(alphabet)
    bad = set(bad)
    delta = {}
    for b in alphabet:
        delta[("ok", b)] = "bad" if b in bad else "ok"
        delta[("bad", b)] = "bad"
    return SafetyAutomaton({"ok", "bad"}, "ok", {"ok"}, alphabet, delta)


@dataclass(frozen=True)
class Mdp:
    states: frozenset
    initial: State
    cont: tuple
    outputs: tuple
    delta: Mapping[tuple, Mapping[tuple, float]]

    def distribution(self, s: State, a1: Symbol) -> Mapping[tuple, float]:
        return self.delta.get((s, a1), {})


EnvStrategy = Mapping[tuple, Mapping[Symbol, float]]
"""Memoryless environment strategy: ``(state, cont) -> {env: prob}``."""

TOLERANCE = 1e-9


def validate_strategy(m: Fsrs, tau: EnvStrategy) -> None:
    for (s, a1), dist in tau.items():
        total = sum(dist.values())
        if abs(total - 1.0) > TOLERANCE:
            raise StrategyError(f"tau({s!r}, {a1!r}) sums to {total}")
        moves = m.transitions_from(s)
        for a2, p in dist.items():
            if p > 0 and (a1, a2) not in moves:
                raise StrategyError(f"tau({s!r}, {a1!r}) puts mass on undefined env action {a2!r}")


def induce_mdp(m: Fsrs, tau: EnvStrategy) -> Mdp:
    """The MDP obtained by letting ``tau`` resolve every env choice."""
    validate_strategy(m, tau)
    delta: dict = {}
    for (s, a1), dist in tau.items():
        moves = m.transitions_from(s)
        outcome: dict = {}
        for a2, p in dist.items():
            if p <= 0:
                continue
            key = moves[(a1, a2)]
            outcome[key] = outcome.get(key, 0.0) + p
        delta[(s, a1)] = outcome
    return Mdp(m.states, m.initial, m.cont, m.outputs, delta)
