"""Safety games built from a learned model and a spec, and the shields they yield.

Game states are indexed ``0..n-1`` with ``0`` the initial state.  Each state
carries a label ``(model_state, spec_state)``; the model component is
:data:`SINK` for states reached through a transition the model does not know.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

from .automata import AlphabetError, AutomataError, Fsrs, SafetyAutomaton, sorted_ids
from .textio import ParseError, _expect_header, _lines, _q, _tok

log = logging.getLogger(__name__)


class _Sink:
    """The fresh model state that absorbs every undefined transition."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "SINK"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, _Sink)

    def __hash__(self) -> int:
        return hash("dynshield.SINK")

    def __reduce__(self):
        return (_sink, ())


def _sink() -> "_Sink":
    return SINK


SINK = _Sink()
SINK_TOKEN = "@sink"


@dataclass(frozen=True, eq=False)
class SafetyGame:
    """Explicit two-player safety game, stored sparsely.

    ``moves[g][i]`` maps env indices to ``(successor, predicted_output)`` for
    the moves under ``cont[i]`` that are listed explicitly; every other env
    action leads to ``default[g]``.  ``predicted_output`` is the model's
    output on that move, or ``None`` when there is nothing to check.
    """

    labels: tuple
    cont: tuple
    env: tuple
    moves: tuple
    default: tuple
    safe: frozenset
    check: bool = field(default=True, repr=False)  # off for games built by compose

    initial = 0

    def __post_init__(self):
        if not self.check:
            return
        n = len(self.labels)
        if n == 0:
            raise AutomataError("a game needs at least one state")
        if len(self.moves) != n or len(self.default) != n:
            raise AutomataError("move table size differs from state count")
        ne = len(self.env)
        for g, row in enumerate(self.moves):
            if len(row) != len(self.cont):
                raise AutomataError(f"state {g} does not list every cont action")
            for moves in row:
                if len(moves) < ne and self.default[g] is None:
                    raise AutomataError(f"state {g} has missing moves and no default successor")
                for j, (t, _) in moves.items():
                    if not (0 <= j < ne and 0 <= t < n):
                        raise AutomataError(f"move out of range at state {g}")
            if self.default[g] is not None and not 0 <= self.default[g] < n:
                raise AutomataError(f"default successor of {g} out of range")

    @classmethod
    def from_table(cls, labels, cont, env, succ, safe) -> "SafetyGame":
        """Build from a dense table ``succ[g][i][j]``."""
        moves = tuple(tuple({j: (t, None) for j, t in enumerate(r)} for r in row) for row in succ)
        return cls(tuple(labels), tuple(cont), tuple(env), moves, (None,) * len(labels), frozenset(safe))

    def __len__(self) -> int:
        return len(self.labels)

    def step(self, g: int, i: int, j: int) -> tuple:
        """``(successor, predicted_output)`` for indices ``i`` (cont), ``j`` (env)."""
        hit = self.moves[g][i].get(j)
        return hit if hit is not None else (self.default[g], None)

    def targets(self, g: int, i: int) -> frozenset:
        """All successors of ``g`` under ``cont[i]``, over every env action."""
        return self.target_table[g][i]

    @cached_property
    def target_table(self) -> tuple:
        ne = len(self.env)
        table = []
        for g, row in enumerate(self.moves):
            d = self.default[g]
            cells = []
            for moves in row:
                out = {t for t, _ in moves.values()}
                if len(moves) < ne:
                    out.add(d)
                cells.append(frozenset(out))
            table.append(tuple(cells))
        return tuple(table)

    def successor(self, g: int, a1, a2) -> int:
        return self.step(g, self.cont.index(a1), self.env.index(a2))[0]

    @property
    def succ(self) -> tuple:
        """Dense successor table ``succ[g][i][j]``."""
        return tuple(
            tuple(tuple(self.step(g, i, j)[0] for j in range(len(self.env))) for i in range(len(self.cont)))
            for g in range(len(self))
        )

    def index(self, label) -> int:
        return self.labels.index(label)


def compose(model: Fsrs, spec: SafetyAutomaton) -> SafetyGame:
    """Product of model and spec with an optimistic, safe sink.

    Undefined model moves go to ``(SINK, q)`` with the spec state frozen.
    Only states reachable from the initial pair are built.
    """
    if set(model.outputs) != set(spec.alphabet):
        raise AlphabetError(
            f"spec alphabet {list(spec.alphabet)} differs from model outputs {list(model.outputs)}"
        )
    ci = {a: i for i, a in enumerate(model.cont)}
    ei = {a: j for j, a in enumerate(model.env)}
    nc = len(model.cont)
    start = (model.initial, spec.initial)
    index = {start: 0}
    labels = [start]
    moves_out: list = []
    default: list = []
    queue = deque([start])

    def intern(label) -> int:
        k = index.get(label)
        if k is None:
            k = index[label] = len(labels)
            labels.append(label)
            queue.append(label)
        return k

    while queue:
        lm, q = queue.popleft()
        row = [dict() for _ in range(nc)]
        if lm != SINK:
            for (a1, a2), (nxt, out) in model.transitions_from(lm).items():
                row[ci[a1]][ei[a2]] = (intern((nxt, spec.next(q, out))), out)
        default.append(intern((SINK, q)))
        moves_out.append(tuple(row))
    safe = frozenset(i for i, (lm, q) in enumerate(labels) if lm == SINK or q in spec.safe)
    return SafetyGame(tuple(labels), model.cont, model.env, tuple(moves_out), tuple(default), safe, check=False)


def winning_region(game: SafetyGame) -> frozenset:
    """Greatest fixpoint of ``X -> {g in F | exists a1. forall a2. succ in X}``.

    Worklist version: a ``(state, cont)`` pair goes bad once any successor
    leaves the region; a state leaves when it is unsafe or has no good pair.
    """
    n = len(game)
    nc = len(game.cont)
    preds: list[list] = [[] for _ in range(n)]
    for g, row in enumerate(game.target_table):
        for i, ts in enumerate(row):
            for t in ts:
                preds[t].append((g, i))
    good = [[True] * nc for _ in range(n)]
    good_count = [nc] * n
    alive = [True] * n
    queue = deque()
    for g in range(n):
        if g not in game.safe:
            alive[g] = False
            queue.append(g)
    while queue:
        t = queue.popleft()
        for g, i in preds[t]:
            if good[g][i]:
                good[g][i] = False
                good_count[g] -= 1
                if good_count[g] == 0 and alive[g]:
                    alive[g] = False
                    queue.append(g)
    return frozenset(g for g in range(n) if alive[g])


class PreemptiveShield:
    """Allowed-action tables plus a runtime cursor.

    The tables (game, region, allowed sets) are never mutated and may be
    shared; :meth:`fork` gives a fresh cursor over the same tables.
    """

    def __init__(self, game: SafetyGame, winning: frozenset, allowed: tuple):
        self.game = game
        self.winning = winning
        self.allowed = allowed  # per state, tuple of cont actions (empty outside W)
        self.state = game.initial
        self.diverged = False
        self.fallbacks = 0
        self._ci = {a: i for i, a in enumerate(game.cont)}
        self._ei = {a: j for j, a in enumerate(game.env)}

    def fork(self) -> "PreemptiveShield":
        return PreemptiveShield(self.game, self.winning, self.allowed)

    def allowed_at(self, g: int, diverged: bool = False) -> tuple:
        """Runtime answer at state ``g``: the table entry, or all of cont."""
        if diverged or not self.allowed[g]:
            return self.game.cont
        return self.allowed[g]

    def allowed_actions(self) -> tuple:
        acts = self.allowed_at(self.state, self.diverged)
        if not self.diverged and not self.allowed[self.state]:
            self.fallbacks += 1
            log.debug("shield fallback at game state %r", self.game.labels[self.state])
        return acts

    def next_state(self, g: int, diverged: bool, a1, a2, observed) -> tuple[int, bool]:
        """Cursor update: follow the game unless the model mispredicted."""
        if diverged:
            return g, True
        try:
            i, j = self._ci[a1], self._ei[a2]
        except KeyError:
            raise AlphabetError(f"unknown action pair ({a1!r}, {a2!r})") from None
        t, pred = self.game.step(g, i, j)
        if pred is not None and pred != observed:
            return g, True
        return t, False

    def advance(self, a1, a2, observed) -> None:
        self.state, self.diverged = self.next_state(self.state, self.diverged, a1, a2, observed)

    def reset(self) -> None:
        self.state = self.game.initial
        self.diverged = False

    @property
    def label(self):
        return self.game.labels[self.state]


def synthesize_preemptive(game: SafetyGame, winning: Optional[frozenset] = None) -> PreemptiveShield:
    if winning is None:
        winning = winning_region(game)
    allowed = []
    for g in range(len(game)):
        if g not in winning:
            allowed.append(())
            continue
        allowed.append(tuple(
            a1 for i, a1 in enumerate(game.cont) if game.targets(g, i) <= winning
        ))
    return PreemptiveShield(game, winning, tuple(allowed))


def shield_from_model(model: Fsrs, spec: SafetyAutomaton) -> PreemptiveShield:
    game = compose(model, spec)
    return synthesize_preemptive(game, winning_region(game))


class PostPosedShield:
    """Replaces a disallowed proposal with the smallest allowed action."""

    def __init__(self, shield: PreemptiveShield):
        self.shield = shield

    def substitute_at(self, g: int, a1, diverged: bool = False):
        acts = self.shield.allowed_at(g, diverged)
        if a1 in acts:
            return a1
        return sorted_ids(acts)[0]

    def substitute(self, a1):
        return self.substitute_at(self.shield.state, a1, self.shield.diverged)

    def advance(self, a1, a2, observed) -> None:
        self.shield.advance(a1, a2, observed)

    def reset(self) -> None:
        self.shield.reset()


def synthesize_postposed(shield: PreemptiveShield) -> PostPosedShield:
    return PostPosedShield(shield)


@dataclass(frozen=True)
class Violation:
    """A shortest run under the shield that ends in an unsafe spec state."""

    steps: tuple  # of (a1, a2, output)
    truth_state: object
    spec_state: object


def verify_shield(truth: Fsrs, spec: SafetyAutomaton, shield: PreemptiveShield) -> list[Violation]:
    """Explore truth x spec x shield under every shield-allowed strategy.

    Returns one shortest violating run per unsafe product state reached; an
    empty list certifies the shield against ``truth``.
    """
    game = shield.game
    if tuple(truth.cont) != tuple(game.cont) or tuple(truth.env) != tuple(game.env):
        raise AlphabetError("truth and shield use different action alphabets")
    if not set(truth.outputs) <= set(spec.alphabet):
        raise AlphabetError("truth emits outputs outside the spec alphabet")
    start = (truth.initial, spec.initial, game.initial, False)
    parent: dict = {start: None}
    queue = deque([start])
    found = []
    while queue:
        node = queue.popleft()
        t, q, g, div = node
        moves = truth.transitions_from(t)
        for a1 in shield.allowed_at(g, div):
            for a2 in truth.env:
                hit = moves.get((a1, a2))
                if hit is None:
                    continue
                t2, b = hit
                q2 = spec.next(q, b)
                g2, div2 = shield.next_state(g, div, a1, a2, b)
                nxt = (t2, q2, g2, div2)
                if nxt in parent:
                    continue
                parent[nxt] = (node, (a1, a2, b))
                if q2 in spec.safe:
                    queue.append(nxt)
                else:
                    found.append(Violation(_path(parent, nxt), t2, q2))
    return found


def _path(parent: dict, node) -> tuple:
    steps = []
    while parent[node] is not None:
        node, move = parent[node]
        steps.append(move)
    return tuple(reversed(steps))


# -- text format ---------------------------------------------------------------
#
#   shield v1
#   cont a b
#   env x y
#   init <g>
#   unsafe <g> ...
#   allow <g> a+b          one line per winning state
#   d <g> <g'>             successor for every move not listed below
#   t <g> <a1> <a2> <g'> <out|->
#
# Game states are written as ``model|spec`` with ``@sink`` for the sink.

def _label_token(label) -> str:
    lm, q = label
    left = SINK_TOKEN if lm == SINK else _tok(lm)
    right = _tok(q)
    if "|" in left or "|" in right:
        raise AutomataError(f"state name {label!r} contains '|'")
    return f"{left}|{right}"


def serialize_shield(shield: PreemptiveShield) -> str:
    game = shield.game
    names = [_label_token(lab) for lab in game.labels]
    lines = [
        "shield v1",
        "cont " + " ".join(_tok(a) for a in game.cont),
        "env " + " ".join(_tok(a) for a in game.env),
        f"init {names[game.initial]}",
    ]
    unsafe = [names[g] for g in range(len(game)) if g not in game.safe]
    if unsafe:
        lines.append("unsafe " + " ".join(unsafe))
    for g in range(len(game)):
        if shield.allowed[g]:
            lines.append(f"allow {names[g]} " + "+".join(_tok(a) for a in shield.allowed[g]))
    for g in range(len(game)):
        if game.default[g] is not None:
            lines.append(f"d {names[g]} {names[game.default[g]]}")
        for i, a1 in enumerate(game.cont):
            moves = game.moves[g][i]
            for j in sorted(moves):
                t, pred = moves[j]
                out = "-" if pred is None else _tok(pred)
                lines.append(f"t {names[g]} {_tok(a1)} {_tok(game.env[j])} {names[t]} {out}")
    return "\n".join(lines) + "\n"


def parse_shield(text: str) -> PreemptiveShield:
    lines = _lines(text)
    _expect_header(lines, "shield")
    cont = env = init = None
    unsafe: set = set()
    allow: dict = {}
    defaults: dict = {}
    moves: dict = {}
    order: list = []  # source states first, in file order
    seen: set = set()
    targets: list = []

    def see(name):
        if name not in seen:
            seen.add(name)
            order.append(name)

    for lineno, words in lines:
        key = words[0]
        if key in ("cont", "env"):
            if len(words) < 2:
                raise ParseError(lineno, f"empty '{key}' alphabet")
            if key == "cont":
                cont = tuple(words[1:])
            else:
                env = tuple(words[1:])
        elif key == "init":
            if len(words) != 2:
                raise ParseError(lineno, "expected 'init <state>'")
            init = words[1]
            see(init)
        elif key == "unsafe":
            unsafe.update(words[1:])
        elif key == "allow":
            if len(words) != 3:
                raise ParseError(lineno, "expected 'allow <state> a+b+...'")
            allow[words[1]] = tuple(words[2].split("+"))
        elif key == "d":
            if len(words) != 3:
                raise ParseError(lineno, "expected 'd <g> <g2>'")
            defaults[words[1]] = words[2]
            see(words[1])
            targets.append(words[2])
        elif key == "t":
            if len(words) != 6:
                raise ParseError(lineno, "expected 't <g> <a1> <a2> <g2> <out>'")
            if cont is None or env is None:
                raise ParseError(lineno, "transition before cont/env declarations")
            _, g, a1, a2, g2, out = words
            if a1 not in cont or a2 not in env:
                raise ParseError(lineno, f"unknown action pair ({a1}, {a2})")
            if (g, a1, a2) in moves:
                raise ParseError(lineno, "duplicate transition")
            moves[(g, a1, a2)] = (g2, None if out == "-" else out)
            see(g)
            targets.append(g2)
        else:
            raise ParseError(lineno, f"unknown directive {key!r}")
    if cont is None or env is None or init is None:
        raise ParseError(0, "missing cont, env or init line")
    for name in targets:
        see(name)
    order.remove(init)
    order.insert(0, init)
    idx = {name: k for k, name in enumerate(order)}
    ci = {a: i for i, a in enumerate(cont)}
    ej = {a: j for j, a in enumerate(env)}
    table = [[dict() for _ in cont] for _ in order]
    for (g, a1, a2), (g2, out) in moves.items():
        table[idx[g]][ci[a1]][ej[a2]] = (idx[g2], out)

    def label(name):
        lm, q = name.split("|", 1)
        return (SINK if lm == SINK_TOKEN else lm, q)

    try:
        game = SafetyGame(
            tuple(label(n) for n in order), cont, env,
            tuple(tuple(row) for row in table),
            tuple(idx[defaults[n]] if n in defaults else None for n in order),
            frozenset(k for k, n in enumerate(order) if n not in unsafe),
        )
    except AutomataError as exc:
        raise ParseError(0, str(exc)) from None
    allowed = tuple(allow.get(n, ()) for n in order)
    winning = frozenset(k for k, a in enumerate(allowed) if a)
    return PreemptiveShield(game, winning, allowed)


def game_to_dot(shield: PreemptiveShield, name: str = "game") -> str:
    """Graphviz view; losing states are red, unsafe ones double-circled."""
    game = shield.game
    names = [_label_token(lab) for lab in game.labels]
    lines = [f"digraph {_q(name)} {{", "  rankdir=LR;", "  __start [shape=point];"]
    for g in range(len(game)):
        style = "doublecircle" if g not in game.safe else "circle"
        color = "black" if g in shield.winning else "red"
        lines.append(f"  {_q(names[g])} [shape={style}, color={color}];")
    lines.append(f"  __start -> {_q(names[game.initial])};")
    for g in range(len(game)):
        edges: dict = {}
        for i, a1 in enumerate(game.cont):
            for j in sorted(game.moves[g][i]):
                edges.setdefault(game.moves[g][i][j][0], []).append(f"{a1},{game.env[j]}")
        for t in sorted(edges):
            lines.append(f"  {_q(names[g])} -> {_q(names[t])} [label={_q(' '.join(edges[t]))}];")
        d = game.default[g]
        if d is not None and d != g:
            lines.append(f"  {_q(names[g])} -> {_q(names[d])} [style=dashed, label=\"other\"];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def trivial_shield(cont: Sequence, env: Sequence, outputs: Iterable, spec: SafetyAutomaton) -> PreemptiveShield:
    """Shield from a one-state model with no transitions: allows everything."""
    model = Fsrs({0}, 0, cont, env, sorted_ids(set(outputs)), {})
    return shield_from_model(model, spec)
