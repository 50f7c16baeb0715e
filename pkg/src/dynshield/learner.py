"""Passive Mealy-machine learning by red-blue state merging.

The merge loop is the classic blue-fringe RPNI for Mealy machines with one
extra gate: a blue state may only be folded into a red state when the two
agree on some input word of length at least ``min(min_depth, height)``,
where ``height`` is the depth of the blue state's subtree.
"""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, Iterator, Optional, Sequence

from .automata import AutomataError, Fsrs, MealyMachine, order_key, sorted_ids

Symbol = Hashable


class SampleError(AutomataError, ValueError):
    """Training data is not prefix-closed or not output-deterministic."""


class SampleSet:
    """Prefix-closed map from non-empty input words to outputs.

    Stored as a trie so that adding an episode of length ``n`` costs O(n)
    rather than materialising all ``n`` prefixes.  The root stands for the
    empty word and carries no output.
    """

    def __init__(self) -> None:
        self._children: list[dict] = [{}]
        self._out: list = [None]

    @classmethod
    def from_dict(cls, data: dict) -> "SampleSet":
        """Build from ``{word: output}``; rejects data that is not prefix-closed."""
        words = sorted(data, key=lambda w: (len(w), tuple(order_key(a) for a in w)))
        d = cls()
        for w in words:
            w = tuple(w)
            if not w:
                raise SampleError("the empty word carries no output")
            node = d._find(w[:-1])
            if node is None:
                raise SampleError(f"sample set is not prefix-closed: {w!r} has no parent {w[:-1]!r}")
            d._add_child(node, w[-1], data[w], w)
        return d

    @classmethod
    def from_runs(cls, runs: Iterable[tuple[Sequence, Sequence]]) -> "SampleSet":
        d = cls()
        for inputs, outputs in runs:
            d.add_run(inputs, outputs)
        return d

    def _find(self, word) -> Optional[int]:
        node = 0
        for a in word:
            node = self._children[node].get(a)
            if node is None:
                return None
        return node

    def _add_child(self, node: int, a, b, word=None) -> int:
        child = self._children[node].get(a)
        if child is not None:
            if self._out[child] != b:
                raise SampleError(
                    f"conflicting outputs {self._out[child]!r} and {b!r} for the same input word"
                    + (f" {word!r}" if word is not None else "")
                )
            return child
        child = len(self._out)
        self._children[node][a] = child
        self._children.append({})
        self._out.append(b)
        return child

    def add_run(self, inputs: Sequence, outputs: Sequence) -> None:
        """Add every prefix of one observed run."""
        if len(inputs) != len(outputs):
            raise SampleError("inputs and outputs differ in length")
        node = 0
        for a, b in zip(inputs, outputs):
            node = self._add_child(node, a, b)

    def __len__(self) -> int:
        return len(self._out) - 1

    def __contains__(self, word) -> bool:
        return bool(word) and self._find(tuple(word)) is not None

    def __getitem__(self, word):
        node = self._find(tuple(word)) if word else None
        if node is None:
            raise KeyError(word)
        return self._out[node]

    def items(self) -> Iterator[tuple[tuple, object]]:
        stack = [(0, ())]
        while stack:
            node, word = stack.pop()
            for a, child in self._children[node].items():
                w = word + (a,)
                yield w, self._out[child]
                stack.append((child, w))

    def as_dict(self) -> dict:
        return dict(self.items())

    def input_symbols(self) -> set:
        return {a for ch in self._children for a in ch}

    def output_symbols(self) -> set:
        return set(self._out[1:])

    def max_length(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            stack.extend((c, d + 1) for c in self._children[node].values())
        return best


@dataclass
class Ptmm:
    """Prefix-tree Mealy machine; node ids follow shortlex order of words."""

    inputs: tuple
    outputs: tuple
    parent: list[int]
    via: list[int]  # input index on the edge from the parent
    out: list  # output on the incoming edge (None at the root)
    children: list[dict]  # input index -> child node
    height: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.parent)

    def word(self, node: int) -> tuple:
        w = []
        while node:
            w.append(self.inputs[self.via[node]])
            node = self.parent[node]
        return tuple(reversed(w))

    def node(self, word: Sequence) -> int:
        idx = {a: i for i, a in enumerate(self.inputs)}
        node = 0
        for a in word:
            node = self.children[node][idx[a]]
        return node

    def machine(self) -> MealyMachine:
        """The tree as a :class:`MealyMachine` whose states are input words."""
        words = [self.word(n) for n in range(len(self))]
        delta = {}
        for n, ch in enumerate(self.children):
            for a, c in ch.items():
                delta[(words[n], self.inputs[a])] = (words[c], self.out[c])
        return MealyMachine(words, (), self.inputs, self.outputs, delta)


def build_ptmm(d: SampleSet, inputs: Optional[Iterable] = None, outputs: Optional[Iterable] = None) -> Ptmm:
    """Number the sample trie breadth-first with sorted children (= shortlex)."""
    inputs = tuple(sorted_ids(set(inputs) if inputs is not None else d.input_symbols()))
    outputs = tuple(sorted_ids(set(outputs) if outputs is not None else d.output_symbols()))
    idx = {a: i for i, a in enumerate(inputs)}
    missing = d.input_symbols() - idx.keys()
    if missing:
        raise SampleError(f"inputs outside the alphabet: {sorted_ids(missing)[:5]}")
    parent, via, out, children = [0], [-1], [None], [{}]
    queue = deque([(0, 0)])  # (trie node, ptmm node)
    while queue:
        tn, pn = queue.popleft()
        kids = sorted(((idx[a], c) for a, c in d._children[tn].items()))
        for ai, tc in kids:
            cn = len(parent)
            parent.append(pn)
            via.append(ai)
            out.append(d._out[tc])
            children.append({})
            children[pn][ai] = cn
            queue.append((tc, cn))
    height = [0] * len(parent)
    for n in range(len(parent) - 1, 0, -1):
        p = parent[n]
        if height[n] + 1 > height[p]:
            height[p] = height[n] + 1
    return Ptmm(inputs, outputs, parent, via, out, children, height)


class MergeHypothesis:
    """Quotient of a PTMM under construction, with its red and blue sets.

    States are PTMM node ids.  A merged-away node is simply never reached
    again.  Blue nodes are kept in a heap keyed by their shortlex access word
    in the current quotient.
    """

    def __init__(self, ptmm: Ptmm):
        self.ptmm = ptmm
        self.trans: list[dict] = [
            {a: (c, ptmm.out[c]) for a, c in ch.items()} for ch in ptmm.children
        ]
        self.red: list[int] = []
        self.rank: dict[int, int] = {}
        self.is_red = bytearray(len(ptmm))
        self.access: dict[int, tuple] = {}
        self._heap: list = []
        self._blue_edge: dict[int, tuple[int, int]] = {}
        # Gate prefilters.  A red's readable (input, output) words only grow
        # under merges, so these grow-only indexes never drop a true match.
        self._by_edge: dict[tuple, list[int]] = {}  # edge -> reds with it
        self._by_pair: dict[tuple, set] = {}  # two-step word -> reds reading it
        self._preds: dict[int, list] = {}  # node -> (red, edge) pointing at it
        self._make_red(0, ())

    # -- blue fringe ---------------------------------------------------------

    def _push_blue(self, node: int, parent: int, a: int) -> None:
        acc = self.access[parent] + (a,)
        self._blue_edge[node] = (parent, a)
        heapq.heappush(self._heap, (len(acc), acc, node))

    def _push_children(self, node: int) -> None:
        for a, (c, _) in self.trans[node].items():
            if not self.is_red[c]:
                self._push_blue(c, node, a)

    @property
    def blue(self) -> list[int]:
        return [n for _, _, n in sorted(self._heap)]

    def pop_blue(self) -> Optional[tuple[int, tuple]]:
        if not self._heap:
            return None
        _, acc, node = heapq.heappop(self._heap)
        return node, acc

    def _make_red(self, node: int, acc: tuple) -> None:
        self.rank[node] = len(self.red)
        self.red.append(node)
        self.is_red[node] = 1
        self.access[node] = acc
        for a, (c, b) in self.trans[node].items():
            self._red_edge(node, a, b, c)
        self._push_children(node)

    def _red_edge(self, red: int, a: int, b, dst: int) -> None:
        """Index a red's edge ``(a, b)`` to ``dst`` (new or retargeted)."""
        e1 = (a, b)
        self._by_edge.setdefault(e1, []).append(red)
        self._preds.setdefault(dst, []).append((red, e1))
        for a2, (_, b2) in self.trans[dst].items():
            self._by_pair.setdefault((e1, (a2, b2)), set()).add(red)

    def _grew(self, node: int, a: int, b) -> None:
        """``node`` gained edge ``(a, b)``; reds pointing at it gain a two-step word."""
        for red, e1 in self._preds.get(node, ()):
            self._by_pair.setdefault((e1, (a, b)), set()).add(red)

    def promote(self, node: int, acc: tuple) -> None:
        del self._blue_edge[node]
        self._make_red(node, acc)

    def candidates(self, blue: int, need: int) -> list[int]:
        """Reds worth testing, in promotion order.

        With ``need >= 1`` a red must share an (input, output) edge with blue,
        with ``need >= 2`` a two-step word.
        """
        if need == 0:
            return self.red
        found: set = set()
        trans = self.trans
        if need == 1:
            for a, (_, b) in trans[blue].items():
                found.update(self._by_edge.get((a, b), ()))
        else:
            for a, (c, b) in trans[blue].items():
                for a2, (_, b2) in trans[c].items():
                    found.update(self._by_pair.get(((a, b), (a2, b2)), ()))
        return sorted(found, key=self.rank.__getitem__)

    # -- merge tests ---------------------------------------------------------

    def compatible(self, red: int, blue: int) -> bool:
        """Would folding ``blue`` into ``red`` keep the quotient deterministic?

        Runs the fold against an overlay so the hypothesis is left untouched.
        """
        trans = self.trans
        overlay: dict[int, dict] = {}
        queue = deque([(red, blue)])  # breadth first: most conflicts sit near the top
        while queue:
            q, t = queue.popleft()
            tq = trans[q]
            ov = overlay.get(q)
            for a, (td, to) in trans[t].items():
                e = tq.get(a)
                if e is None and ov is not None:
                    e = ov.get(a)
                if e is None:
                    if ov is None:
                        ov = overlay[q] = {}
                    ov[a] = (td, to)
                    continue
                if e[1] != to:
                    return False
                dst = e[0]
                if dst == blue:  # the parent edge of blue is about to point at red
                    dst = red
                queue.append((dst, td))
        return True

    def agreement_depth(self, red: int, blue: int, cap: Optional[int] = None) -> int:
        """Length of the longest input word with equal outputs from both states.

        ``red`` is read in the current quotient, ``blue`` in its subtree.  With
        ``cap`` the search stops as soon as that depth is reached.
        """
        trans = self.trans
        best = 0
        stack = [(red, blue, 0)]
        while stack:
            q, t, depth = stack.pop()
            if depth > best:
                best = depth
                if cap is not None and best >= cap:
                    return best
            tq = trans[q]
            for a, (td, to) in trans[t].items():
                e = tq.get(a)
                if e is not None and e[1] == to:
                    stack.append((e[0], td, depth + 1))
        return best

    def subtree_height(self, node: int, cap: Optional[int] = None) -> int:
        trans = self.trans
        best = 0
        stack = [(node, 0)]
        while stack:
            n, depth = stack.pop()
            if depth > best:
                best = depth
                if cap is not None and best >= cap:
                    return best
            for c, _ in trans[n].values():
                stack.append((c, depth + 1))
        return best

    def gate(self, red: int, blue: int, min_depth: int) -> bool:
        """Agreement of at least ``min(min_depth, height of blue)`` steps."""
        need = self.subtree_height(blue, cap=min_depth) if min_depth > 0 else 0
        return need == 0 or self.agreement_depth(red, blue, cap=need) >= need

    # -- merge ----------------------------------------------------------------

    def merge(self, red: int, blue: int) -> None:
        """Redirect blue's incoming edge to red and fold blue's subtree in."""
        parent, a = self._blue_edge.pop(blue)
        trans = self.trans
        trans[parent][a] = (red, trans[parent][a][1])
        self._red_edge(parent, a, trans[parent][a][1], red)
        stack = [(red, blue)]
        while stack:
            q, t = stack.pop()
            tq = trans[q]
            for a, (td, to) in trans[t].items():
                e = tq.get(a)
                if e is None:
                    tq[a] = (td, to)
                    self._grew(q, a, to)
                    if self.is_red[q]:
                        self._push_blue(td, q, a)
                        self._red_edge(q, a, to, td)
                    continue
                if e[1] != to:
                    raise AssertionError(f"fold conflict at node {q} on input {a}: merge precondition violated")
                stack.append((e[0], td))
            trans[t] = {}

    # -- result ----------------------------------------------------------------

    def to_machine(self) -> MealyMachine:
        if self._heap:
            raise AutomataError("hypothesis still has blue states")
        return MealyMachine(*self._quotient_parts())

    def _quotient_parts(self):
        names = {n: i for i, n in enumerate(self.red)}
        inputs = self.ptmm.inputs
        delta = {}
        for n in self.red:
            for a, (c, b) in self.trans[n].items():
                delta[(names[n], inputs[a])] = (names[c], b)
        return list(range(len(self.red))), 0, inputs, self.ptmm.outputs, delta


def rpni_hypothesis(ptmm: Ptmm, min_depth: int = 0) -> MergeHypothesis:
    """Run the red-blue loop to completion and return the final hypothesis."""
    if min_depth < 0:
        raise ValueError("min_depth must be non-negative")
    h = MergeHypothesis(ptmm)
    while True:
        popped = h.pop_blue()
        if popped is None:
            return h
        blue, acc = popped
        need = h.subtree_height(blue, cap=min_depth) if min_depth > 0 else 0
        for red in h.candidates(blue, need):
            if need > 1 and h.agreement_depth(red, blue, cap=need) < need:
                continue
            if h.compatible(red, blue):
                h.merge(red, blue)
                break
        else:
            h.promote(blue, acc)


def rpni(
    d: SampleSet,
    min_depth: int = 0,
    inputs: Optional[Iterable] = None,
    outputs: Optional[Iterable] = None,
) -> MealyMachine:
    """Learn a Mealy machine consistent with ``d``.

    States of the result are ``0..n-1`` in shortlex order of their access
    words.  ``min_depth=0`` gives plain RPNI.
    """
    ptmm = build_ptmm(d, inputs, outputs)
    if not ptmm.inputs or not ptmm.outputs:
        raise SampleError("alphabets are empty; pass them explicitly for empty samples")
    return rpni_hypothesis(ptmm, min_depth).to_machine()


def rpni_fsrs(d: SampleSet, min_depth: int, cont: Iterable, env: Iterable, outputs: Iterable) -> Fsrs:
    """:func:`rpni` for data over ``(cont, env)`` pairs, returned as an :class:`Fsrs`."""
    cont, env = sorted_ids(cont), sorted_ids(env)
    pairs = [(a1, a2) for a1 in cont for a2 in env]
    ptmm = build_ptmm(d, pairs, outputs)
    states, init, _, outs, delta = rpni_hypothesis(ptmm, min_depth)._quotient_parts()
    return Fsrs(states, init, cont, env, outs, delta)


def is_consistent(m: MealyMachine, d: SampleSet) -> bool:
    """Does ``m`` reproduce every output recorded in ``d``?"""
    stack = [(0, m.initial)]
    children, out = d._children, d._out
    while stack:
        node, s = stack.pop()
        moves = m.transitions_from(s)
        for a, child in children[node].items():
            hit = moves.get(a)
            if hit is None or hit[1] != out[child]:
                return False
            stack.append((child, hit[0]))
    return True


@dataclass
class RunLog:
    """Lengths of completed episodes, used to pick the merge gate depth."""

    max_ep_len: int
    min_depth_max: int = 5
    lengths: list[int] = field(default_factory=list)

    def record(self, length: int) -> None:
        if not 1 <= length <= self.max_ep_len:
            raise ValueError(f"episode length {length} outside [1, {self.max_ep_len}]")
        self.lengths.append(length)


def adaptive_min_depth(log: RunLog) -> int:
    """Gate depth that shrinks as episodes get longer.

    ``floor(min(|R| * ceil(MaxEpLen - mean) / total, cap))`` evaluated exactly.
    With no episodes yet the cap is returned.
    """
    n = len(log.lengths)
    if n == 0:
        return log.min_depth_max
    total = sum(log.lengths)
    gap = math.ceil(Fraction(log.max_ep_len * n - total, n))
    value = min(Fraction(n * gap, total), Fraction(log.min_depth_max))
    return math.floor(value)
