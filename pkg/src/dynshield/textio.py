"""Line-based text formats and Graphviz export.

Formats (UTF-8, ``#`` starts a comment, blank lines ignored)::

    fsrs v1                      spec v1
    cont a b                     sigma o p
    env x y                      init s0
    out o p                      unsafe bad
    states q0 q1      (optional) t <src> <sym> <dst>
    init q0
    t <src> <cont> <env> <dst> <out>

States and symbols are written with ``str()`` and read back as strings.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Union

from .automata import (
    AutomataError,
    Fsrs,
    MealyMachine,
    SafetyAutomaton,
    SpecValidationError,
    sorted_ids,
    spec_problems,
)

PathLike = Union[str, Path]


class ParseError(AutomataError, ValueError):
    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno
        self.reason = reason


def _tok(x) -> str:
    s = str(x)
    if not s or any(c.isspace() for c in s) or "#" in s or "+" in s or s == "-":
        raise AutomataError(f"{s!r} cannot be written as a token")
    return s


def _lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _expect_header(lines, kind: str):
    try:
        lineno, words = next(lines)
    except StopIteration:
        raise ParseError(0, f"empty input, expected '{kind} v1'") from None
    if words != [kind, "v1"]:
        raise ParseError(lineno, f"expected header '{kind} v1'")


# -- FSRS ------------------------------------------------------------------

def serialize_fsrs(m: Fsrs) -> str:
    out = [
        "fsrs v1",
        "cont " + " ".join(_tok(a) for a in m.cont),
        "env " + " ".join(_tok(a) for a in m.env),
        "out " + " ".join(_tok(b) for b in m.outputs),
        "states " + " ".join(_tok(s) for s in m.sorted_states()),
        f"init {_tok(m.initial)}",
    ]
    for s in m.sorted_states():
        moves = m.transitions_from(s)
        for a in sorted_ids(moves):
            t, b = moves[a]
            out.append(f"t {_tok(s)} {_tok(a[0])} {_tok(a[1])} {_tok(t)} {_tok(b)}")
    return "\n".join(out) + "\n"


def parse_fsrs(text: str) -> Fsrs:
    lines = _lines(text)
    _expect_header(lines, "fsrs")
    alph: dict[str, list[str]] = {}
    states: set[str] = set()
    init = None
    delta: dict = {}
    for lineno, words in lines:
        key = words[0]
        if key in ("cont", "env", "out"):
            if key in alph:
                raise ParseError(lineno, f"duplicate '{key}' line")
            if len(words) < 2:
                raise ParseError(lineno, f"empty '{key}' alphabet")
            if len(set(words[1:])) != len(words) - 1:
                raise ParseError(lineno, f"duplicate symbol in '{key}' alphabet")
            alph[key] = words[1:]
        elif key == "states":
            states.update(words[1:])
        elif key == "init":
            if len(words) != 2:
                raise ParseError(lineno, "expected 'init <state>'")
            if init is not None:
                raise ParseError(lineno, "duplicate 'init' line")
            init = words[1]
        elif key == "t":
            if len(words) != 6:
                raise ParseError(lineno, "expected 't <src> <cont> <env> <dst> <out>'")
            if len(alph) < 3:
                raise ParseError(lineno, "transition before cont/env/out declarations")
            _, src, a1, a2, dst, b = words
            for sym, kind in ((a1, "cont"), (a2, "env"), (b, "out")):
                if sym not in alph[kind]:
                    raise ParseError(lineno, f"unknown {kind} symbol {sym!r}")
            if (src, (a1, a2)) in delta:
                raise ParseError(lineno, f"nondeterministic transition from {src!r} on ({a1}, {a2})")
            delta[(src, (a1, a2))] = (dst, b)
            states.update((src, dst))
        else:
            raise ParseError(lineno, f"unknown directive {key!r}")
    for kind in ("cont", "env", "out"):
        if kind not in alph:
            raise ParseError(0, f"missing '{kind}' line")
    if init is None:
        raise ParseError(0, "missing 'init' line")
    states.add(init)
    return Fsrs(states, init, alph["cont"], alph["env"], alph["out"], delta)


# -- safety automata ---------------------------------------------------------

def serialize_spec(spec: SafetyAutomaton) -> str:
    out = [
        "spec v1",
        "sigma " + " ".join(_tok(b) for b in spec.alphabet),
        f"init {_tok(spec.initial)}",
        "unsafe " + " ".join(_tok(q) for q in sorted_ids(spec.unsafe)),
    ]
    for q in sorted_ids(spec.states):
        for b in spec.alphabet:
            out.append(f"t {_tok(q)} {_tok(b)} {_tok(spec.delta[(q, b)])}")
    return "\n".join(out).rstrip() + "\n"


def parse_spec(text: str) -> SafetyAutomaton:
    lines = _lines(text)
    _expect_header(lines, "spec")
    sigma = None
    init = None
    unsafe: set[str] = set()
    states: set[str] = set()
    delta: dict = {}
    for lineno, words in lines:
        key = words[0]
        if key == "sigma":
            if sigma is not None:
                raise ParseError(lineno, "duplicate 'sigma' line")
            if len(words) < 2 or len(set(words[1:])) != len(words) - 1:
                raise ParseError(lineno, "sigma must list distinct symbols")
            sigma = words[1:]
        elif key == "init":
            if len(words) != 2 or init is not None:
                raise ParseError(lineno, "expected a single 'init <state>' line")
            init = words[1]
        elif key == "unsafe":
            unsafe.update(words[1:])
        elif key == "t":
            if len(words) != 4:
                raise ParseError(lineno, "expected 't <src> <sym> <dst>'")
            if sigma is None:
                raise ParseError(lineno, "transition before 'sigma' line")
            _, src, b, dst = words
            if b not in sigma:
                raise ParseError(lineno, f"unknown symbol {b!r}")
            if (src, b) in delta:
                raise ParseError(lineno, f"nondeterministic transition from {src!r} on {b!r}")
            delta[(src, b)] = dst
            states.update((src, dst))
        else:
            raise ParseError(lineno, f"unknown directive {key!r}")
    if sigma is None:
        raise ParseError(0, "missing 'sigma' line")
    if init is None:
        raise ParseError(0, "missing 'init' line")
    states |= unsafe | {init}
    try:
        return SafetyAutomaton(states, init, states - unsafe, sigma, delta)
    except SpecValidationError as exc:
        raise SpecValidationError(f"invalid spec: {exc}") from None


# -- traces ------------------------------------------------------------------

Episode = list  # of (cont, env, out) triples


def serialize_traces(episodes: Iterable[Episode], cont=None, env=None, out=None) -> str:
    lines = ["# trace v1"]
    for key, alph in (("cont", cont), ("env", env), ("out", out)):
        if alph:
            lines.append(f"# {key} " + " ".join(_tok(x) for x in alph))
    for ep in episodes:
        lines.append("ep")
        for a1, a2, b in ep:
            lines.append(f"s {_tok(a1)} {_tok(a2)} {_tok(b)}")
    return "\n".join(lines) + "\n"


def parse_traces(text: str) -> list[Episode]:
    episodes: list[Episode] = []
    current = None
    for lineno, words in _lines(text):
        if words == ["ep"]:
            current = []
            episodes.append(current)
        elif words[0] == "s":
            if len(words) != 4:
                raise ParseError(lineno, "expected 's <cont> <env> <out>'")
            if current is None:
                raise ParseError(lineno, "step outside an 'ep' block")
            current.append(tuple(words[1:]))
        else:
            raise ParseError(lineno, f"unknown directive {words[0]!r}")
    return episodes


def trace_alphabets(text: str) -> dict[str, list[str]]:
    """Alphabets declared in ``# cont ...`` style header comments, if any."""
    found = {}
    for raw in text.splitlines():
        words = raw.strip().split()
        if len(words) >= 3 and words[0] == "#" and words[1] in ("cont", "env", "out"):
            found[words[1]] = words[2:]
    return found


# -- Graphviz ----------------------------------------------------------------

def _q(x) -> str:
    return '"' + str(x).replace("\\", "\\\\").replace('"', '\\"') + '"'


def mealy_to_dot(m: MealyMachine, name: str = "model") -> str:
    lines = [f"digraph {_q(name)} {{", "  rankdir=LR;", '  __start [shape=point];']
    for s in m.sorted_states():
        lines.append(f"  {_q(s)} [shape=circle];")
    lines.append(f"  __start -> {_q(m.initial)};")
    for s in m.sorted_states():
        moves = m.transitions_from(s)
        for a in sorted_ids(moves):
            t, b = moves[a]
            label = ",".join(map(str, a)) if isinstance(a, tuple) else str(a)
            lines.append(f"  {_q(s)} -> {_q(t)} [label={_q(f'{label}/{b}')}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def spec_to_dot(spec: SafetyAutomaton, name: str = "spec") -> str:
    lines = [f"digraph {_q(name)} {{", "  rankdir=LR;", '  __start [shape=point];']
    for q in sorted_ids(spec.states):
        shape = "circle" if q in spec.safe else "doublecircle"
        lines.append(f"  {_q(q)} [shape={shape}];")
    lines.append(f"  __start -> {_q(spec.initial)};")
    for q in sorted_ids(spec.states):
        for b in spec.alphabet:
            lines.append(f"  {_q(q)} -> {_q(spec.delta[(q, b)])} [label={_q(b)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def read_text(path: PathLike) -> str:
    return Path(path).read_text(encoding="utf-8")


def write_text(path: PathLike, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def load_fsrs(path: PathLike) -> Fsrs:
    return parse_fsrs(read_text(path))


def load_spec(path: PathLike) -> SafetyAutomaton:
    return parse_spec(read_text(path))


__all__ = [
    "ParseError",
    "parse_fsrs",
    "serialize_fsrs",
    "parse_spec",
    "serialize_spec",
    "parse_traces",
    "serialize_traces",
    "trace_alphabets",
    "mealy_to_dot",
    "spec_to_dot",
    "load_fsrs",
    "load_spec",
    "spec_problems",
]
