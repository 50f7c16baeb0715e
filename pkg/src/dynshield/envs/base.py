"""Common environment plumbing: step counting, the episode cap, truth export."""
from __future__ import annotations

from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass
from typing import Hashable, Iterable, Optional

import numpy as np

from ..automata import AlphabetError, Fsrs, SafetyAutomaton, avoid_spec


class EnvError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvStep:
    env_action: str
    output: str
    reward: float
    done: bool
    undesired: bool
    rl_state: int
    truncated: bool = False  # done only because of the step cap


DONE = "done"


class Environment(ABC):
    """A simulator whose randomness is exposed as an observable env action.

    Subclasses implement ``_reset``, ``_step`` and ``_rl_state``.  Given the
    same generator state, ``step`` is a deterministic function of the
    current state and the controller action.
    """

    name: str = ""
    cont: tuple = ()
    env_actions: tuple = ()
    outputs: tuple = ()
    undesired_outputs: frozenset = frozenset()
    max_ep_len: int = 0
    rl_state_count: int = 0

    def __init__(self) -> None:
        self._rng: Optional[np.random.Generator] = None
        self.t = 0
        self.done = True

    def cont_actions(self) -> tuple:
        return self.cont

    def reset(self, rng: np.random.Generator) -> int:
        self._rng = rng
        self.t = 0
        self.done = False
        self._reset(rng)
        return self._rl_state()

    def step(self, a1) -> EnvStep:
        if self.done:
            raise EnvError("step called on a finished episode; call reset first")
        if a1 not in self.cont:
            raise AlphabetError(f"unknown action {a1!r} for {self.name}")
        a2, out, reward, terminal, undesired = self._step(a1, self._rng)
        self.t += 1
        truncated = not terminal and self.t >= self.max_ep_len
        self.done = terminal or truncated
        return EnvStep(a2, out, float(reward), self.done, undesired, self._rl_state(), truncated)

    def spec(self) -> SafetyAutomaton:
        return avoid_spec(self.outputs, self.undesired_outputs)

    @abstractmethod
    def _reset(self, rng: np.random.Generator) -> None: ...

    @abstractmethod
    def _step(self, a1, rng: np.random.Generator) -> tuple: ...

    @abstractmethod
    def _rl_state(self) -> int: ...

    # -- ground truth --------------------------------------------------------

    def truth_initial(self) -> Hashable:
        raise NotImplementedError(f"{self.name} has no tractable ground-truth model")

    def truth_moves(self, state) -> Iterable[tuple]:
        """``(a1, a2, next_state, output, terminal)`` for every possible move."""
        raise NotImplementedError(f"{self.name} has no tractable ground-truth model")

    def truth_name(self, state) -> str:
        return str(state)

    done_output: str = ""

    def truth_fsrs(self) -> Fsrs:
        """Exact FSRS over all reachable states.

        A terminal move leads to an absorbing ``done`` state that emits the
        harmless ``done_output``, mirroring the reset that follows in training.
        """
        start = self.truth_initial()
        names = {start: self.truth_name(start)}
        queue = deque([start])
        delta = {}
        used_done = False
        while queue:
            s = queue.popleft()
            for a1, a2, nxt, out, terminal in self.truth_moves(s):
                if terminal:
                    dst = DONE
                    used_done = True
                else:
                    if nxt not in names:
                        names[nxt] = self.truth_name(nxt)
                        queue.append(nxt)
                    dst = names[nxt]
                delta[(names[s], (a1, a2))] = (dst, out)
        states = set(names.values())
        if used_done:
            states.add(DONE)
            for a1 in self.cont:
                delta[(DONE, (a1, self.env_actions[0]))] = (DONE, self.done_output)
        return Fsrs(states, names[start], self.cont, self.env_actions, self.outputs, delta)
