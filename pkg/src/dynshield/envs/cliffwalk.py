"""Cliff walking on a 3 x 13 board."""
from __future__ import annotations

from .base import Environment

ROWS, COLS = 3, 13
START = (ROWS - 1, 0)
GOAL = (ROWS - 1, COLS - 1)
MOVES = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}
NIL = "nil"


def is_cliff(cell) -> bool:
    return cell[0] == ROWS - 1 and 0 < cell[1] < COLS - 1


def move(cell, a1):
    r, c = cell[0] + MOVES[a1][0], cell[1] + MOVES[a1][1]
    if not (0 <= r < ROWS and 0 <= c < COLS):
        return cell
    return r, c


class CliffWalk(Environment):
    name = "cliffwalk"
    cont = ("E", "N", "S", "W")
    env_actions = (NIL,)
    outputs = ("cliff", "goal", "safe")
    undesired_outputs = frozenset({"cliff"})
    max_ep_len = 100
    rl_state_count = ROWS * COLS
    done_output = "safe"

    def _reset(self, rng) -> None:
        self.pos = START

    @staticmethod
    def transition(pos, a1):
        pos = move(pos, a1)
        if is_cliff(pos):
            return pos, "cliff", -100.0, True
        if pos == GOAL:
            return pos, "goal", 0.0, True
        return pos, "safe", -1.0, False

    def _step(self, a1, rng):
        self.pos, out, reward, terminal = self.transition(self.pos, a1)
        return NIL, out, reward, terminal, out == "cliff"

    def _rl_state(self) -> int:
        return self.pos[0] * COLS + self.pos[1]

    def truth_initial(self):
        return START

    def truth_moves(self, state):
        for a1 in self.cont:
            nxt, out, _, terminal = self.transition(state, a1)
            yield a1, NIL, nxt, out, terminal

    def truth_name(self, state) -> str:
        return f"r{state[0]}c{state[1]}"
