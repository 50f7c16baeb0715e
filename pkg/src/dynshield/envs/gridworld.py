"""Two robots in a walled arena: reach the goal without touching walls or the other robot."""
from __future__ import annotations

import numpy as np

from .base import Environment

ARENA = (
    "xxxxxxx",
    "x    Ex",
    "x xxx x",
    "x xG  x",
    "x xxx x",
    "xS    x",
    "xxxxxxx",
)

MOVES = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}
ADV_MOVES = {"a0": (0, 0), "aN": (-1, 0), "aS": (1, 0), "aE": (0, 1), "aW": (0, -1)}


def _find(ch: str) -> tuple[int, int]:
    for r, row in enumerate(ARENA):
        if ch in row:
            return r, row.index(ch)
    raise ValueError(ch)


EGO_START = _find("S")
GOAL = _find("G")
ADV_START = _find("E")


def is_wall(cell) -> bool:
    r, c = cell
    return ARENA[r][c] == "x"


def shift(cell, d):
    return cell[0] + d[0], cell[1] + d[1]


def adversary_options(cell) -> list[str]:
    return [name for name in sorted(ADV_MOVES) if not is_wall(shift(cell, ADV_MOVES[name]))]


def grid_output(wall: bool, crash: bool) -> str:
    if wall and crash:
        return "wallcrash"
    return "wall" if wall else "crash" if crash else "ok"


def interior_index(cell) -> int:
    return (cell[0] - 1) * 5 + (cell[1] - 1)


class GridWorld(Environment):
    name = "gridworld"
    cont = ("E", "N", "S", "W")
    env_actions = tuple(sorted(ADV_MOVES))
    outputs = ("crash", "ok", "wall", "wallcrash")
    undesired_outputs = frozenset({"crash", "wall", "wallcrash"})
    max_ep_len = 100
    rl_state_count = 25 * 25
    done_output = "ok"

    def _reset(self, rng) -> None:
        self.ego = EGO_START
        self.adv = ADV_START

    @staticmethod
    def transition(ego, adv, a1, a2):
        target = shift(ego, MOVES[a1])
        wall = is_wall(target)
        if not wall:
            ego = target
        adv = shift(adv, ADV_MOVES[a2])
        crash = ego == adv
        return ego, adv, grid_output(wall, crash), wall or crash

    def _step(self, a1, rng: np.random.Generator):
        opts = adversary_options(self.adv)
        a2 = opts[int(rng.integers(len(opts)))]
        self.ego, self.adv, out, undesired = self.transition(self.ego, self.adv, a1, a2)
        at_goal = self.ego == GOAL
        reward = -1.0 if undesired else 1.0 if at_goal else -0.01
        return a2, out, reward, undesired or at_goal, undesired

    def _rl_state(self) -> int:
        return interior_index(self.ego) * 25 + interior_index(self.adv)

    def truth_initial(self):
        return (EGO_START, ADV_START)

    def truth_moves(self, state):
        ego, adv = state
        for a1 in self.cont:
            for a2 in adversary_options(adv):
                e2, d2, out, undesired = self.transition(ego, adv, a1, a2)
                yield a1, a2, (e2, d2), out, undesired or e2 == GOAL

    def truth_name(self, state) -> str:
        (er, ec), (ar, ac) = state
        return f"e{er}{ec}a{ar}{ac}"
