"""Taxi on the classic 5 x 5 map, with a taxi that may break after hitting walls."""
from __future__ import annotations

import numpy as np

from .base import Environment

MAP = (
    "+---------+",
    "|R: | : :G|",
    "| : | : : |",
    "| : : : : |",
    "| | : | : |",
    "|Y| : |B: |",
    "+---------+",
)
LANDMARKS = {"R": (0, 0), "G": (0, 4), "Y": (4, 0), "B": (4, 3)}
NAMES = tuple(sorted(LANDMARKS))
START = (2, 2)
IN_TAXI = len(NAMES)
MOVES = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}
BREAK_PER_DAMAGE = 0.1
BREAK_REWARD = -100.0
EVENTS = ("baddrop", "badpickup", "drop", "move", "pickup", "wall")
BAD_EVENTS = frozenset({"baddrop", "badpickup", "wall"})


def blocked(cell, a1) -> bool:
    r, c = cell
    dr, dc = MOVES[a1]
    if not (0 <= r + dr < 5 and 0 <= c + dc < 5):
        return True
    if dc:
        return MAP[r + 1][2 * c + 1 + dc] == "|"
    return False


def break_probability(damage: int) -> float:
    return min(BREAK_PER_DAMAGE * damage, 1.0)


def taxi_output(cell, in_taxi: bool, event: str) -> str:
    """Shield-visible symbol: taxi cell, passenger aboard (i/o), event."""
    return f"{cell[0]}{cell[1]}{'i' if in_taxi else 'o'}.{event}"


ROUTES = tuple(f"{s}{d}" for s in NAMES for d in NAMES if s != d)


class Taxi(Environment):
    name = "taxi"
    cont = ("E", "N", "S", "W", "dropoff", "pickup")
    env_actions = tuple(sorted({"ok", "break"} | {f"{r}.{x}" for r in ROUTES for x in ("ok", "break")}))
    outputs = tuple(sorted(taxi_output((r, c), i, e) for r in range(5) for c in range(5)
                           for i in (False, True) for e in EVENTS))
    undesired_outputs = frozenset(o for o in outputs if o.split(".")[1] in BAD_EVENTS)
    max_ep_len = 200
    rl_state_count = 25 * (len(NAMES) + 1) * len(NAMES)

    def _reset(self, rng: np.random.Generator) -> None:
        self.route = ROUTES[int(rng.integers(len(ROUTES)))]
        self.passenger = NAMES.index(self.route[0])
        self.dest = NAMES.index(self.route[1])
        self.pos = START
        self.damage = 0
        self.first = True

    def _step(self, a1, rng: np.random.Generator):
        reward, terminal = -1.0, False
        if a1 in MOVES:
            if blocked(self.pos, a1):
                event = "wall"
                self.damage += 1
            else:
                event = "move"
                self.pos = (self.pos[0] + MOVES[a1][0], self.pos[1] + MOVES[a1][1])
        elif a1 == "pickup":
            if self.passenger != IN_TAXI and self.pos == LANDMARKS[NAMES[self.passenger]]:
                event, self.passenger = "pickup", IN_TAXI
            else:
                event, reward = "badpickup", -10.0
        else:
            if self.passenger == IN_TAXI and self.pos == LANDMARKS[NAMES[self.dest]]:
                event, reward, terminal = "drop", 20.0, True
                self.passenger = self.dest
            else:
                event, reward = "baddrop", -10.0
        broke = False
        if event == "wall":  # only a hit can break the car
            broke = bool(rng.random() < break_probability(self.damage))
        status = "break" if broke else "ok"
        a2 = f"{self.route}.{status}" if self.first else status
        self.first = False
        if broke:
            reward, terminal = BREAK_REWARD, True
        out = taxi_output(self.pos, self.passenger == IN_TAXI, event)
        return a2, out, reward, terminal, event in BAD_EVENTS

    def _rl_state(self) -> int:
        return ((self.pos[0] * 5 + self.pos[1]) * (len(NAMES) + 1) + self.passenger) * len(NAMES) + self.dest
