"""Water tank with a valve that must not be switched too often."""
from __future__ import annotations

import numpy as np

from ..automata import Fsrs
from .base import Environment

CAPACITY = 100
MIN_GAP = 3  # steps required between valve changes
START_LEVEL = 50


def level_status(level: int) -> str:
    if level <= 0:
        return "low"
    if level >= CAPACITY:
        return "high"
    return "safe"


def env_symbol(n: int, m: int) -> str:
    return f"i{n}o{m}"


def next_level(level: int, n: int, m: int) -> int:
    return max(0, min(level + n - m, CAPACITY))


# (n, m) choices per valve position; the draw is uniform over each list.
FLOWS = {
    "open": [(1, 0), (1, 1), (2, 0), (2, 1)],
    "close": [(0, 0), (0, 1)],
}


class WaterTank(Environment):
    name = "watertank"
    cont = ("close", "open")
    env_actions = tuple(sorted(env_symbol(n, m) for n in range(3) for m in range(2)))
    outputs = tuple(sorted(f"{a}.{s}.{f}" for a in ("close", "open")
                           for s in ("high", "low", "safe") for f in ("ok", "viol")))
    undesired_outputs = frozenset(o for o in outputs if ".safe.ok" not in o)
    max_ep_len = 200
    rl_state_count = (CAPACITY + 1) * 2 * MIN_GAP
    done_output = "close.safe.ok"

    def _reset(self, rng) -> None:
        self.level = START_LEVEL
        self.valve = "close"
        self.age = MIN_GAP  # steps since the last valve change, saturating

    @staticmethod
    def transition(level, valve, age, a1, n, m):
        violation = a1 != valve and age < MIN_GAP
        age = 1 if a1 != valve else min(age + 1, MIN_GAP)
        level = next_level(level, n, m)
        out = f"{a1}.{level_status(level)}.{'viol' if violation else 'ok'}"
        undesired = violation or level in (0, CAPACITY)
        return (level, a1, age), out, undesired

    def _step(self, a1, rng: np.random.Generator):
        flows = FLOWS[a1]
        n, m = flows[int(rng.integers(len(flows)))]
        (self.level, self.valve, self.age), out, undesired = self.transition(
            self.level, self.valve, self.age, a1, n, m)
        reward = -100.0 if undesired else 1.0
        return env_symbol(n, m), out, reward, undesired, undesired

    def _rl_state(self) -> int:
        return (self.level * 2 + (self.valve == "open")) * MIN_GAP + self.age - 1

    def truth_initial(self):
        return (START_LEVEL, "close", MIN_GAP)

    def truth_moves(self, state):
        for a1 in self.cont:
            for n, m in FLOWS[a1]:
                nxt, out, undesired = self.transition(*state, a1, n, m)
                yield a1, env_symbol(n, m), nxt, out, undesired

    def truth_name(self, state) -> str:
        return "L{}.{}.{}".format(*state)


# The three-output tank used as a running example: states are levels, the
# output reports only the level status, and the valve timing is ignored.

def level_model(levels=range(CAPACITY + 1)) -> Fsrs:
    levels = list(levels)
    delta = {}
    for lv in levels:
        for a1, flows in FLOWS.items():
            for n, m in flows:
                nxt = next_level(lv, n, m)
                if nxt in levels:
                    delta[(lv, (a1, env_symbol(n, m)))] = (nxt, level_status(nxt))
    return Fsrs(levels, START_LEVEL if START_LEVEL in levels else levels[0], ("close", "open"),
                WaterTank.env_actions, ("high", "low", "safe"), delta)


def level_model_strategy(model: Fsrs) -> dict:
    """The env strategy drawing flows uniformly, as a map for ``induce_mdp``."""
    tau = {}
    for s in model.states:
        for a1, flows in FLOWS.items():
            tau[(s, a1)] = {env_symbol(n, m): 1.0 / len(flows) for n, m in flows}
    return tau
