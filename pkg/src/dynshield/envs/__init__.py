"""Benchmark simulators and their safety specifications."""
from __future__ import annotations

from ..automata import SafetyAutomaton
from .base import EnvError, EnvStep, Environment
from .cliffwalk import CliffWalk
from .gridworld import GridWorld
from .taxi import Taxi
from .watertank import WaterTank

ENVIRONMENTS = {cls.name: cls for cls in (WaterTank, GridWorld, CliffWalk, Taxi)}


def make_env(name: str) -> Environment:
    try:
        return ENVIRONMENTS[name]()
    except KeyError:
        raise EnvError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None


def watertank_spec() -> SafetyAutomaton:
    return WaterTank().spec()


def gridworld_spec() -> SafetyAutomaton:
    return GridWorld().spec()


def cliffwalk_spec() -> SafetyAutomaton:
    return CliffWalk().spec()


def taxi_spec() -> SafetyAutomaton:
    return Taxi().spec()


__all__ = [
    "ENVIRONMENTS", "EnvError", "EnvStep", "Environment", "make_env",
    "WaterTank", "GridWorld", "CliffWalk", "Taxi",
    "watertank_spec", "gridworld_spec", "cliffwalk_spec", "taxi_spec",
]
