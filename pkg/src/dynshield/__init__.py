"""Dynamic shielding for reinforcement learning in black-box environments.

Learn a finite-state model of the environment from traces, compose it with a
safety automaton into a game, and use the winning region to mask unsafe
actions of a learning agent.
"""
from .automata import (
    AlphabetError,
    AutomataError,
    Fsrs,
    MealyMachine,
    SafetyAutomaton,
    SpecValidationError,
    abstracts,
    avoid_spec,
    induce_mdp,
    isomorphic,
    run,
    sa_accepts,
    validate_fsrs,
)
from .dynamic import DynamicShield, RebuildPolicy, ShieldSnapshot, TraceStore, maybe_rebuild
from .game import (
    SINK,
    PostPosedShield,
    PreemptiveShield,
    SafetyGame,
    compose,
    synthesize_postposed,
    synthesize_preemptive,
    verify_shield,
    winning_region,
)
from .learner import RunLog, SampleSet, adaptive_min_depth, build_ptmm, rpni, rpni_fsrs

__version__ = "0.1.0"
