"""Tabular Q-learning with optional dynamic shielding, plus the evaluation protocol."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamic import DynamicShield, RebuildPolicy
from .envs import Environment

METRIC_COLUMNS = (
    "seed", "episode", "steps_cum", "reward", "undesired_flag", "undesired_cum",
    "shield_states", "rebuild_count", "rebuild_time_ms", "eval_mean_reward", "eval_safe_rate",
)
MODES = ("plain", "shielded")


class ShieldContainmentError(AssertionError):
    """The agent executed an action the shield had not allowed."""


@dataclass
class QTable:
    values: np.ndarray
    actions: tuple
    alpha: float = 0.1
    gamma: float = 0.99

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        self.index = {a: i for i, a in enumerate(self.actions)}
        self._ties = sorted(self.actions, key=lambda a: (len(str(a)), str(a)))  # shortlex

    @classmethod
    def zeros(cls, n_states: int, actions: Sequence, alpha: float = 0.1, gamma: float = 0.99) -> "QTable":
        return cls(np.zeros((n_states, len(actions))), tuple(actions), alpha, gamma)

    def copy(self) -> "QTable":
        return QTable(self.values.copy(), self.actions, self.alpha, self.gamma)

    def best(self, s: int, allowed: Sequence) -> object:
        """Greedy action among ``allowed``; ties go to the shortlex-least action."""
        row = self.values[s]
        best_a, best_v = None, -np.inf
        for a in self._ties:
            if a in allowed and row[self.index[a]] > best_v:
                best_a, best_v = a, row[self.index[a]]
        return best_a

    def max_value(self, s: int, allowed: Sequence) -> float:
        row = self.values[s]
        return max(row[self.index[a]] for a in allowed)


def q_update(q: QTable, s: int, a, r: float, s_next: int, allowed_next: Sequence, terminal: bool) -> None:
    target = r if terminal else r + q.gamma * q.max_value(s_next, allowed_next)
    i = q.index[a]
    q.values[s, i] += q.alpha * (target - q.values[s, i])


def select_action(q: QTable, s: int, allowed: Sequence, epsilon: float, rng: np.random.Generator):
    if not allowed:
        raise ValueError("allowed action set is empty")
    if rng.random() < epsilon:
        return allowed[int(rng.integers(len(allowed)))]
    return q.best(s, allowed)


def epsilon_at(step: int, total: int, start: float, end: float, fraction: float) -> float:
    horizon = max(1, int(total * fraction))
    if step >= horizon:
        return end
    return start + (end - start) * step / horizon


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 50_000
    eval_interval: int = 5_000
    eval_episodes: int = 30
    alpha: float = 0.1
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5
    masked_target: bool = True
    shielded_eval: bool = False
    policy: RebuildPolicy = field(default_factory=RebuildPolicy)

    def __post_init__(self):
        if self.total_steps < 1 or self.eval_interval < 1 or self.eval_episodes < 1:
            raise ValueError("step budget, eval interval and eval episodes must be positive")
        for name in ("eps_start", "eps_end"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 < self.eps_decay_fraction <= 1:
            raise ValueError("eps_decay_fraction must lie in (0, 1]")


@dataclass
class Metrics:
    seed: int
    mode: str
    rows: list = field(default_factory=list)
    undesired_cum: int = 0
    best_eval_reward: float = float("-inf")
    best_eval_safe_rate: float = float("nan")
    best_q: Optional[QTable] = None
    containment_checks: int = 0
    shield_fallbacks: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in self.rows:
            w.writerow(["" if v is None else _fmt(v) for v in (row[c] for c in METRIC_COLUMNS)])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(round(v, 6))
    return str(v)


def _streams(seed: int) -> tuple:
    env_ss, agent_ss, eval_ss = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(env_ss), np.random.default_rng(agent_ss), eval_ss


def evaluate(q: QTable, env: Environment, episodes: int = 30,
             rng: Optional[np.random.Generator] = None, shield: Optional[DynamicShield] = None) -> tuple:
    """Greedy rollouts; returns ``(mean reward, safe rate)``.

    With ``shield`` the greedy choice is restricted to the shield's current
    snapshot (traces from evaluation are not recorded).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    total, safe = 0.0, 0
    for _ in range(episodes):
        s = env.reset(rng)
        cursor = shield.snapshot.shield.fork() if shield is not None else None
        ep_reward, bad = 0.0, False
        while True:
            allowed = cursor.allowed_actions() if cursor else q.actions
            a = q.best(s, allowed)
            st = env.step(a)
            if cursor:
                cursor.advance(a, st.env_action, st.output)
            ep_reward += st.reward
            bad = bad or st.undesired
            s = st.rl_state
            if st.done:
                break
        total += ep_reward
        safe += not bad
    return total / episodes, safe / episodes


def train(env: Environment, mode: str, config: TrainConfig, seed: int,
          shield: Optional[DynamicShield] = None) -> Metrics:
    """Run one training job.

    In shielded mode a fresh :class:`DynamicShield` is created unless one is
    passed in (callers that want the final model or traces pass their own).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "plain" and shield is not None:
        raise ValueError("a shield was passed to a plain run")
    env_rng, agent_rng, eval_ss = _streams(seed)
    q = QTable.zeros(env.rl_state_count, env.cont, config.alpha, config.gamma)
    if mode == "shielded" and shield is None:
        shield = DynamicShield(env.spec(), env.cont, env.env_actions, env.outputs,
                               env.max_ep_len, config.policy)
    m = Metrics(seed, mode)
    steps = episode = 0
    next_eval = config.eval_interval

    def run_eval() -> tuple:
        eval_rng = np.random.default_rng(eval_ss.spawn(1)[0])
        mean, rate = evaluate(q, env, config.eval_episodes, eval_rng,
                              shield if config.shielded_eval else None)
        if mean > m.best_eval_reward:
            m.best_eval_reward, m.best_eval_safe_rate, m.best_q = mean, rate, q.copy()
        return mean, rate

    while steps < config.total_steps:
        s = env.reset(env_rng)
        if shield:
            shield.on_episode_start()
        allowed = shield.current_allowed() if shield else env.cont
        ep_reward, bad = 0.0, False
        while True:
            eps = epsilon_at(steps, config.total_steps, config.eps_start, config.eps_end,
                             config.eps_decay_fraction)
            a = select_action(q, s, allowed, eps, agent_rng)
            if shield:
                if a not in allowed:
                    raise ShieldContainmentError(f"action {a!r} not in allowed set {allowed!r}")
                m.containment_checks += 1
            st = env.step(a)
            steps += 1
            if shield:
                shield.advance(a, st.env_action, st.output)
                allowed_next = shield.current_allowed()
            else:
                allowed_next = env.cont
            terminal = st.done and not st.truncated
            q_update(q, s, a, st.reward, st.rl_state,
                     allowed_next if config.masked_target else env.cont, terminal)
            ep_reward += st.reward
            bad = bad or st.undesired
            s, allowed = st.rl_state, allowed_next
            if st.done or steps >= config.total_steps:
                break
        episode += 1
        if shield:
            shield.on_episode_end()
        m.undesired_cum += bad
        row = {
            "seed": seed, "episode": episode, "steps_cum": steps, "reward": ep_reward,
            "undesired_flag": int(bad), "undesired_cum": m.undesired_cum,
            "shield_states": shield.snapshot.game_states if shield else 0,
            "rebuild_count": shield.rebuild_count if shield else 0,
            "rebuild_time_ms": round(shield.rebuild_ms_total, 3) if shield else 0.0,
            "eval_mean_reward": None, "eval_safe_rate": None,
        }
        if steps >= next_eval or steps >= config.total_steps:
            while next_eval <= steps:
                next_eval += config.eval_interval
            row["eval_mean_reward"], row["eval_safe_rate"] = run_eval()
        m.rows.append(row)
    if shield:
        m.shield_fallbacks = shield.fallbacks
    return m
