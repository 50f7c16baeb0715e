"""Seed-matrix driver and CSV aggregation."""
from __future__ import annotations

import csv
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from ..envs import make_env
from ..rl import MODES, Metrics, TrainConfig, train

RUN_FILE = re.compile(r"^(?P<env>[a-z]+)-(?P<mode>plain|shielded)-seed(?P<seed>\d+)\.csv$")


@dataclass(frozen=True)
class ExperimentConfig:
    env: str
    modes: tuple = MODES
    seeds: tuple = (0,)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: Path = Path("runs")
    jobs: int = 1

    def __post_init__(self):
        make_env(self.env)  # validates the name
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        for m in self.modes:
            if m not in MODES:
                raise ValueError(f"unknown mode {m!r}")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


@dataclass(frozen=True)
class RunSummary:
    env: str
    mode: str
    seed: int
    undesired_episodes: int
    episodes: int
    best_eval_reward: float
    best_eval_safe_rate: float
    rebuilds: int
    containment_checks: int
    path: str


def run_file(out_dir: Path, env: str, mode: str, seed: int) -> Path:
    return Path(out_dir) / f"{env}-{mode}-seed{seed}.csv"


def run_one(env_name: str, mode: str, config: TrainConfig, seed: int,
            out_dir: Optional[Path] = None) -> tuple[RunSummary, Metrics]:
    metrics = train(make_env(env_name), mode, config, seed)
    path = ""
    if out_dir is not None:
        p = run_file(out_dir, env_name, mode, seed)
        p.write_text(metrics.to_csv(), encoding="utf-8")
        path = str(p)
    last = metrics.rows[-1]
    summary = RunSummary(env_name, mode, seed, metrics.undesired_cum, len(metrics.rows),
                         metrics.best_eval_reward, metrics.best_eval_safe_rate,
                         last["rebuild_count"], metrics.containment_checks, path)
    return summary, metrics


def _run_job(args) -> RunSummary:
    return run_one(*args)[0]


def run_matrix(cfg: ExperimentConfig) -> list[RunSummary]:
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.env, mode, cfg.train, seed, Path(cfg.out_dir)) for seed in cfg.seeds for mode in cfg.modes]
    if cfg.jobs == 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(_run_job, jobs))


def _float(text: str) -> Optional[float]:
    return float(text) if text != "" else None


def summarize_csv(path: Path) -> dict:
    """Undesired count and best evaluation of one run file."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path} has no rows")
    best_reward, best_rate = -math.inf, math.nan
    for row in rows:
        r = _float(row["eval_mean_reward"])
        if r is not None and r > best_reward:
            best_reward, best_rate = r, _float(row["eval_safe_rate"])
    return {
        "undesired": int(rows[-1]["undesired_cum"]),
        "episodes": len(rows),
        "best_reward": best_reward,
        "best_safe_rate": best_rate,
    }


def collect(paths: Iterable[Path]) -> list[dict]:
    found = []
    for p in sorted(Path(x) for x in paths):
        m = RUN_FILE.match(p.name)
        if m is None:
            continue
        found.append({"env": m["env"], "mode": m["mode"], "seed": int(m["seed"]), **summarize_csv(p)})
    return found


REPORT_COLUMNS = ("env", "mode", "seeds", "mean_undesired_episodes", "mean_best_reward", "mean_safe_rate")


def aggregate(runs: list[dict]) -> list[dict]:
    groups: dict = {}
    for r in runs:
        groups.setdefault((r["env"], r["mode"]), []).append(r)
    table = []
    for (env, mode), rs in sorted(groups.items()):
        n = len(rs)
        table.append({
            "env": env,
            "mode": mode,
            "seeds": n,
            "mean_undesired_episodes": sum(r["undesired"] for r in rs) / n,
            "mean_best_reward": sum(r["best_reward"] for r in rs) / n,
            "mean_safe_rate": sum(r["best_safe_rate"] for r in rs) / n,
        })
    return table


def report_csv(table: list[dict]) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for row in table:
        lines.append(",".join(_cell(row[c]) for c in REPORT_COLUMNS))
    return "\n".join(lines) + "\n"


def report_text(table: list[dict]) -> str:
    header = f"{'env':<10} {'mode':<9} {'seeds':>5} {'undesired':>10} {'best reward':>12} {'safe rate':>9}"
    lines = [header, "-" * len(header)]
    for r in table:
        lines.append(f"{r['env']:<10} {r['mode']:<9} {r['seeds']:>5} {r['mean_undesired_episodes']:>10.2f} "
                     f"{r['mean_best_reward']:>12.2f} {r['mean_safe_rate']:>9.3f}")
    return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)
