"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 a verification
found violations.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..automata import AutomataError, Fsrs, abstracts
from ..dynamic import DynamicShield, RebuildPolicy
from ..envs import ENVIRONMENTS, EnvError, make_env
from ..game import compose, game_to_dot, serialize_shield, synthesize_preemptive, verify_shield, winning_region
from ..learner import SampleSet, rpni_fsrs
from ..rl import MODES, TrainConfig, train
from ..textio import (load_fsrs, load_spec, mealy_to_dot, parse_traces, read_text,
                      serialize_fsrs, serialize_spec, serialize_traces, trace_alphabets, write_text)
from .experiment import ExperimentConfig, aggregate, collect, report_csv, report_text, run_matrix

log = logging.getLogger("dynshield")

EXIT_OK, EXIT_INVALID, EXIT_VIOLATION = 0, 1, 2


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _seeds(text: str) -> tuple:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty seed list")
    return tuple(out)


def read_config(path: str) -> list[str]:
    """Turn ``key = value`` lines into ``--key value`` tokens."""
    tokens = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (x.strip() for x in line.split("=", 1))
        tokens += ["--" + key.replace("_", "-"), value]
    return tokens


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", choices=sorted(ENVIRONMENTS), required=True)
    p.add_argument("--steps", type=int, help="training steps (default 50000, 100000 for gridworld)")
    p.add_argument("--eval-interval", type=int, default=5000)
    p.add_argument("--eval-episodes", type=int, default=30)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--min-new-steps", type=int, default=1000)
    p.add_argument("--rebuild-on-undesired", type=_bool, default=True)
    p.add_argument("--min-depth-cap", type=int, default=5)
    p.add_argument("--masked-target", type=_bool, default=True)
    p.add_argument("--shielded-eval", type=_bool, default=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynshield", description="Dynamic shielding toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train plain and/or shielded agents over a seed matrix")
    p.add_argument("--config", help="key=value file; command-line flags override it")
    _add_training_flags(p)
    p.add_argument("--mode", choices=(*MODES, "both"), default="both")
    p.add_argument("--seeds", type=_seeds, default=(0,))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="runs", help="output directory for per-seed CSVs")

    p = sub.add_parser("learn", help="learn a model from a trace file")
    p.add_argument("--traces", required=True)
    p.add_argument("--min-depth", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--dot")
    p.add_argument("--alphabet-env", choices=sorted(ENVIRONMENTS),
                   help="take the action/output alphabets from this environment")

    p = sub.add_parser("shield", help="compose, solve and synthesize a shield from files")
    p.add_argument("--model", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dot")

    for name in ("verify", "verify-shield"):
        p = sub.add_parser(name, help="check abstraction (no --spec) or shield safety against a truth model")
        p.add_argument("--truth", required=True)
        p.add_argument("--model", required=True)
        p.add_argument("--spec", required=(name == "verify-shield"))

    p = sub.add_parser("check-abstraction", help="does the model abstract the truth?")
    p.add_argument("--truth", required=True)
    p.add_argument("--model", required=True)

    p = sub.add_parser("report", help="aggregate per-seed CSVs")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="CSV files or directories")
    p.add_argument("--out", help="machine-readable summary CSV")

    p = sub.add_parser("dump-truth", help="write an environment's ground-truth model")
    p.add_argument("--env", choices=("cliffwalk", "gridworld", "watertank"), required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("dump-spec", help="write an environment's safety automaton")
    p.add_argument("--env", choices=sorted(ENVIRONMENTS), required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("dump-model", help="train one shielded run and export the final learned model")
    p.add_argument("--config")
    _add_training_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--traces-out")
    return parser


def _expand_config(argv: list[str]) -> list[str]:
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise ConfigError("--config needs a file name")
    path = argv[i + 1]
    rest = argv[:i] + argv[i + 2:]
    # file tokens go right after the subcommand so explicit flags win
    return rest[:1] + read_config(path) + rest[1:]


def _train_config(args) -> TrainConfig:
    steps = args.steps if args.steps is not None else (100_000 if args.env == "gridworld" else 50_000)
    policy = RebuildPolicy(args.min_new_steps, args.rebuild_on_undesired, args.min_depth_cap)
    return TrainConfig(total_steps=steps, eval_interval=args.eval_interval, eval_episodes=args.eval_episodes,
                       alpha=args.alpha, gamma=args.gamma, masked_target=args.masked_target,
                       shielded_eval=args.shielded_eval, policy=policy)


def cmd_train(args) -> int:
    modes = MODES if args.mode == "both" else (args.mode,)
    cfg = ExperimentConfig(args.env, modes, args.seeds, _train_config(args), Path(args.out), args.jobs)
    for s in run_matrix(cfg):
        print(f"{s.env} {s.mode} seed={s.seed} undesired_episodes={s.undesired_episodes} "
              f"episodes={s.episodes} best_eval_reward={s.best_eval_reward:.3f} "
              f"safe_rate={s.best_eval_safe_rate:.3f} rebuilds={s.rebuilds} -> {s.path}")
    return EXIT_OK


def cmd_learn(args) -> int:
    text = read_text(args.traces)
    episodes = parse_traces(text)
    if args.alphabet_env:
        env = make_env(args.alphabet_env)
        cont, envs, outs = env.cont, env.env_actions, env.outputs
    else:
        declared = trace_alphabets(text)
        seen = [s for ep in episodes for s in ep]
        cont = declared.get("cont") or sorted({s[0] for s in seen})
        envs = declared.get("env") or sorted({s[1] for s in seen})
        outs = declared.get("out") or sorted({s[2] for s in seen})
        if not (cont and envs and outs):
            raise ConfigError("trace file is empty and declares no alphabets; use --alphabet-env")
    d = SampleSet.from_runs(([(a1, a2) for a1, a2, _ in ep], [b for *_, b in ep]) for ep in episodes)
    if len(d) == 0:
        log.warning("trace file has no steps; the model has a single state")
    model = rpni_fsrs(d, args.min_depth, cont, envs, outs)
    write_text(args.out, serialize_fsrs(model.relabel(str)))
    if args.dot:
        write_text(args.dot, mealy_to_dot(model))
    print(f"learned {len(model)} states from {len(d)} samples -> {args.out}")
    return EXIT_OK


def cmd_shield(args) -> int:
    game = compose(load_fsrs(args.model), load_spec(args.spec))
    win = winning_region(game)
    shield = synthesize_preemptive(game, win)
    write_text(args.out, serialize_shield(shield))
    if args.dot:
        write_text(args.dot, game_to_dot(shield))
    print(f"game states={len(game)} winning={len(win)} initial_winning={game.initial in win} -> {args.out}")
    return EXIT_OK


def _abstraction(truth: Fsrs, model: Fsrs) -> int:
    if abstracts(model, truth):
        print("OK")
        return EXIT_OK
    print("NOT AN ABSTRACTION: some truth behaviour is missing or differs in the model")
    return EXIT_VIOLATION


def cmd_verify(args) -> int:
    truth, model = load_fsrs(args.truth), load_fsrs(args.model)
    if not getattr(args, "spec", None):
        return _abstraction(truth, model)
    spec = load_spec(args.spec)
    game = compose(model, spec)
    shield = synthesize_preemptive(game, winning_region(game))
    found = verify_shield(truth, spec, shield)
    if not found:
        print("OK")
        return EXIT_OK
    print(f"{len(found)} violation(s)")
    for v in found[:20]:
        print("  " + " ".join(f"({a1},{a2})/{b}" for a1, a2, b in v.steps))
    return EXIT_VIOLATION


def cmd_check_abstraction(args) -> int:
    return _abstraction(load_fsrs(args.truth), load_fsrs(args.model))


def cmd_report(args) -> int:
    paths = []
    for x in args.inputs:
        p = Path(x)
        paths.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    runs = collect(paths)
    if not runs:
        raise ConfigError("no run files matched <env>-<mode>-seed<N>.csv")
    table = aggregate(runs)
    sys.stdout.write(report_text(table))
    if args.out:
        write_text(args.out, report_csv(table))
    return EXIT_OK


def cmd_dump_truth(args) -> int:
    write_text(args.out, serialize_fsrs(make_env(args.env).truth_fsrs()))
    return EXIT_OK


def cmd_dump_spec(args) -> int:
    write_text(args.out, serialize_spec(make_env(args.env).spec()))
    return EXIT_OK


def cmd_dump_model(args) -> int:
    env = make_env(args.env)
    cfg = _train_config(args)
    shield = DynamicShield(env.spec(), env.cont, env.env_actions, env.outputs, env.max_ep_len, cfg.policy)
    metrics = train(env, "shielded", cfg, args.seed, shield=shield)
    snap = shield.snapshot
    if snap.model is None:
        raise ConfigError("no rebuild happened; lower --min-new-steps or raise --steps")
    write_text(args.out, serialize_fsrs(snap.model.relabel(str)))
    if args.traces_out:
        store = shield.store
        write_text(args.traces_out, serialize_traces(store.episodes, store.cont, store.env, store.outputs))
    print(f"model states={snap.model_states} samples={snap.sample_size} min_depth={snap.min_depth} "
          f"undesired_episodes={metrics.undesired_cum} -> {args.out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "learn": cmd_learn,
    "shield": cmd_shield,
    "verify": cmd_verify,
    "verify-shield": cmd_verify,
    "check-abstraction": cmd_check_abstraction,
    "report": cmd_report,
    "dump-truth": cmd_dump_truth,
    "dump-spec": cmd_dump_spec,
    "dump-model": cmd_dump_model,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_expand_config(argv))
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (AutomataError, EnvError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
