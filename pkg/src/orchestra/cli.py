"""Command-line entry point: ``orchestra <command> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .config import load_config
from .credit import compute_advantages, group_from_dict, write_jsonl
from .curriculum import cascade_promote, load_tasks, probe_split, probes_from_jsonl, retries_from_jsonl
from .errors import OrchestraError
from .grammar import (
    BEHAVIOURS,
    CorpusStats,
    classify_behaviour,
    iter_corpus,
    parse_trajectory,
    validate_text,
)
from .harness import Grouping, read_episode_records, report_from_logs, reward_records, run_batch
from .policies import POLICIES, make_policy
from .pool import load_registry_file, registry_from_dict
from .workers import http_backends, scripted_backends_from_pool


def _cmd_validate(args: argparse.Namespace) -> int:
    registry = load_registry_file(args.registry) if args.registry else None
    stats = CorpusStats()
    bad = 0
    for name, raw in iter_corpus(args.path):
        report = validate_text(raw, registry)
        if not report.valid:
            bad += 1
            stats.invalid += 1
            for v in report.violations:
                print(f"{name}: {v.code} at {v.location}: {v.message}")
            continue
        stats.counts[classify_behaviour(parse_trajectory(raw))] += 1
    if args.stats:
        print(json.dumps({"counts": stats.counts, "invalid": stats.invalid, "total": stats.total}, sort_keys=True))
    else:
        print(f"{stats.total} valid, {bad} invalid")
    return 0 if bad == 0 else 1


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else load_config()
    pool = json.loads(Path(args.pool).read_text("utf-8"))
    registry = registry_from_dict(pool)
    backends = scripted_backends_from_pool(pool, realtime=args.realtime) if "scripted" in pool else http_backends(
        registry, max_in_flight=config.max_in_flight
    )
    grouping = Grouping.load(args.grouping) if args.grouping else None
    result = run_batch(
        load_tasks(args.tasks),
        make_policy(args.policy),
        registry,
        backends,
        args.attempts,
        args.seed,
        config=config,
        grouping=grouping,
        out_dir=args.out,
        max_workers=args.workers,
    )
    print(json.dumps(result.scoreboard.macro, sort_keys=True))
    return 0


def _cmd_reward(args: argparse.Namespace) -> int:
    overrides = {"alpha": args.alpha} if args.alpha is not None else {}
    config = load_config(args.config, **overrides) if args.config else load_config(**overrides)
    records = reward_records(read_episode_records(args.episodes), config)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        write_jsonl(records, out)
    finally:
        if args.out:
            out.close()
    return 0


def _cmd_advantage(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else load_config()
    data = json.loads(Path(args.group).read_text("utf-8"))
    groups = data if isinstance(data, list) else [data]
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for g in groups:
            table = compute_advantages(
                args.estimator, group_from_dict(g), g.get("params"), gamma=args.gamma, eps=config.eps_num
            )
            write_jsonl(table.records(), out)
    finally:
        if args.out:
            out.close()
    return 0


def _cmd_curriculum(args: argparse.Namespace) -> int:
    manifest = probe_split(probes_from_jsonl(Path(args.probes).read_text("utf-8")))
    if args.retries:
        manifest = cascade_promote(manifest, retries_from_jsonl(Path(args.retries).read_text("utf-8")))
    manifest.check_partition()
    Path(args.out).write_text(manifest.dumps(), "utf-8")
    print(json.dumps({"sft": len(manifest.sft), "rl": len(manifest.rl), "discarded": len(manifest.discarded)}))
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else load_config()
    grouping = Grouping.load(args.grouping) if args.grouping else None
    print(report_from_logs(args.logs, grouping, mode=config.pass1_mode).dumps(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="orchestra", description="Selective-delegation orchestration runtime.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check trajectories against the grammar")
    v.add_argument("path", help="a .traj.xml file, a directory of them, or a '==='-separated stream")
    v.add_argument("--registry", help="pool registry JSON for closed-vocabulary checks")
    v.add_argument("--stats", action="store_true", help=f"print counts per behaviour ({', '.join(BEHAVIOURS)})")
    v.set_defaults(fn=_cmd_validate)

    r = sub.add_parser("run", help="run a batch of tasks")
    r.add_argument("--tasks", required=True)
    r.add_argument("--pool", required=True)
    r.add_argument("--policy", default="cascade", choices=sorted(POLICIES))
    r.add_argument("--attempts", type=int, default=2)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--grouping")
    r.add_argument("--config")
    r.add_argument("--workers", type=int)
    r.add_argument("--realtime", action="store_true", help="sleep for scripted latencies")
    r.set_defaults(fn=_cmd_run)

    w = sub.add_parser("reward", help="recompute terminal rewards from episode logs")
    w.add_argument("--episodes", required=True)
    w.add_argument("--alpha", type=float)
    w.add_argument("--config")
    w.add_argument("--out")
    w.set_defaults(fn=_cmd_reward)

    a = sub.add_parser("advantage", help="advantage table for rollout group(s)")
    a.add_argument("--group", required=True)
    a.add_argument("--estimator", required=True, choices=["grpo", "tree", "mt", "gigpo", "agentic", "agentic_shaped"])
    a.add_argument("--gamma", type=float, default=1.0)
    a.add_argument("--config")
    a.add_argument("--out")
    a.set_defaults(fn=_cmd_advantage)

    c = sub.add_parser("curriculum", help="split probed tasks into SFT / RL / discarded")
    c.add_argument("--probes", required=True)
    c.add_argument("--retries", help="fallback-cascade results to promote")
    c.add_argument("--out", required=True)
    c.set_defaults(fn=_cmd_curriculum)

    s = sub.add_parser("report", help="scoreboard from episode logs")
    s.add_argument("--logs", required=True)
    s.add_argument("--grouping")
    s.add_argument("--config")
    s.set_defaults(fn=_cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (OrchestraError, OSError, ValueError) as exc:
        code = getattr(exc, "code", type(exc).__name__)
        print(f"error [{code}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
