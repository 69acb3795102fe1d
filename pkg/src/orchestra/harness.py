"""pass@k and cost metrics, domain aggregation, the batch runner and the log fold."""

from __future__ import annotations

import json
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .config import Config
from .curriculum import TaskRecord
from .errors import ConfigError, MetricError
from .grammar import classify_behaviour, serialize_trajectory
from .pool import PoolRegistry
from .reward import NormalizerState, shaping_score, terminal_reward
from .scheduler import Policy, run_episode
from .verify import verify_answer
from .workers import Backend, stable_seed


@dataclass(frozen=True)
class Attempt:
    b: int
    cost_usd: float = 0.0
    context_tokens: float = 0.0


@dataclass(frozen=True)
class RunSample:
    task_id: str
    attempts: tuple[Attempt, ...]
    benchmark: str = ""

    def __post_init__(self) -> None:
        if not self.attempts:
            raise MetricError(f"sample {self.task_id} has no attempts", code="insufficient-attempts")

    @classmethod
    def of(cls, task_id: str, verdicts: Sequence[int], benchmark: str = "") -> RunSample:
        return cls(task_id, tuple(Attempt(b) for b in verdicts), benchmark)


def pass_at_k(samples: Sequence[RunSample], k: int, *, mode: str = "first") -> float:
    """Fraction of samples solved within their first ``k`` attempts.

    ``mode="mean"`` makes pass@1 the mean first-k success rate over all
    attempts instead of the first attempt only.
    """
    if k not in (1, 2):
        raise MetricError(f"k must be 1 or 2, got {k}", code="bad-k")
    if not samples:
        raise MetricError("no samples", code="insufficient-attempts")
    short = [s.task_id for s in samples if len(s.attempts) < k]
    if short:
        raise MetricError(f"{len(short)} sample(s) have fewer than {k} attempts, e.g. {short[0]}", code="insufficient-attempts")
    if mode == "mean" and k == 1:
        return sum(sum(a.b for a in s.attempts) / len(s.attempts) for s in samples) / len(samples)
    if mode not in ("first", "mean"):
        raise MetricError(f"unknown pass@1 mode {mode!r}", code="bad-mode")
    return sum(1 for s in samples if any(a.b == 1 for a in s.attempts[:k])) / len(samples)


# -- aggregation -----------------------------------------------------------


@dataclass(frozen=True)
class Grouping:
    """Benchmark to domain map; excluded benchmarks are reported but never averaged."""

    domain_of: Mapping[str, str]
    excluded: frozenset[str] = frozenset()

    @property
    def domains(self) -> list[str]:
        seen: dict[str, None] = {}
        for bench, dom in self.domain_of.items():
            if bench not in self.excluded:
                seen.setdefault(dom)
        return list(seen)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Grouping:
        domain_of, excluded = {}, set()
        try:
            for bench, spec in data["benchmarks"].items():
                domain_of[bench] = str(spec["domain"])
                if spec.get("excluded", False):
                    excluded.add(bench)
        except (KeyError, TypeError, AttributeError) as exc:
            raise ConfigError(f"malformed grouping: {exc}", code="parse-error") from None
        return cls(domain_of, frozenset(excluded))

    @classmethod
    def load(cls, path: str | Path) -> Grouping:
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))


METRICS = ("pass1", "pass2", "tok", "usd")


def _mean(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


@dataclass
class Scoreboard:
    benchmarks: dict[str, dict[str, Any]] = field(default_factory=dict)
    domains: dict[str, dict[str, float | None]] = field(default_factory=dict)
    macro: dict[str, float | None] = field(default_factory=dict)
    excluded: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"benchmarks": self.benchmarks, "domains": self.domains, "macro": self.macro, "excluded": self.excluded}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def aggregate_domains(rows: Mapping[str, Mapping[str, Any]], grouping: Grouping | None = None) -> Scoreboard:
    """Unweighted domain means and a uniform macro mean over non-excluded benchmarks.

    Each row maps metric names (``pass1``, ``pass2``, ``tok``, ``usd``) to a
    value or ``None``.
    """
    if grouping is None:
        grouping = Grouping({b: b for b in rows})
    missing = sorted(set(rows) - set(grouping.domain_of))
    if missing:
        raise MetricError(f"benchmark(s) missing from grouping: {missing}", code="benchmark-missing")
    counted = [b for b in rows if b not in grouping.excluded]
    board = Scoreboard(benchmarks={b: dict(r) for b, r in rows.items()}, excluded=sorted(set(rows) & grouping.excluded))
    for dom in grouping.domains:
        members = [b for b in counted if grouping.domain_of[b] == dom]
        if members:
            board.domains[dom] = {m: _mean(rows[b].get(m) for b in members) for m in METRICS}
    board.macro = {m: _mean(rows[b].get(m) for b in counted) for m in METRICS}
    return board


def benchmark_rows(samples: Sequence[RunSample], *, mode: str = "first") -> dict[str, dict[str, Any]]:
    by_bench: dict[str, list[RunSample]] = {}
    for s in samples:
        by_bench.setdefault(s.benchmark or "default", []).append(s)
    rows = {}
    for bench, group in by_bench.items():
        attempts = [a for s in group for a in s.attempts]
        rows[bench] = {
            "n": len(group),
            "pass1": pass_at_k(group, 1, mode=mode),
            "pass2": pass_at_k(group, 2) if all(len(s.attempts) >= 2 for s in group) else None,
            "tok": math.fsum(a.context_tokens for a in attempts) / len(attempts),
            "usd": math.fsum(a.cost_usd for a in attempts) / len(attempts),
        }
    return rows


def scoreboard(samples: Sequence[RunSample], grouping: Grouping | None = None, *, mode: str = "first") -> Scoreboard:
    rows = benchmark_rows(samples, mode=mode)
    if grouping is not None:
        missing = sorted(set(rows) - set(grouping.domain_of))
        if missing:
            raise MetricError(f"benchmark(s) missing from grouping: {missing}", code="benchmark-missing")
    return aggregate_domains(rows, grouping)


# -- batch runner ----------------------------------------------------------


@dataclass
class EpisodeResult:
    index: int
    task: TaskRecord
    attempt: int
    episode_id: str
    lines: list[dict]
    trajectory: str
    b: int
    cost_usd: float
    context_tokens: float
    shaping_s: float
    error: str = ""
    reward: dict[str, Any] = field(default_factory=dict)


_SAFE = re.compile(r"[^A-Za-z0-9_.-]+")


def episode_name(task_id: str, attempt: int) -> str:
    return f"{_SAFE.sub('_', task_id)}.a{attempt}"


def _one_episode(
    index: int, task: TaskRecord, attempt: int, policy: Policy, registry: PoolRegistry,
    backends: Mapping[str, Backend], config: Config, seed: int,
) -> EpisodeResult:
    eid = episode_name(task.task_id, attempt)
    ep_seed = stable_seed(seed, task.task_id, attempt)
    try:
        doc, outcome = run_episode(task.query, policy, registry, backends, config, episode_seed=ep_seed, episode_id=eid)
    except ConfigError:
        raise
    except Exception as exc:  # noqa: BLE001 - a failing task must not abort the batch
        msg = f"{type(exc).__name__}: {exc}"
        lines = [_episode_record(eid, task, attempt, ep_seed, index, "", True, 0, 0.0, 0.0, 0.0, 0, "", msg)]
        return EpisodeResult(index, task, attempt, eid, lines, "", 0, 0.0, 0.0, 0.0, msg)
    verdict = verify_answer(outcome.answer, task.gold, qa_score=config.qa_score) if not outcome.truncated else None
    b = verdict.b if verdict is not None else 0
    s = shaping_score(doc, outcome.events, registry.relabel(outcome.view))
    cost = float(outcome.cost)
    ctx = outcome.context_tokens
    lines = list(outcome.log)
    lines.append(
        _episode_record(eid, task, attempt, ep_seed, index, outcome.answer, outcome.truncated, b, cost, ctx, s,
                        len(doc.turns), classify_behaviour(doc), "",
                        shaping=[sig.r for sig in outcome.shaping(config.eta)])
    )
    return EpisodeResult(index, task, attempt, eid, lines, serialize_trajectory(doc), b, cost, ctx, s)


def _episode_record(
    eid: str, task: TaskRecord, attempt: int, ep_seed: int, index: int, answer: str, truncated: bool, b: int,
    cost: float, ctx: float, s: float, turns: int, behaviour: str, error: str, shaping: Sequence[float] = (),
) -> dict[str, Any]:
    return {
        "record": "episode",
        "episode_id": eid,
        "index": index,
        "task_id": task.task_id,
        "benchmark": task.source,
        "attempt": attempt,
        "episode_seed": ep_seed,
        "answer": answer,
        "truncated": truncated,
        "b": b,
        "cost_usd": cost,
        "context_tokens": ctx,
        "shaping_s": s,
        "turn_shaping": list(shaping),
        "turns": turns,
        "behaviour": behaviour,
        "error": error,
    }


def reward_records(episodes: Sequence[Mapping[str, Any]], config: Config) -> list[dict[str, Any]]:
    """Terminal rewards for episode records, replaying the cost normaliser in index order."""
    state = NormalizerState(config.buffer_size, config.lo_pct, config.hi_pct, config.warmup)
    out = []
    for ep in sorted(episodes, key=lambda e: e["index"]):
        c_hat = state.normalize(ep["cost_usd"])
        state.observe(ep["cost_usd"])
        tr = terminal_reward(int(ep["b"]), c_hat, float(ep["shaping_s"]), config.alpha)
        out.append(
            {
                "record": "reward",
                "episode_id": ep["episode_id"],
                "task_id": ep["task_id"],
                "attempt": ep["attempt"],
                "b": tr.b,
                "cost_usd": ep["cost_usd"],
                "c_hat": tr.c_hat,
                "shaping_s": tr.shaping_s,
                "R": tr.value,
                "turn_shaping": ep.get("turn_shaping", []),
            }
        )
    return out


@dataclass
class BatchResult:
    samples: list[RunSample]
    episodes: list[EpisodeResult]
    rewards: list[dict[str, Any]]
    scoreboard: Scoreboard

    @property
    def logs(self) -> dict[str, list[dict]]:
        return {e.episode_id: e.lines for e in self.episodes}


def run_batch(
    tasks: Sequence[TaskRecord],
    policy: Policy,
    registry: PoolRegistry,
    backends: Mapping[str, Backend],
    attempts_per_task: int = 2,
    seed: int = 0,
    *,
    config: Config | None = None,
    grouping: Grouping | None = None,
    out_dir: str | Path | None = None,
    max_workers: int | None = None,
) -> BatchResult:
    """Run every task ``attempts_per_task`` times as independent seeded episodes.

    Episodes run on a bounded thread pool; everything order-dependent (cost
    normalisation, file contents) is computed afterwards in task order, so
    results do not depend on scheduling.
    """
    if attempts_per_task < 1:
        raise ConfigError("attempts_per_task must be >= 1")
    config = config or Config()
    jobs = [(task, a) for task in tasks for a in range(attempts_per_task)]
    workers = max_workers or min(32, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_one_episode, i, task, a, policy, registry, backends, config, seed)
            for i, (task, a) in enumerate(jobs)
        ]
        episodes = [f.result() for f in futures]
    records = [e.lines[-1] for e in episodes]
    rewards = reward_records(records, config)
    for ep, rw in zip(episodes, rewards):
        ep.reward = rw
        ep.lines.append(rw)
    samples = samples_from_episodes(records)
    board = scoreboard(samples, grouping, mode=config.pass1_mode)
    result = BatchResult(samples, episodes, rewards, board)
    if out_dir is not None:
        write_batch(result, Path(out_dir))
    return result


def samples_from_episodes(records: Iterable[Mapping[str, Any]]) -> list[RunSample]:
    """Fold episode records into per-task samples, attempts in attempt order."""
    by_task: dict[str, list[Mapping[str, Any]]] = {}
    for r in records:
        by_task.setdefault(r["task_id"], []).append(r)
    samples = []
    for tid, recs in by_task.items():
        recs = sorted(recs, key=lambda r: r["attempt"])
        samples.append(
            RunSample(tid, tuple(Attempt(int(r["b"]), float(r["cost_usd"]), float(r["context_tokens"])) for r in recs),
                      recs[0].get("benchmark", ""))
        )
    return samples


def _jsonl(records: Iterable[Mapping[str, Any]]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def write_batch(result: BatchResult, out: Path) -> None:
    (out / "episodes").mkdir(parents=True, exist_ok=True)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    for ep in result.episodes:
        (out / "episodes" / f"{ep.episode_id}.log.jsonl").write_text(_jsonl(ep.lines), "utf-8")
        if ep.trajectory:
            (out / "trajectories" / f"{ep.episode_id}.traj.xml").write_text(ep.trajectory, "utf-8")
    (out / "rewards.jsonl").write_text(_jsonl(result.rewards), "utf-8")
    (out / "scoreboard.json").write_text(result.scoreboard.dumps(), "utf-8")


def read_episode_records(logs_dir: str | Path) -> list[dict[str, Any]]:
    """The ``episode`` record of every log under ``logs_dir`` (or its ``episodes/`` child)."""
    root = Path(logs_dir)
    if (root / "episodes").is_dir():
        root = root / "episodes"
    records = []
    for path in sorted(root.glob("*.log.jsonl")):
        for line in path.read_text("utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                if rec.get("record") == "episode":
                    records.append(rec)
    if not records:
        raise MetricError(f"no episode records under {logs_dir}", code="no-logs")
    return sorted(records, key=lambda r: r["index"])


def report_from_logs(logs_dir: str | Path, grouping: Grouping | None = None, *, mode: str = "first") -> Scoreboard:
    """Recompute the scoreboard from raw episode logs alone."""
    return scoreboard(samples_from_episodes(read_episode_records(logs_dir)), grouping, mode=mode)

