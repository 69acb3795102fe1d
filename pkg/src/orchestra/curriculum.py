"""Verifier-gated task split, fallback-cascade promotion, augmentation provenance and failure labels."""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Literal, Mapping, Sequence

from .errors import CurriculumError
from .verify import GoldSpec

AXES = (
    "atomic_reasoning",
    "compositional_reasoning",
    "knowledge_retrieval",
    "multi_hop",
    "tool_code",
    "agentic_long_context",
)
DistillationPass = Literal["primary", "augmentation", "fallback"]
FAILURE_CATEGORIES = ("information_loss", "premature_aggregation", "format_mismatch", "delegation_scope_error")
MAX_CONSTRAINT_WORDS = 30


@dataclass(frozen=True)
class TaskRecord:
    task_id: str
    query: str
    gold: GoldSpec
    source: str = ""
    axis: str = "atomic_reasoning"

    def __post_init__(self) -> None:
        if self.axis not in AXES:
            raise CurriculumError(f"task {self.task_id}: axis {self.axis!r} not in {AXES}", code="bad-axis")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TaskRecord:
        return cls(
            task_id=str(data["task_id"]),
            query=str(data["query"]),
            gold=GoldSpec.from_dict(data["gold"]),
            source=str(data.get("source", "")),
            axis=str(data.get("axis", "atomic_reasoning")),
        )


def load_tasks(path: str | Path) -> list[TaskRecord]:
    """Tasks from a JSON-lines file; blank lines are skipped."""
    tasks = []
    for n, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            tasks.append(TaskRecord.from_dict(json.loads(line)))
        except (KeyError, ValueError, TypeError) as exc:
            raise CurriculumError(f"{path}:{n}: {exc}", code="parse-error") from None
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise CurriculumError(f"{path}: duplicate task_id", code="duplicate-task")
    return tasks


@dataclass(frozen=True)
class ProbeResult:
    task_id: str
    b0: int = 0
    b_star: int = 0
    teacher_trace: str | None = None
    teacher: str = "teacher"
    infra_flag: bool = False

    def __post_init__(self) -> None:
        if self.b0 not in (0, 1) or self.b_star not in (0, 1):
            raise CurriculumError(f"probe {self.task_id}: verdicts must be 0 or 1", code="bad-probe")
        if self.teacher_trace is not None and self.b_star != 1:
            raise CurriculumError(f"probe {self.task_id}: trace present without a teacher pass", code="bad-probe")


@dataclass(frozen=True)
class SftEntry:
    task_id: str
    trace: str | None
    teacher: str
    distillation_pass: DistillationPass


@dataclass(frozen=True)
class Discarded:
    task_id: str
    reason: str


@dataclass
class CurriculumManifest:
    sft: list[SftEntry] = field(default_factory=list)
    rl: list[str] = field(default_factory=list)
    discarded: list[Discarded] = field(default_factory=list)
    constraints: list[list[str]] = field(default_factory=list)

    def sft_ids(self) -> set[str]:
        return {e.task_id for e in self.sft}

    def bucket_of(self, task_id: str) -> str | None:
        if task_id in self.sft_ids():
            return "sft"
        if task_id in set(self.rl):
            return "rl"
        if task_id in {d.task_id for d in self.discarded}:
            return "discarded"
        return None

    def task_ids(self) -> list[str]:
        return sorted(self.sft_ids() | set(self.rl) | {d.task_id for d in self.discarded})

    def check_partition(self) -> None:
        sft, rl, dis = self.sft_ids(), set(self.rl), {d.task_id for d in self.discarded}
        if len(rl) != len(self.rl) or len(dis) != len(self.discarded):
            raise CurriculumError("a task appears twice in one bucket", code="partition")
        if sft & rl or sft & dis or rl & dis:
            raise CurriculumError("buckets overlap", code="partition")

    def to_dict(self) -> dict[str, Any]:
        return {
            "sft": [asdict(e) for e in self.sft],
            "rl": list(self.rl),
            "discarded": [asdict(d) for d in self.discarded],
            "constraints": [list(c) for c in self.constraints],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CurriculumManifest:
        m = cls(
            sft=[SftEntry(e["task_id"], e.get("trace"), e["teacher"], e["distillation_pass"]) for e in data.get("sft", [])],
            rl=[str(t) for t in data.get("rl", [])],
            discarded=[Discarded(d["task_id"], d["reason"]) for d in data.get("discarded", [])],
            constraints=[list(c) for c in data.get("constraints", [])],
        )
        m.check_partition()
        return m

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def probe_split(probes: Iterable[ProbeResult]) -> CurriculumManifest:
    """Route each task by its cold-start and teacher verdicts."""
    m = CurriculumManifest()
    seen: set[str] = set()
    for p in probes:
        if p.task_id in seen:
            raise CurriculumError(f"duplicate task_id {p.task_id}", code="duplicate-task")
        seen.add(p.task_id)
        if p.infra_flag:
            m.discarded.append(Discarded(p.task_id, "infra"))
        elif p.b0 == 1:
            m.discarded.append(Discarded(p.task_id, "solved"))
        elif p.b_star == 1:
            m.sft.append(SftEntry(p.task_id, p.teacher_trace, p.teacher, "primary"))
        else:
            m.rl.append(p.task_id)
    return m


@dataclass(frozen=True)
class RetryResult:
    task_id: str
    success: bool
    teacher: str
    trace: str | None = None


def cascade_promote(manifest: CurriculumManifest, retry_results: Iterable[RetryResult]) -> CurriculumManifest:
    """Move retried RL tasks that a stronger teacher solved into SFT as fallback traces."""
    results = list(retry_results)
    rl = set(manifest.rl)
    promoted: dict[str, RetryResult] = {}
    for res in results:
        if res.task_id not in rl:
            raise CurriculumError(f"task {res.task_id} is not in the RL pool", code="not-in-rl")
        if res.success and res.task_id not in promoted:
            promoted[res.task_id] = res
    sft = list(manifest.sft) + [
        SftEntry(tid, promoted[tid].trace, promoted[tid].teacher, "fallback") for tid in manifest.rl if tid in promoted
    ]
    return replace(manifest, sft=sft, rl=[t for t in manifest.rl if t not in promoted])


@dataclass(frozen=True)
class Augmentation:
    task_id: str
    trace: str | None
    temp: float
    verdict: int
    teacher: str = "teacher"


def record_augmentation(manifest: CurriculumManifest, extra: Iterable[Augmentation]) -> CurriculumManifest:
    """Append verifier-passing extra teacher rollouts for tasks already in SFT."""
    sft_ids = manifest.sft_ids()
    added = []
    for aug in extra:
        if aug.task_id not in sft_ids:
            raise CurriculumError(f"task {aug.task_id} is not in the SFT pool", code="not-in-sft")
        if aug.verdict == 1:
            added.append(SftEntry(aug.task_id, aug.trace, aug.teacher, "augmentation"))
    return replace(manifest, sft=list(manifest.sft) + added)


# -- failure taxonomy ------------------------------------------------------


@dataclass(frozen=True)
class FailureLabel:
    category: str
    evidence_span: str
    suggested_constraint: str


Classifier = Callable[[str, str], Mapping[str, str] | FailureLabel]


def classify_failure(trace: str, gold: str, classifier: Classifier) -> FailureLabel:
    """Ask ``classifier`` for a root cause and check its answer against the taxonomy and the trace."""
    raw = classifier(trace, gold)
    label = raw if isinstance(raw, FailureLabel) else FailureLabel(
        str(raw.get("category", "")), str(raw.get("evidence_span", "")), str(raw.get("suggested_constraint", ""))
    )
    if label.category not in FAILURE_CATEGORIES:
        raise CurriculumError(f"category {label.category!r} is outside the taxonomy", code="label-outside-taxonomy")
    if not label.evidence_span or label.evidence_span not in trace:
        raise CurriculumError("evidence span does not occur in the trace", code="evidence-not-in-trace")
    if len(label.suggested_constraint.split()) > MAX_CONSTRAINT_WORDS:
        raise CurriculumError(f"suggested constraint exceeds {MAX_CONSTRAINT_WORDS} words", code="constraint-too-long")
    return label


# -- probing helpers -------------------------------------------------------


def pass_at_n(verdicts: Sequence[int]) -> int:
    """1 if any attempt verified."""
    return int(any(v == 1 for v in verdicts))


def sample_by_quota(
    tasks: Sequence[TaskRecord], quotas: Mapping[str, int], seed: int = 0
) -> list[TaskRecord]:
    """Draw up to ``quotas[source]`` tasks per source without replacement, seeded."""
    rng = random.Random(seed)
    by_source: dict[str, list[TaskRecord]] = {}
    for t in tasks:
        by_source.setdefault(t.source, []).append(t)
    out = []
    for source in sorted(quotas):
        pool = by_source.get(source, [])
        out.extend(rng.sample(pool, min(quotas[source], len(pool))))
    return out


def probes_from_jsonl(text: str) -> list[ProbeResult]:
    out = []
    for line in text.splitlines():
        if line.strip():
            d = json.loads(line)
            out.append(
                ProbeResult(
                    task_id=str(d["task_id"]),
                    b0=int(d.get("b0", 0)),
                    b_star=int(d.get("b_star", 0)),
                    teacher_trace=d.get("teacher_trace"),
                    teacher=str(d.get("teacher", "teacher")),
                    infra_flag=bool(d.get("infra_flag", False)),
                )
            )
    return out


def retries_from_jsonl(text: str) -> list[RetryResult]:
    return [
        RetryResult(str(d["task_id"]), bool(d["success"]), str(d.get("teacher", "teacher")), d.get("trace"))
        for d in (json.loads(line) for line in text.splitlines() if line.strip())
    ]
