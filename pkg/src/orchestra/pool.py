"""Closed worker pool, primitive vocabulary and admissible (model, primitive) pairs."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import InadmissiblePair, RegistryError

CLUSTERS = ("answer_reason", "retrieve", "skills", "execute", "symbolic")

MILLION = Decimal(1_000_000)


@dataclass(frozen=True)
class PrimitiveSpec:
    primitive_id: str
    cluster: str
    contract: str = ""


@dataclass(frozen=True)
class WorkerSpec:
    worker_id: str
    display_name: str
    prompt_price: Decimal  # USD per 1e6 prompt tokens
    completion_price: Decimal  # USD per 1e6 completion tokens
    skills: frozenset[str]
    endpoint: str | None = None
    model: str | None = None  # provider-side model name for HTTP calls


@dataclass(frozen=True, order=True)
class AdmissiblePair:
    worker_id: str
    primitive_id: str


@dataclass(frozen=True)
class UsageRecord:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    def __add__(self, other: UsageRecord) -> UsageRecord:
        return UsageRecord(self.prompt_tokens + other.prompt_tokens, self.completion_tokens + other.completion_tokens)


def _price(value: Any, where: str) -> Decimal:
    try:
        price = Decimal(str(value))
    except Exception:
        raise RegistryError(f"{where}: price {value!r} is not a number") from None
    if not price.is_finite() or price < 0:
        raise RegistryError(f"{where}: price must be a non-negative number")
    return price


class PoolRegistry:
    """Immutable view of M (workers), S (primitives) and P (admissible pairs)."""

    def __init__(self, workers: Iterable[WorkerSpec], primitives: Iterable[PrimitiveSpec]) -> None:
        self.primitives: dict[str, PrimitiveSpec] = {}
        for p in primitives:
            if p.primitive_id in self.primitives:
                raise RegistryError(f"duplicate primitive id {p.primitive_id!r}", code="duplicate-id")
            if p.cluster not in CLUSTERS:
                raise RegistryError(f"primitive {p.primitive_id!r}: unknown cluster {p.cluster!r}")
            self.primitives[p.primitive_id] = p
        self.workers: dict[str, WorkerSpec] = {}
        for w in workers:
            if w.worker_id in self.workers:
                raise RegistryError(f"duplicate worker id {w.worker_id!r}", code="duplicate-id")
            unknown = sorted(w.skills - self.primitives.keys())
            if unknown:
                raise RegistryError(
                    f"worker {w.worker_id!r} claims unknown primitive(s) {unknown}", code="unknown-primitive"
                )
            self.workers[w.worker_id] = w
        if not self.workers:
            raise RegistryError("worker pool is empty", code="empty-pool")

    @property
    def pairs(self) -> frozenset[AdmissiblePair]:
        return frozenset(AdmissiblePair(w.worker_id, s) for w in self.workers.values() for s in w.skills)

    def is_admissible(self, worker_id: str, primitive_id: str) -> bool:
        w = self.workers.get(worker_id)
        return w is not None and primitive_id in w.skills

    def resolves(self, model: str, skill: str) -> bool:
        return self.is_admissible(model, skill)

    def pair(self, worker_id: str, primitive_id: str) -> AdmissiblePair:
        if not self.is_admissible(worker_id, primitive_id):
            raise InadmissiblePair(f"({worker_id}, {primitive_id}) is not an admissible pair")
        return AdmissiblePair(worker_id, primitive_id)

    def pair_cost(self, pair: AdmissiblePair, usage: UsageRecord) -> Decimal:
        return pair_cost(self, pair, usage)

    def relabel(self, view: AnonymizedView) -> PoolRegistry:
        """The same pool with worker ids replaced by their anonymous labels."""
        return PoolRegistry(
            (
                WorkerSpec(view.label(w.worker_id), view.label(w.worker_id), w.prompt_price, w.completion_price, w.skills)
                for w in self.workers.values()
            ),
            self.primitives.values(),
        )

    def catalogue(self, view: AnonymizedView | None = None) -> list[dict[str, Any]]:
        """Rows of (model, skills, prices) as shown to the router; labels replace ids under ``view``."""
        rows = []
        for w in self.workers.values():
            name = view.label(w.worker_id) if view is not None else w.worker_id
            rows.append(
                {
                    "model": name,
                    "skills": sorted(w.skills),
                    "prompt_price": float(w.prompt_price),
                    "completion_price": float(w.completion_price),
                }
            )
        rows.sort(key=lambda r: _label_key(r["model"]))
        return rows


def _label_key(name: str) -> tuple[int, str]:
    head, _, tail = name.rpartition(" ")
    return (int(tail), head) if head == "Worker" and tail.isdigit() else (1 << 30, name)


def pair_cost(registry: PoolRegistry, pair: AdmissiblePair, usage: UsageRecord) -> Decimal:
    """Exact list-price cost of one call in USD."""
    if not registry.is_admissible(pair.worker_id, pair.primitive_id):
        raise InadmissiblePair(f"({pair.worker_id}, {pair.primitive_id}) is not an admissible pair")
    w = registry.workers[pair.worker_id]
    return (Decimal(usage.prompt_tokens) * w.prompt_price + Decimal(usage.completion_tokens) * w.completion_price) / MILLION


def registry_from_dict(data: Mapping[str, Any]) -> PoolRegistry:
    if not isinstance(data, Mapping) or "workers" not in data or "primitives" not in data:
        raise RegistryError("registry needs top-level 'workers' and 'primitives'")
    prims = []
    for i, p in enumerate(data["primitives"]):
        try:
            prims.append(PrimitiveSpec(str(p["id"]), str(p["cluster"]), str(p.get("contract", ""))))
        except (KeyError, TypeError):
            raise RegistryError(f"primitives[{i}] needs 'id' and 'cluster'") from None
    workers = []
    for i, w in enumerate(data["workers"]):
        try:
            wid = str(w["id"])
            skills = w["skills"]
        except (KeyError, TypeError):
            raise RegistryError(f"workers[{i}] needs 'id' and 'skills'") from None
        workers.append(
            WorkerSpec(
                worker_id=wid,
                display_name=str(w.get("display_name", wid)),
                prompt_price=_price(w.get("prompt_price", 0), f"workers[{i}]"),
                completion_price=_price(w.get("completion_price", 0), f"workers[{i}]"),
                skills=frozenset(str(s) for s in skills),
                endpoint=w.get("endpoint"),
                model=w.get("model"),
            )
        )
    return PoolRegistry(workers, prims)


def load_registry(source: str) -> PoolRegistry:
    """Build a registry from JSON config text."""
    try:
        data = json.loads(source)
    except json.JSONDecodeError as exc:
        raise RegistryError(f"registry is not valid JSON: {exc}") from None
    return registry_from_dict(data)


def load_registry_file(path: str | Path) -> PoolRegistry:
    return load_registry(Path(path).read_text("utf-8"))


@dataclass(frozen=True)
class AnonymizedView:
    """Per-episode bijection between worker ids and ``Worker k`` labels."""

    episode_seed: int
    mapping: dict[str, str] = field(hash=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_reverse", {v: k for k, v in self.mapping.items()})

    def label(self, worker_id: str) -> str:
        return self.mapping[worker_id]

    def worker(self, label: str) -> str:
        return self._reverse[label]  # type: ignore[attr-defined]

    def knows_label(self, label: str) -> bool:
        return label in self._reverse  # type: ignore[attr-defined]


def anonymize_pool(registry: PoolRegistry, episode_seed: int) -> AnonymizedView:
    ids = sorted(registry.workers)
    order = ids[:]
    random.Random(episode_seed).shuffle(order)
    return AnonymizedView(episode_seed, {wid: f"Worker {k}" for k, wid in enumerate(order, start=1)})


def identity_view(registry: PoolRegistry) -> AnonymizedView:
    """Non-blind mode: labels are the worker ids themselves."""
    return AnonymizedView(0, {wid: wid for wid in sorted(registry.workers)})
