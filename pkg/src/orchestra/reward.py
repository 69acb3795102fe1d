"""Trajectory cost, cost normalisation, the verifier-gated terminal reward and per-turn shaping."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from decimal import Decimal
from typing import TYPE_CHECKING, Iterable, Sequence

from .pool import AdmissiblePair, UsageRecord

if TYPE_CHECKING:
    from .grammar import TrajectoryDoc
    from .pool import PoolRegistry

SHAPING_CAP = 0.10

# shaping event tags
SCHEMA_VALID_PLAN = "schema_valid_plan"
SCHEMA_VALID_ROUTES = "schema_valid_routes"
INVALID_EMISSION = "invalid_emission"
REPAIR_TRIGGERED = "repair_triggered"
PREMATURE_FINAL = "premature_final"
EVENTS = (SCHEMA_VALID_PLAN, SCHEMA_VALID_ROUTES, INVALID_EMISSION, REPAIR_TRIGGERED, PREMATURE_FINAL)


@dataclass(frozen=True)
class LedgerEntry:
    turn: int
    subtask: int
    pair: AdmissiblePair
    usage: UsageRecord
    cost_usd: Decimal


@dataclass
class CostLedger:
    entries: list[LedgerEntry] = field(default_factory=list)

    def add(self, entry: LedgerEntry) -> None:
        self.entries.append(entry)

    @property
    def total(self) -> Decimal:
        return trajectory_cost(self)


def trajectory_cost(ledger: CostLedger | Iterable[LedgerEntry]) -> Decimal:
    entries = ledger.entries if isinstance(ledger, CostLedger) else ledger
    return sum((e.cost_usd for e in entries), Decimal(0))


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile of an ascending sequence."""
    n = len(sorted_values)
    rank = max(1, math.ceil(pct / 100.0 * n))
    return sorted_values[min(rank, n) - 1]


class NormalizerState:
    """Ring buffer of recent sqrt-costs and the percentile bracket built from it.

    Owned by a single writer; :meth:`normalize` reads, :meth:`observe` appends.
    """

    def __init__(self, size: int = 1000, lo_pct: float = 5.0, hi_pct: float = 95.0, warmup: int = 30) -> None:
        if not lo_pct < hi_pct:
            raise ValueError("lo_pct must be below hi_pct")
        self.buffer: deque[float] = deque(maxlen=size)
        self.lo_pct = lo_pct
        self.hi_pct = hi_pct
        self.warmup = warmup

    def bracket(self) -> tuple[float, float] | None:
        if len(self.buffer) < self.warmup:
            return None
        ordered = sorted(self.buffer)
        return nearest_rank(ordered, self.lo_pct), nearest_rank(ordered, self.hi_pct)

    def normalize(self, cost: float | Decimal) -> float:
        return normalize_cost(self, cost)

    def observe(self, cost: float | Decimal) -> None:
        self.buffer.append(math.sqrt(float(cost)))


def normalize_cost(state: NormalizerState, cost: float | Decimal) -> float:
    """Map a trajectory cost to [0, 1] against the state's sqrt-cost bracket; 0 before warm-up."""
    if cost < 0:
        raise ValueError("cost must be non-negative")
    bracket = state.bracket()
    if bracket is None:
        return 0.0
    lo, hi = bracket
    if hi == lo:
        return 0.0
    x = (math.sqrt(float(cost)) - lo) / (hi - lo)
    return min(1.0, max(0.0, x))


@dataclass(frozen=True)
class TerminalReward:
    b: int
    c_hat: float
    shaping_s: float
    value: float


def terminal_reward(b: int, c_hat: float, shaping_s: float = 0.0, alpha: float = 0.1) -> TerminalReward:
    if b not in (0, 1):
        raise ValueError(f"b must be 0 or 1, got {b!r}")
    if not 0.0 <= c_hat <= 1.0:
        raise ValueError(f"c_hat must lie in [0, 1], got {c_hat}")
    if not 0.0 <= shaping_s <= SHAPING_CAP:
        raise ValueError(f"shaping_s must lie in [0, {SHAPING_CAP}], got {shaping_s}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    value = b * ((1.0 - alpha) + alpha * (1.0 - c_hat)) + (1 - b) * shaping_s
    return TerminalReward(b, c_hat, shaping_s, value)


def shaping_score(doc: TrajectoryDoc, events: Iterable[str] = (), registry: PoolRegistry | None = None) -> float:
    """0.05 for a grammar-valid plan, 0.05 more when every route resolves; capped at 0.10.

    A plan-less continuation turn counts as an implicit plan. Any
    ``invalid_emission`` event means not every emitted route resolved.
    """
    events = list(events)
    routes = list(doc.routes())
    planned = any(turn.plan is not None or turn.routes for turn in doc.turns) or SCHEMA_VALID_PLAN in events
    score = 0.0
    if planned:
        score += 0.05
    resolved = bool(routes) and INVALID_EMISSION not in events
    if resolved and registry is not None:
        resolved = all(registry.resolves(r.model, r.skill) for r in routes)
    if resolved:
        score += 0.05
    return min(score, SHAPING_CAP)


@dataclass(frozen=True)
class ShapingSignal:
    turn: int
    r: float
    events: tuple[str, ...]


def turn_shaping(turn: int, events: Sequence[str], eta: float = 0.05) -> ShapingSignal:
    """Per-turn shaping from the turn's event tags, clamped to [-eta, eta]."""
    if not 0.0 < eta <= 0.2:
        raise ValueError("eta must lie in (0, 0.2]")
    half = eta / 2.0
    r = -half if INVALID_EMISSION in events else half
    if REPAIR_TRIGGERED in events:
        r += half
    return ShapingSignal(turn, min(eta, max(-eta, r)), tuple(events))
