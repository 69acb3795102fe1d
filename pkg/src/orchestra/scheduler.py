"""Single-episode execution: policy turns, DAG dispatch, observation splicing."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Literal, Mapping, Protocol, Sequence

from .config import Config
from .errors import ConfigError, ContextBudgetError, OrchestraError
from .grammar import (
    ObsBlock,
    PlanBlock,
    RouteBlock,
    Subtask,
    TrajectoryDoc,
    TurnBlock,
    VerifyBlock,
    render_obs,
    render_plan,
    render_route,
    render_verify,
    validate_trajectory,
)
from .pool import AdmissiblePair, AnonymizedView, PoolRegistry, anonymize_pool, identity_view
from .reward import (
    INVALID_EMISSION,
    PREMATURE_FINAL,
    REPAIR_TRIGGERED,
    SCHEMA_VALID_PLAN,
    SCHEMA_VALID_ROUTES,
    CostLedger,
    LedgerEntry,
    ShapingSignal,
    turn_shaping,
)
from .workers import Backend, WorkerRequest, WorkerResponse, dispatch_call, stable_seed

ActionKind = Literal["direct_answer", "decompose_route", "repair", "final"]
ACTION_KINDS: tuple[ActionKind, ...] = ("direct_answer", "decompose_route", "repair", "final")
ELIDED = "[elided]"


class CycleDetected(OrchestraError):
    code = "cycle-detected"


@dataclass(frozen=True)
class PolicyAction:
    kind: ActionKind
    plan: PlanBlock | None = None
    routes: tuple[RouteBlock, ...] = ()
    answer: str | None = None


@dataclass(frozen=True)
class PolicyView:
    """What the policy sees before acting (or, for ``check``, after observations)."""

    query: str
    turn_index: int
    t_max: int
    context: str
    catalogue: tuple[Mapping[str, object], ...]
    turns: tuple[TurnBlock, ...]
    seed: int
    observations: tuple[ObsBlock, ...] = ()
    last_verify: VerifyBlock | None = None

    def next_subtask_id(self) -> int:
        ids = [s.id for t in self.turns for s in t.subtasks()]
        return max(ids, default=0) + 1


class Policy(Protocol):
    name: str

    def act(self, view: PolicyView) -> PolicyAction: ...

    def check(self, view: PolicyView) -> VerifyBlock | None: ...


@dataclass
class Dispatch:
    route: RouteBlock
    worker_id: str
    response: WorkerResponse
    cost_usd: Decimal
    started: float
    finished: float


@dataclass
class TurnRecord:
    index: int
    action: PolicyAction
    dispatches: list[Dispatch] = field(default_factory=list)
    verify_outcome: Literal["pass", "repair_needed"] | None = None
    shaping_events: list[str] = field(default_factory=list)
    problems: list[str] = field(default_factory=list)
    context_tokens: int = 0
    block: TurnBlock | None = None

    @property
    def kind(self) -> ActionKind:
        return self.action.kind

    @property
    def valid(self) -> bool:
        return not self.problems


@dataclass
class EpisodeOutcome:
    episode_id: str
    answer: str
    truncated: bool
    records: list[TurnRecord]
    ledger: CostLedger
    view: AnonymizedView
    log: list[dict]

    @property
    def cost(self) -> Decimal:
        return self.ledger.total

    @property
    def events(self) -> list[str]:
        return [e for r in self.records for e in r.shaping_events]

    def shaping(self, eta: float) -> list[ShapingSignal]:
        return [turn_shaping(r.index, r.shaping_events, eta) for r in self.records]

    @property
    def context_tokens(self) -> float:
        per_dispatch = [r.context_tokens for r in self.records for _ in r.dispatches]
        values = per_dispatch or [r.context_tokens for r in self.records]
        return sum(values) / len(values) if values else 0.0


# -- DAG frontier ----------------------------------------------------------


def ready_set(pending: Mapping[int, Iterable[int]], resolved: Iterable[int]) -> set[int]:
    """Unresolved nodes whose dependencies are all resolved."""
    done = set(resolved)
    left = {n: set(d) for n, d in pending.items() if n not in done}
    ready = {n for n, deps in left.items() if deps <= done}
    if left and not ready:
        raise CycleDetected(f"no schedulable subtask among {sorted(left)}")
    return ready


# -- context rendering -----------------------------------------------------


def count_tokens(text: str) -> int:
    return len(text.split())


def _render(query: str, turns: Sequence[TurnBlock], elided: set[tuple[int, int]]) -> str:
    lines = [f"<query>{query}</query>"]
    for ti, turn in enumerate(turns):
        if turn.plan is not None:
            lines.extend(render_plan(turn.round, turn.plan))
        lines.extend(render_route(r) for r in turn.routes)
        for oi, o in enumerate(turn.observations):
            lines.append(render_obs(o, ELIDED if (ti, oi) in elided else None))
        if turn.verify is not None:
            lines.append(render_verify(turn.verify))
    return "\n".join(lines)


def truncate_context(query: str, turns: Sequence[TurnBlock], budget: int) -> str:
    """Render the router context within ``budget`` whitespace tokens.

    Oldest observation bodies are elided first; the query, every plan and the
    most recent turn are always kept in full.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    droppable = [(ti, oi) for ti, t in enumerate(turns[:-1]) for oi in range(len(t.observations))]
    if count_tokens(_render(query, turns, set(droppable))) > budget:
        raise ContextBudgetError(f"mandatory context exceeds {budget} tokens")
    elided: set[tuple[int, int]] = set()
    text = _render(query, turns, elided)
    for key in droppable:
        if count_tokens(text) <= budget:
            break
        elided.add(key)
        text = _render(query, turns, elided)
    return text


# -- episode ---------------------------------------------------------------


def _check_action(
    action: PolicyAction, used_ids: set[int], visible: PoolRegistry
) -> list[str]:
    problems: list[str] = []
    if action.kind not in ACTION_KINDS:
        return [f"unknown action kind {action.kind!r}"]
    if action.kind in ("direct_answer", "final"):
        if action.answer is None:
            problems.append("answer missing")
        if action.routes or action.plan is not None:
            problems.append("answer action carries routes")
        return problems
    if action.answer is not None:
        problems.append("routing action carries an answer")
    if not action.routes:
        return problems + ["no routes"]
    if action.plan is None and len(action.routes) != 1:
        problems.append("plan-less turn must carry exactly one route")
    subtasks = action.plan.subtasks if action.plan is not None else (Subtask(action.routes[0].subtask_id),)
    ids = [s.id for s in subtasks]
    if len(set(ids)) != len(ids):
        problems.append("duplicate subtask id")
    for s in subtasks:
        if s.id < 1 or s.id in used_ids:
            problems.append(f"subtask id {s.id} not fresh")
        for d in s.depends_on:
            if d >= s.id or (d not in used_ids and d not in ids):
                problems.append(f"subtask {s.id} has bad dependency {d}")
    routed = [r.subtask_id for r in action.routes]
    if len(set(routed)) != len(routed):
        problems.append("duplicate route")
    if set(routed) != set(ids):
        problems.append("routes do not cover the plan exactly")
    for r in action.routes:
        if not visible.resolves(r.model, r.skill):
            problems.append(f"inadmissible pair ({r.model}, {r.skill})")
    return problems


def run_episode(
    query: str,
    policy: Policy,
    registry: PoolRegistry,
    backends: Mapping[str, Backend],
    config: Config,
    *,
    episode_seed: int = 0,
    episode_id: str = "episode",
) -> tuple[TrajectoryDoc, EpisodeOutcome]:
    view = anonymize_pool(registry, episode_seed) if config.blind else identity_view(registry)
    visible = registry.relabel(view)
    catalogue = tuple(registry.catalogue(view))
    missing = sorted(set(registry.workers) - set(backends))
    if missing:
        raise ConfigError(f"no backend for worker(s) {missing}")

    blocks: list[TurnBlock] = []
    records: list[TurnRecord] = []
    ledger = CostLedger()
    log: list[dict] = []
    used_ids: set[int] = set()
    obs_by_id: dict[int, str] = {}
    answer: str | None = None
    last_verify: VerifyBlock | None = None

    for t in range(1, config.t_max + 1):
        context = truncate_context(query, blocks, config.context_budget)
        pview = PolicyView(query, t, config.t_max, context, catalogue, tuple(blocks), episode_seed, (), last_verify)
        action = policy.act(pview)
        record = TurnRecord(t, action, context_tokens=count_tokens(context))
        records.append(record)
        record.problems = _check_action(action, used_ids, visible)
        prev_outcome = records[-2].verify_outcome if len(records) > 1 else None
        if record.problems:
            record.shaping_events.append(INVALID_EMISSION)
            continue
        if action.kind in ("direct_answer", "final"):
            if prev_outcome == "repair_needed":
                record.shaping_events.append(PREMATURE_FINAL)
            answer = action.answer
            break

        record.shaping_events += [SCHEMA_VALID_PLAN, SCHEMA_VALID_ROUTES]
        if action.kind == "repair" and prev_outcome == "repair_needed":
            record.shaping_events.append(REPAIR_TRIGGERED)
        prev_round = blocks[-1].round if blocks else 0
        plan = action.plan
        if plan is None and prev_round != t - 1:
            r0 = action.routes[0]
            plan = PlanBlock((Subtask(r0.subtask_id, (), r0.payload),))  # keep rounds representable
        subtasks = plan.subtasks if plan is not None else (Subtask(action.routes[0].subtask_id),)
        pending = {s.id: s.depends_on for s in subtasks}
        routes = {r.subtask_id: r for r in action.routes}
        resolved = set(used_ids)
        used_ids.update(pending)

        while True:
            batch = sorted(ready_set({k: v for k, v in pending.items()}, resolved))
            if not batch:
                break
            results = _dispatch_batch(
                batch, routes, pending, obs_by_id, view, backends, config, episode_seed, t
            )
            for sid, worker_id, resp, started, finished in results:
                r = routes[sid]
                pair = registry.pair(worker_id, r.skill)
                cost = registry.pair_cost(pair, resp.usage)
                ledger.add(LedgerEntry(t, sid, pair, resp.usage, cost))
                record.dispatches.append(Dispatch(r, worker_id, resp, cost, started, finished))
                obs_by_id[sid] = resp.observation if resp.ok else f"[error] {resp.status}"
                log.append(
                    {
                        "record": "dispatch",
                        "episode_id": episode_id,
                        "turn": t,
                        "action_kind": action.kind,
                        "subtask_id": sid,
                        "worker_label": r.model,
                        "worker_id": worker_id,
                        "usage": {
                            "prompt_tokens": resp.usage.prompt_tokens,
                            "completion_tokens": resp.usage.completion_tokens,
                        },
                        "cost_usd": float(cost),
                        "status": resp.status,
                        "wall_ms": round(resp.latency * 1000.0, 3),
                    }
                )
            resolved.update(batch)
            for sid in batch:
                pending.pop(sid)

        observations = tuple(ObsBlock(sid, obs_by_id[sid]) for sid in sorted(routes))
        draft = TurnBlock(t, plan, tuple(action.routes), observations, None)
        after = PolicyView(
            query, t, config.t_max, context, catalogue, tuple(blocks) + (draft,), episode_seed, observations, last_verify
        )
        verify = policy.check(after)
        if verify is not None:
            record.verify_outcome = "repair_needed" if verify.replan else "pass"
            last_verify = verify
        block = TurnBlock(t, plan, tuple(action.routes), observations, verify)
        record.block = block
        blocks.append(block)

    truncated = answer is None
    doc = TrajectoryDoc(query, tuple(blocks), ("" if answer is None else answer,))
    report = validate_trajectory(doc, visible)
    if not report.valid:  # pragma: no cover - guarded by _check_action
        raise AssertionError(f"scheduler produced an invalid trajectory: {report.codes}")
    return doc, EpisodeOutcome(episode_id, doc.final_answer, truncated, records, ledger, view, log)


def _dispatch_batch(
    batch: list[int],
    routes: Mapping[int, RouteBlock],
    deps: Mapping[int, tuple[int, ...]],
    obs_by_id: Mapping[int, str],
    view: AnonymizedView,
    backends: Mapping[str, Backend],
    config: Config,
    episode_seed: int,
    turn: int,
) -> list[tuple[int, str, WorkerResponse, float, float]]:
    def one(sid: int) -> tuple[int, str, WorkerResponse, float, float]:
        r = routes[sid]
        worker_id = view.worker(r.model)
        context = "\n".join(f"[{d}] {obs_by_id[d]}" for d in deps[sid])
        request = WorkerRequest(
            pair=AdmissiblePair(worker_id, r.skill),
            instruction=r.payload,
            context=context,
            timeout=config.timeout,
            attempt_seed=stable_seed(episode_seed, turn, sid),
        )
        started = time.perf_counter()
        resp = dispatch_call(request, backends[worker_id], retries=config.retries)
        return sid, worker_id, resp, started, time.perf_counter()

    if len(batch) == 1:
        return [one(batch[0])]
    with ThreadPoolExecutor(max_workers=len(batch)) as pool:
        return list(pool.map(one, batch))
