"""Rule-based routers. They stand in for a learned policy in tests and desk runs."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .grammar import PlanBlock, RouteBlock, Subtask, VerifyBlock
from .scheduler import PolicyAction, PolicyView

ERROR_PREFIX = "[error]"
_PARTS = re.compile(r"\s*(?:\n|;)\s*")


def _price(row: Mapping[str, object]) -> float:
    return float(row["prompt_price"]) + float(row["completion_price"])  # type: ignore[arg-type]


def workers_for(view: PolicyView, skill: str) -> list[str]:
    """Labels offering ``skill``, cheapest first (ties by catalogue order)."""
    rows = [(i, r) for i, r in enumerate(view.catalogue) if skill in r["skills"]]  # type: ignore[operator]
    rows.sort(key=lambda ir: (_price(ir[1]), ir[0]))
    return [str(r["model"]) for _, r in rows]


def _default_check(view: PolicyView) -> VerifyBlock:
    failed = [o.subtask_id for o in view.observations if o.text.startswith(ERROR_PREFIX)]
    if failed:
        return VerifyBlock(f"subtask(s) {', '.join(map(str, failed))} failed", replan=True)
    return VerifyBlock("observations complete", replan=False)


def _last_obs(view: PolicyView) -> str:
    for turn in reversed(view.turns):
        for o in reversed(turn.observations):
            if not o.text.startswith(ERROR_PREFIX):
                return o.text
    return ""


def _tried(view: PolicyView) -> set[str]:
    return {r.model for t in view.turns for r in t.routes}


@dataclass
class LazyPolicy:
    """Answers at turn 1 without delegating."""

    answer: Callable[[str], str] = lambda q: ""
    name: str = "lazy"

    def act(self, view: PolicyView) -> PolicyAction:
        return PolicyAction("direct_answer", answer=self.answer(view.query))

    def check(self, view: PolicyView) -> VerifyBlock | None:
        return None


@dataclass
class CascadePolicy:
    """Route the whole query to the cheapest capable worker; escalate on failure.

    With ``escalate=False`` this is the single-dispatch cheapest router.
    """

    skill: str = "direct_answer"
    escalate: bool = True
    name: str = "cascade"

    def act(self, view: PolicyView) -> PolicyAction:
        if not view.turns:
            worker = workers_for(view, self.skill)[0]
            plan = PlanBlock((Subtask(1, (), view.query),))
            return PolicyAction("decompose_route", plan, (RouteBlock(1, worker, self.skill, view.query),))
        replan = view.last_verify is not None and view.last_verify.replan
        untried = [w for w in workers_for(view, self.skill) if w not in _tried(view)]
        if replan and self.escalate and untried and view.turn_index < view.t_max:
            sid = view.next_subtask_id()
            plan = PlanBlock((Subtask(sid, (), view.query),))
            return PolicyAction("repair", plan, (RouteBlock(sid, untried[0], self.skill, view.query),))
        return PolicyAction("final", answer=_last_obs(view))

    def check(self, view: PolicyView) -> VerifyBlock | None:
        return _default_check(view)


def cheapest_policy() -> CascadePolicy:
    return CascadePolicy(escalate=False, name="cheapest")


@dataclass
class FanoutPolicy:
    """Split the query on newlines/semicolons, solve parts in parallel, aggregate.

    Parts go to the cheapest worker; the aggregation subtask, which depends
    on every part, goes to the most expensive one and receives the whole query.
    """

    skill: str = "direct_answer"
    name: str = "fanout"

    def act(self, view: PolicyView) -> PolicyAction:
        if view.turns:
            return PolicyAction("final", answer=_last_obs(view))
        workers = workers_for(view, self.skill)
        parts = [p for p in _PARTS.split(view.query.strip()) if p]
        if len(parts) < 2:
            plan = PlanBlock((Subtask(1, (), view.query),))
            return PolicyAction("decompose_route", plan, (RouteBlock(1, workers[-1], self.skill, view.query),))
        subtasks = [Subtask(i, (), p) for i, p in enumerate(parts, 1)]
        agg = len(parts) + 1
        subtasks.append(Subtask(agg, tuple(range(1, agg)), view.query))
        routes = [RouteBlock(i, workers[0], self.skill, p) for i, p in enumerate(parts, 1)]
        routes.append(RouteBlock(agg, workers[-1], self.skill, view.query))
        return PolicyAction("decompose_route", PlanBlock(tuple(subtasks)), tuple(routes))

    def check(self, view: PolicyView) -> VerifyBlock | None:
        return _default_check(view)


@dataclass
class ChainPolicy:
    """One plan-less route per turn over the query's parts (continuation shape)."""

    skill: str = "direct_answer"
    name: str = "chain"

    def act(self, view: PolicyView) -> PolicyAction:
        parts = [p for p in _PARTS.split(view.query.strip()) if p] or [view.query]
        done = sum(len(t.routes) for t in view.turns)
        if done >= len(parts) or view.turn_index >= view.t_max:
            return PolicyAction("final", answer=_last_obs(view))
        worker = workers_for(view, self.skill)[0]
        sid = view.next_subtask_id()
        instruction = parts[done] if done < len(parts) - 1 else view.query
        return PolicyAction("decompose_route", None, (RouteBlock(sid, worker, self.skill, instruction),))

    def check(self, view: PolicyView) -> VerifyBlock | None:
        return None


@dataclass
class ScriptedPolicy:
    """Replays a fixed action list; repeats the last action once exhausted."""

    actions: Sequence[PolicyAction]
    verdicts: Sequence[VerifyBlock | None] = field(default_factory=tuple)
    name: str = "scripted"

    def act(self, view: PolicyView) -> PolicyAction:
        return self.actions[min(view.turn_index, len(self.actions)) - 1]

    def check(self, view: PolicyView) -> VerifyBlock | None:
        i = view.turn_index - 1
        return self.verdicts[i] if i < len(self.verdicts) else None


POLICIES: dict[str, Callable[[], object]] = {
    "lazy": LazyPolicy,
    "cheapest": cheapest_policy,
    "cascade": CascadePolicy,
    "fanout": FanoutPolicy,
    "chain": ChainPolicy,
}


def make_policy(name: str):
    try:
        return POLICIES[name]()
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; expected one of {sorted(POLICIES)}") from None
