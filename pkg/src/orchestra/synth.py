"""Seeded trajectory generators: valid documents, behaviour-shaped documents and single-violation mutants."""

from __future__ import annotations

import random
from dataclasses import replace
from decimal import Decimal
from typing import Callable, Sequence

from .grammar import (
    CLOSED_VOCABULARY,
    DAG_ACYCLIC,
    MONOTONE_ROUNDS,
    NO_NESTED_ROUTE,
    SINGLE_FINAL_ANSWER,
    ObsBlock,
    PlanBlock,
    RouteBlock,
    Subtask,
    TrajectoryDoc,
    TurnBlock,
    VerifyBlock,
    serialize_trajectory,
)
from .pool import PoolRegistry, PrimitiveSpec, WorkerSpec

DEFAULT_PAIRS: tuple[tuple[str, str], ...] = (
    ("Worker 1", "direct_answer"),
    ("Worker 1", "web_search"),
    ("Worker 2", "execute_code"),
    ("Worker 2", "direct_answer"),
    ("Worker 3", "sympy_solve"),
)
_WORDS = ("alpha", "beta", "x+1", "a<b", "R&D", '"quoted"', "it's", "42", "sum", "hop", "check", "émigré")


def _text(rng: random.Random, lo: int = 1, hi: int = 6) -> str:
    return " ".join(rng.choice(_WORDS) for _ in range(rng.randint(lo, hi)))


class _Builder:
    def __init__(self, rng: random.Random, pairs: Sequence[tuple[str, str]]) -> None:
        self.rng = rng
        self.pairs = list(pairs)
        self.next_id = 1
        self.turns: list[TurnBlock] = []

    @property
    def declared(self) -> list[int]:
        return list(range(1, self.next_id))

    def _route(self, sid: int) -> RouteBlock:
        model, skill = self.rng.choice(self.pairs)
        return RouteBlock(sid, model, skill, _text(self.rng))

    def planned(self, k: int, *, round_: int | None = None, deps: bool = True, verify: VerifyBlock | None = None) -> None:
        subs = []
        for _ in range(k):
            sid = self.next_id
            pool = [i for i in range(1, sid)]
            chosen = tuple(self.rng.sample(pool, self.rng.randint(0, min(2, len(pool))))) if deps and pool else ()
            subs.append(Subtask(sid, chosen, _text(self.rng)))
            self.next_id += 1
        routes = tuple(self._route(s.id) for s in subs)
        obs = tuple(ObsBlock(s.id, _text(self.rng)) for s in subs)
        prev = self.turns[-1].round if self.turns else 0
        r = round_ if round_ is not None else prev + 1
        self.turns.append(TurnBlock(r, PlanBlock(tuple(subs)), routes, obs, verify))

    def implicit(self, n: int = 1, verify: VerifyBlock | None = None) -> None:
        routes = []
        for _ in range(n):
            routes.append(self._route(self.next_id))
            self.next_id += 1
        obs = tuple(ObsBlock(r.subtask_id, _text(self.rng)) for r in routes)
        prev = self.turns[-1].round if self.turns else 0
        self.turns.append(TurnBlock(prev + 1, None, tuple(routes), obs, verify))

    def doc(self, answers: int = 1) -> TrajectoryDoc:
        return TrajectoryDoc(_text(self.rng), tuple(self.turns), tuple(_text(self.rng, 1, 3) for _ in range(answers)))


def _maybe_verify(rng: random.Random) -> VerifyBlock | None:
    roll = rng.random()
    if roll < 0.4:
        return None
    return VerifyBlock(_text(rng, 0, 4), replan=roll > 0.85)


def random_valid_doc(rng: random.Random, pairs: Sequence[tuple[str, str]] = DEFAULT_PAIRS, max_turns: int = 4) -> TrajectoryDoc:
    """Any grammar-valid trajectory: mixed planned and plan-less turns, cross-turn edges, gaps in rounds."""
    b = _Builder(rng, pairs)
    for _ in range(rng.randint(0, max_turns)):
        if b.turns and rng.random() < 0.35:
            b.implicit(rng.randint(1, 2), _maybe_verify(rng))
        else:
            prev = b.turns[-1].round if b.turns else 0
            b.planned(rng.randint(1, 4), round_=prev + rng.randint(1, 2), verify=_maybe_verify(rng))
    return b.doc()


# -- behaviour shapes ------------------------------------------------------


def lazy_doc(rng: random.Random, pairs: Sequence[tuple[str, str]] = DEFAULT_PAIRS) -> TrajectoryDoc:
    return _Builder(rng, pairs).doc()


def oneshot_doc(rng: random.Random, pairs: Sequence[tuple[str, str]] = DEFAULT_PAIRS) -> TrajectoryDoc:
    b = _Builder(rng, pairs)
    verify = VerifyBlock(_text(rng, 0, 3)) if rng.random() < 0.5 else None
    b.planned(rng.randint(1, 5), deps=False, verify=verify)
    return b.doc()


def continuation_doc(rng: random.Random, pairs: Sequence[tuple[str, str]] = DEFAULT_PAIRS) -> TrajectoryDoc:
    b = _Builder(rng, pairs)
    for _ in range(rng.randint(2, 5)):
        b.implicit(1)
    return b.doc()


def decomp_repair_doc(rng: random.Random, pairs: Sequence[tuple[str, str]] = DEFAULT_PAIRS) -> TrajectoryDoc:
    b = _Builder(rng, pairs)
    b.planned(rng.randint(1, 4), deps=False, verify=VerifyBlock(_text(rng, 1, 4), replan=True))
    b.planned(rng.randint(1, 2), verify=VerifyBlock(_text(rng, 0, 3)) if rng.random() < 0.5 else None)
    return b.doc()


SHAPES: dict[str, Callable[[random.Random], TrajectoryDoc]] = {
    "lazy": lazy_doc,
    "oneshot": oneshot_doc,
    "continuation": continuation_doc,
    "decomp_repair": decomp_repair_doc,
}


# -- single-violation generators ------------------------------------------
# Each returns raw text whose validation yields exactly the named code.


def violate_single_final_answer(rng: random.Random) -> str:
    doc = random_valid_doc(rng)
    return serialize_trajectory(replace(doc, answers=doc.answers * 2), check=False)


def violate_monotone_rounds(rng: random.Random) -> str:
    b = _Builder(rng, DEFAULT_PAIRS)
    b.planned(rng.randint(1, 3), round_=rng.randint(1, 3))
    b.planned(rng.randint(1, 3), round_=b.turns[-1].round - rng.randint(0, 1))
    return serialize_trajectory(b.doc(), check=False)


def violate_dag_acyclic(rng: random.Random) -> str:
    b = _Builder(rng, DEFAULT_PAIRS)
    if rng.random() < 0.5:
        b.planned(rng.randint(1, 2), deps=False)
    k = rng.randint(2, 4)
    b.planned(k, deps=False)
    turn = b.turns[-1]
    subs = list(turn.plan.subtasks)  # type: ignore[union-attr]
    i = rng.randrange(k - 1)
    j = rng.randrange(i + 1, k)
    subs[i] = replace(subs[i], depends_on=(subs[j].id,))  # a forward edge
    b.turns[-1] = replace(turn, plan=PlanBlock(tuple(subs)))
    return serialize_trajectory(b.doc(), check=False)


def violate_closed_vocabulary(rng: random.Random) -> str:
    b = _Builder(rng, DEFAULT_PAIRS)
    b.planned(rng.randint(1, 3), deps=False)
    turn = b.turns[-1]
    routes = list(turn.routes)
    i = rng.randrange(len(routes))
    routes[i] = replace(routes[i], model="Worker 99") if rng.random() < 0.5 else replace(routes[i], skill="teleport")
    b.turns[-1] = replace(turn, routes=tuple(routes))
    return serialize_trajectory(b.doc(), check=False)


def violate_no_nested_route(rng: random.Random) -> str:
    b = _Builder(rng, DEFAULT_PAIRS)
    b.planned(rng.randint(1, 3), deps=False)
    text = serialize_trajectory(b.doc(), check=False)
    head, sep, tail = text.partition("</route>")
    return head + '<route subtask="1" model="Worker 1" skill="direct_answer">inner</route>' + sep + tail


VIOLATORS: dict[str, Callable[[random.Random], str]] = {
    SINGLE_FINAL_ANSWER: violate_single_final_answer,
    MONOTONE_ROUNDS: violate_monotone_rounds,
    DAG_ACYCLIC: violate_dag_acyclic,
    CLOSED_VOCABULARY: violate_closed_vocabulary,
    NO_NESTED_ROUTE: violate_no_nested_route,
}


def default_registry() -> PoolRegistry:
    """A registry admitting exactly :data:`DEFAULT_PAIRS`."""
    skills: dict[str, set[str]] = {}
    for model, skill in DEFAULT_PAIRS:
        skills.setdefault(model, set()).add(skill)
    return PoolRegistry(
        [WorkerSpec(m, m, Decimal(1), Decimal(2), frozenset(s)) for m, s in skills.items()],
        [PrimitiveSpec(p, "answer_reason") for p in sorted({s for _, s in DEFAULT_PAIRS})],
    )
