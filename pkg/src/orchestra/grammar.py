"""Trajectory grammar: parse, validate, serialize and classify.

A trajectory file holds one ``<trajectory>`` element whose children are, in
order, a ``<query>``, any number of turns built from ``<plan>``, ``<route>``,
``<obs>`` and ``<verify>`` blocks, and the closing ``<final_answer>``.

Canonical form (what :func:`serialize_trajectory` writes)::

    <trajectory>
    <query>...</query>
    <plan round="1">
    <subtask id="1" depends_on="">...</subtask>
    </plan>
    <route subtask="1" model="m" skill="s">...</route>
    <obs subtask="1">...</obs>
    <verify>...<replan/></verify>
    <final_answer>...</final_answer>
    </trajectory>

Inside a turn the routes precede the observations, both in emission order.
Text bodies are stripped of surrounding whitespace on parse.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator, Literal
from xml.sax.saxutils import escape

from .errors import GrammarError

if TYPE_CHECKING:
    from .pool import PoolRegistry

# violation codes for the five schema constraints
SINGLE_FINAL_ANSWER = "single-final-answer"
MONOTONE_ROUNDS = "monotone-rounds"
DAG_ACYCLIC = "dag-acyclic"
CLOSED_VOCABULARY = "closed-vocabulary"
NO_NESTED_ROUTE = "no-nested-route"
SCHEMA_CODES = (SINGLE_FINAL_ANSWER, MONOTONE_ROUNDS, DAG_ACYCLIC, CLOSED_VOCABULARY, NO_NESTED_ROUTE)

# structural checks on turn contents
DUPLICATE_SUBTASK = "duplicate-subtask"
DUPLICATE_ROUTE = "duplicate-route"
ROUTE_UNKNOWN_SUBTASK = "route-unknown-subtask"
UNROUTED_SUBTASK = "unrouted-subtask"
OBS_UNKNOWN_SUBTASK = "obs-unknown-subtask"

Behaviour = Literal["lazy", "oneshot", "continuation", "decomp_repair"]
BEHAVIOURS: tuple[Behaviour, ...] = ("lazy", "oneshot", "continuation", "decomp_repair")

_ELEMENTS = {"trajectory", "query", "plan", "subtask", "route", "obs", "verify", "replan", "final_answer"}
_ID_SPLIT = re.compile(r"[\s,]+")


@dataclass(frozen=True)
class Subtask:
    id: int
    depends_on: tuple[int, ...] = ()
    description: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "depends_on", tuple(sorted(set(self.depends_on))))


@dataclass(frozen=True)
class PlanBlock:
    subtasks: tuple[Subtask, ...]

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(s.id for s in self.subtasks)


@dataclass(frozen=True)
class RouteBlock:
    subtask_id: int
    model: str
    skill: str
    payload: str = ""


@dataclass(frozen=True)
class ObsBlock:
    subtask_id: int
    text: str = ""


@dataclass(frozen=True)
class VerifyBlock:
    text: str = ""
    replan: bool = False


@dataclass(frozen=True)
class TurnBlock:
    round: int
    plan: PlanBlock | None = None
    routes: tuple[RouteBlock, ...] = ()
    observations: tuple[ObsBlock, ...] = ()
    verify: VerifyBlock | None = None

    def subtasks(self) -> tuple[Subtask, ...]:
        """Declared subtasks; a plan-less turn declares one implicit subtask per route."""
        if self.plan is not None:
            return self.plan.subtasks
        return tuple(Subtask(r.subtask_id, (), r.payload) for r in self.routes)


@dataclass(frozen=True)
class TrajectoryDoc:
    query: str
    turns: tuple[TurnBlock, ...] = ()
    answers: tuple[str, ...] = ("",)

    @property
    def final_answer(self) -> str:
        if len(self.answers) != 1:
            raise GrammarError("trajectory does not carry exactly one final answer", code=SINGLE_FINAL_ANSWER)
        return self.answers[0]

    def routes(self) -> Iterator[RouteBlock]:
        for turn in self.turns:
            yield from turn.routes

    def text(self) -> str:
        """Every text body in the document, for evidence-span lookups."""
        parts = [self.query]
        for turn in self.turns:
            for s in turn.subtasks():
                parts.append(s.description)
            parts.extend(r.payload for r in turn.routes)
            parts.extend(o.text for o in turn.observations)
            if turn.verify is not None:
                parts.append(turn.verify.text)
        parts.extend(self.answers)
        return "\n".join(parts)


@dataclass(frozen=True)
class Violation:
    code: str
    location: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(v.code for v in self.violations)


# -- parsing ---------------------------------------------------------------


def _text(el: ET.Element, allowed_children: frozenset[str] = frozenset()) -> str:
    for child in el:
        _check_child(el, child, allowed_children)
    return (el.text or "").strip()


def _check_child(parent: ET.Element, child: ET.Element, allowed: frozenset[str]) -> None:
    if child.tag == "route" and parent.tag == "route":
        raise GrammarError("<route> nested inside <route>", code="unknown-nesting")
    if child.tag not in _ELEMENTS:
        raise GrammarError(f"unknown element <{child.tag}>", code="unknown-element")
    if child.tag not in allowed:
        raise GrammarError(f"<{child.tag}> not allowed inside <{parent.tag}>", code="unknown-nesting")
    if (child.tail or "").strip() and parent.tag != "verify":
        raise GrammarError(f"stray text after <{child.tag}>", code="malformed-xml")


def _attr(el: ET.Element, name: str) -> str:
    value = el.get(name)
    if value is None:
        raise GrammarError(f"<{el.tag}> lacks attribute {name!r}", code="missing-attribute")
    return value


def _int_attr(el: ET.Element, name: str) -> int:
    raw = _attr(el, name).strip()
    try:
        return int(raw)
    except ValueError:
        raise GrammarError(f"<{el.tag}> attribute {name}={raw!r} is not an integer", code="bad-attribute") from None


def _parse_ids(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    try:
        return tuple(int(tok) for tok in _ID_SPLIT.split(raw) if tok)
    except ValueError:
        raise GrammarError(f"depends_on={raw!r} is not an id list", code="bad-attribute") from None


def _check_attrs(el: ET.Element, allowed: set[str]) -> None:
    extra = set(el.attrib) - allowed
    if extra:
        raise GrammarError(f"<{el.tag}> has unknown attribute(s) {sorted(extra)}", code="unknown-attribute")


class _TurnBuilder:
    def __init__(self, round_: int, plan: PlanBlock | None) -> None:
        self.round = round_
        self.plan = plan
        self.routes: list[RouteBlock] = []
        self.observations: list[ObsBlock] = []
        self.verify: VerifyBlock | None = None

    def accepts_route(self, subtask_id: int) -> bool:
        if self.verify is not None:
            return False
        if not self.observations:
            return True
        # after observations only the remaining routes of this turn's plan belong here
        return self.plan is not None and subtask_id in self.plan.ids and all(
            r.subtask_id != subtask_id for r in self.routes
        )

    def build(self) -> TurnBlock:
        return TurnBlock(self.round, self.plan, tuple(self.routes), tuple(self.observations), self.verify)


def parse_trajectory(raw: str | bytes) -> TrajectoryDoc:
    """Parse one trajectory.

    Raises :class:`GrammarError` with code ``malformed-xml``,
    ``unknown-element``, ``unknown-nesting``, ``missing-attribute``,
    ``bad-attribute``, ``missing-element`` or ``misplaced-element``.
    Schema constraints (answer count, rounds, acyclicity, vocabulary) are left
    to :func:`validate_trajectory`.
    """
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    try:
        root = ET.fromstring(raw)
    except ET.ParseError as exc:
        raise GrammarError(f"not well-formed XML: {exc}", code="malformed-xml") from None
    if root.tag != "trajectory":
        raise GrammarError(f"root element must be <trajectory>, got <{root.tag}>", code="unknown-element")
    if (root.text or "").strip():
        raise GrammarError("stray text inside <trajectory>", code="malformed-xml")
    children = list(root)
    for child in children:
        if child.tag not in _ELEMENTS:
            raise GrammarError(f"unknown element <{child.tag}>", code="unknown-element")
        if (child.tail or "").strip():
            raise GrammarError(f"stray text after <{child.tag}>", code="malformed-xml")
    if not children or children[0].tag != "query":
        raise GrammarError("trajectory must open with <query>", code="missing-element")
    _check_attrs(children[0], set())
    query = _text(children[0])

    turns: list[TurnBlock] = []
    current: _TurnBuilder | None = None
    answers: list[str] = []

    def close() -> None:
        nonlocal current
        if current is not None:
            turns.append(current.build())
            current = None

    def next_round() -> int:
        if current is not None:
            return current.round + 1
        return turns[-1].round + 1 if turns else 1

    for el in children[1:]:
        tag = el.tag
        if answers and tag != "final_answer":
            raise GrammarError(f"<{tag}> after <final_answer>", code="misplaced-element")
        if tag == "plan":
            _check_attrs(el, {"round"})
            round_ = _int_attr(el, "round")
            subtasks = []
            for sub in el:
                _check_child(el, sub, frozenset({"subtask"}))
                _check_attrs(sub, {"id", "depends_on"})
                subtasks.append(
                    Subtask(_int_attr(sub, "id"), _parse_ids(sub.get("depends_on", "")), _text(sub))
                )
            if (el.text or "").strip():
                raise GrammarError("stray text inside <plan>", code="malformed-xml")
            close()
            current = _TurnBuilder(round_, PlanBlock(tuple(subtasks)))
        elif tag == "route":
            _check_attrs(el, {"subtask", "model", "skill"})
            route = RouteBlock(_int_attr(el, "subtask"), _attr(el, "model"), _attr(el, "skill"), _text(el))
            if current is None or not current.accepts_route(route.subtask_id):
                round_ = next_round()
                close()
                current = _TurnBuilder(round_, None)
            current.routes.append(route)
        elif tag == "obs":
            _check_attrs(el, {"subtask"})
            if current is None or not current.routes or current.verify is not None:
                raise GrammarError("<obs> without a preceding <route> in the same turn", code="misplaced-element")
            current.observations.append(ObsBlock(_int_attr(el, "subtask"), _text(el)))
        elif tag == "verify":
            _check_attrs(el, set())
            if current is None or current.verify is not None:
                raise GrammarError("<verify> outside a turn", code="misplaced-element")
            replan = False
            pieces = [el.text or ""]
            for sub in el:
                _check_child(el, sub, frozenset({"replan"}))
                if sub.attrib or (sub.text or "").strip() or len(sub):
                    raise GrammarError("<replan/> must be empty", code="malformed-xml")
                replan = True
                pieces.append(sub.tail or "")
            current.verify = VerifyBlock(" ".join(p.strip() for p in pieces if p.strip()), replan)
        elif tag == "final_answer":
            _check_attrs(el, set())
            close()
            answers.append(_text(el))
        elif tag == "query":
            raise GrammarError("second <query>", code="misplaced-element")
        else:
            raise GrammarError(f"<{tag}> at top level", code="unknown-nesting")
    close()
    return TrajectoryDoc(query, tuple(turns), tuple(answers))


# -- validation ------------------------------------------------------------


def _independent_cycle(edges: dict[int, tuple[int, ...]]) -> bool:
    """Kahn's algorithm over dependency edges; True if a cycle remains."""
    indeg = {n: 0 for n in edges}
    users: dict[int, list[int]] = {n: [] for n in edges}
    for node, deps in edges.items():
        for d in deps:
            if d in edges:
                indeg[node] += 1
                users[d].append(node)
    queue = [n for n, k in indeg.items() if k == 0]
    seen = 0
    while queue:
        n = queue.pop()
        seen += 1
        for u in users[n]:
            indeg[u] -= 1
            if indeg[u] == 0:
                queue.append(u)
    return seen != len(edges)


def validate_trajectory(doc: TrajectoryDoc, registry: PoolRegistry | None = None) -> ValidationReport:
    out: list[Violation] = []

    if len(doc.answers) != 1:
        out.append(Violation(SINGLE_FINAL_ANSWER, "final_answer", f"found {len(doc.answers)} final answers"))

    prev = 0
    for i, turn in enumerate(doc.turns):
        loc = f"turn[{i}]"
        if turn.round < 1 or turn.round <= prev:
            out.append(Violation(MONOTONE_ROUNDS, loc, f"round {turn.round} does not exceed {prev}"))
        elif turn.plan is None and turn.round != prev + 1:
            out.append(Violation(MONOTONE_ROUNDS, loc, f"implicit round {turn.round} must follow {prev}"))
        prev = max(prev, turn.round)

    declared: dict[int, tuple[int, ...]] = {}
    dag_flagged = False
    for i, turn in enumerate(doc.turns):
        loc = f"turn[{i}]"
        subs = turn.subtasks()
        visible = set(declared) | {s.id for s in subs}
        for sub in subs:
            bad = [d for d in sub.depends_on if d >= sub.id or d not in visible]
            if bad and not dag_flagged:
                out.append(Violation(DAG_ACYCLIC, f"{loc}/subtask[{sub.id}]", f"depends_on {bad} breaks id ordering"))
                dag_flagged = True
        for sub in subs:
            if sub.id in declared:
                out.append(Violation(DUPLICATE_SUBTASK, f"{loc}/subtask[{sub.id}]", "subtask id reused"))
            declared[sub.id] = sub.depends_on
    if not dag_flagged and _independent_cycle(declared):
        out.append(Violation(DAG_ACYCLIC, "plan", "dependency graph contains a cycle"))

    for i, turn in enumerate(doc.turns):
        loc = f"turn[{i}]"
        ids = {s.id for s in turn.subtasks()}
        routed: set[int] = set()
        for r in turn.routes:
            if r.subtask_id in routed:
                out.append(Violation(DUPLICATE_ROUTE, f"{loc}/route[{r.subtask_id}]", "second route for subtask"))
            routed.add(r.subtask_id)
            if r.subtask_id not in ids:
                out.append(Violation(ROUTE_UNKNOWN_SUBTASK, f"{loc}/route[{r.subtask_id}]", "route to undeclared subtask"))
            if registry is not None and not registry.resolves(r.model, r.skill):
                out.append(
                    Violation(CLOSED_VOCABULARY, f"{loc}/route[{r.subtask_id}]", f"({r.model}, {r.skill}) not in pool")
                )
        for sid in sorted(ids - routed):
            out.append(Violation(UNROUTED_SUBTASK, f"{loc}/subtask[{sid}]", "subtask has no route"))
        for o in turn.observations:
            if o.subtask_id not in routed:
                out.append(Violation(OBS_UNKNOWN_SUBTASK, f"{loc}/obs[{o.subtask_id}]", "observation without route"))
    return ValidationReport(tuple(out))


def validate_text(raw: str | bytes, registry: PoolRegistry | None = None) -> ValidationReport:
    """Parse then validate; parse failures become violations rather than exceptions."""
    try:
        doc = parse_trajectory(raw)
    except GrammarError as exc:
        code = NO_NESTED_ROUTE if exc.code == "unknown-nesting" and "<route> nested" in str(exc) else exc.code
        return ValidationReport((Violation(code, "document", str(exc)),))
    return validate_trajectory(doc, registry)


# -- serialization ---------------------------------------------------------


def _esc(text: str) -> str:
    return escape(text)


def _attr_esc(text: str) -> str:
    return escape(text, {'"': "&quot;", "\n": "&#10;", "\t": "&#9;"})


def render_plan(round_: int, plan: PlanBlock) -> list[str]:
    lines = [f'<plan round="{round_}">']
    for s in plan.subtasks:
        deps = ",".join(str(d) for d in s.depends_on)
        lines.append(f'<subtask id="{s.id}" depends_on="{deps}">{_esc(s.description)}</subtask>')
    lines.append("</plan>")
    return lines


def render_route(r: RouteBlock) -> str:
    return (
        f'<route subtask="{r.subtask_id}" model="{_attr_esc(r.model)}" skill="{_attr_esc(r.skill)}">'
        f"{_esc(r.payload)}</route>"
    )


def render_obs(o: ObsBlock, body: str | None = None) -> str:
    return f'<obs subtask="{o.subtask_id}">{_esc(o.text if body is None else body)}</obs>'


def render_verify(v: VerifyBlock) -> str:
    return f"<verify>{_esc(v.text)}{'<replan/>' if v.replan else ''}</verify>"


def render_turn(turn: TurnBlock) -> list[str]:
    lines: list[str] = []
    if turn.plan is not None:
        lines.extend(render_plan(turn.round, turn.plan))
    lines.extend(render_route(r) for r in turn.routes)
    lines.extend(render_obs(o) for o in turn.observations)
    if turn.verify is not None:
        lines.append(render_verify(turn.verify))
    return lines


def serialize_trajectory(doc: TrajectoryDoc, *, check: bool = True) -> str:
    if check:
        report = validate_trajectory(doc)
        if not report.valid:
            raise GrammarError(f"cannot serialize invalid trajectory: {list(report.codes)}", code="invalid-doc")
    lines = ["<trajectory>", f"<query>{_esc(doc.query)}</query>"]
    for turn in doc.turns:
        lines.extend(render_turn(turn))
    lines.extend(f"<final_answer>{_esc(a)}</final_answer>" for a in doc.answers)
    lines.append("</trajectory>")
    return "\n".join(lines) + "\n"


def canonicalize(raw: str | bytes) -> str:
    return serialize_trajectory(parse_trajectory(raw))


# -- behaviour modes -------------------------------------------------------


def classify_behaviour(doc: TrajectoryDoc) -> Behaviour:
    """Label the structural shape of a valid trajectory."""
    report = validate_trajectory(doc)
    if not report.valid:
        raise GrammarError(f"unclassifiable: {list(report.codes)}", code="unclassifiable")
    if not doc.turns:
        return "lazy"
    for i, turn in enumerate(doc.turns):
        if turn.verify is not None and turn.verify.replan:
            if any(later.plan is not None for later in doc.turns[i + 1 :]):
                return "decomp_repair"
    if len(doc.turns) == 1 and doc.turns[0].plan is not None:
        return "oneshot"
    return "continuation"


# -- corpus ingestion ------------------------------------------------------

SEPARATOR = "==="


def split_stream(text: str) -> list[str]:
    chunks: list[list[str]] = [[]]
    for line in text.splitlines(keepends=True):
        if line.rstrip("\r\n") == SEPARATOR:
            chunks.append([])
        else:
            chunks[-1].append(line)
    return ["".join(c) for c in chunks if "".join(c).strip()]


def iter_corpus(path: str | Path) -> Iterator[tuple[str, str]]:
    """Yield ``(name, raw)`` for each trajectory in a directory tree or stream file."""
    path = Path(path)
    if path.is_dir():
        for p in sorted(path.rglob("*.traj.xml")):
            yield str(p.relative_to(path)), p.read_text("utf-8")
        return
    for i, raw in enumerate(split_stream(path.read_text("utf-8"))):
        yield f"{path.name}#{i}", raw


def join_stream(raws: Iterable[str]) -> str:
    return f"{SEPARATOR}\n".join(r if r.endswith("\n") else r + "\n" for r in raws)


@dataclass
class CorpusStats:
    counts: dict[str, int] = field(default_factory=lambda: {b: 0 for b in BEHAVIOURS})
    invalid: int = 0

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def frequencies(self) -> dict[str, float]:
        n = self.total
        return {b: (c / n if n else 0.0) for b, c in self.counts.items()}


def behaviour_stats(raws: Iterable[str]) -> CorpusStats:
    stats = CorpusStats()
    for raw in raws:
        try:
            stats.counts[classify_behaviour(parse_trajectory(raw))] += 1
        except GrammarError:
            stats.invalid += 1
    return stats
