from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES
from orchestra.errors import GrammarError
from orchestra.grammar import (
    CLOSED_VOCABULARY,
    DAG_ACYCLIC,
    MONOTONE_ROUNDS,
    NO_NESTED_ROUTE,
    SINGLE_FINAL_ANSWER,
    PlanBlock,
    RouteBlock,
    Subtask,
    TrajectoryDoc,
    TurnBlock,
    behaviour_stats,
    canonicalize,
    classify_behaviour,
    iter_corpus,
    join_stream,
    parse_trajectory,
    serialize_trajectory,
    split_stream,
    validate_text,
    validate_trajectory,
)
from orchestra.synth import SHAPES, VIOLATORS, default_registry, random_valid_doc


def wrap(body: str, query: str = "q") -> str:
    return f"<trajectory><query>{query}</query>{body}</trajectory>"


def plan(round_: int, *subs: tuple[int, str]) -> str:
    inner = "".join(f'<subtask id="{i}" depends_on="{d}">s{i}</subtask>' for i, d in subs)
    return f'<plan round="{round_}">{inner}</plan>'


def route(sid: int, model: str = "Worker 1", skill: str = "direct_answer") -> str:
    return f'<route subtask="{sid}" model="{model}" skill="{skill}">do {sid}</route>'


def obs(sid: int) -> str:
    return f'<obs subtask="{sid}">o{sid}</obs>'


# -- parsing ---------------------------------------------------------------


def test_minimal_lazy_trajectory():
    doc = parse_trajectory(wrap("<final_answer>42</final_answer>"))
    assert doc.turns == ()
    assert doc.final_answer == "42"
    assert classify_behaviour(doc) == "lazy"


def test_case3_shape_parses_to_one_turn_five_subtasks():
    doc = parse_trajectory((FIXTURES / "case3.traj.xml").read_text("utf-8"))
    assert len(doc.turns) == 1
    turn = doc.turns[0]
    assert turn.plan is not None and len(turn.plan.subtasks) == 5
    assert len(turn.routes) == 5 and len(turn.observations) == 5
    assert turn.verify is not None and not turn.verify.replan
    assert turn.plan.subtasks[4].depends_on == (1, 2, 3, 4)
    assert validate_trajectory(doc).valid
    assert classify_behaviour(doc) == "oneshot"


def test_nested_route_is_unknown_nesting():
    raw = wrap(plan(1, (1, "")) + '<route subtask="1" model="W" skill="s">a' + route(1) + "</route><final_answer>x</final_answer>")
    with pytest.raises(GrammarError) as exc:
        parse_trajectory(raw)
    assert exc.value.code == "unknown-nesting"
    assert validate_text(raw).codes == (NO_NESTED_ROUTE,)


@pytest.mark.parametrize(
    "raw, code",
    [
        ("<trajectory><query>q</query><final_answer>1", "malformed-xml"),
        (wrap("<answer>1</answer>"), "unknown-element"),
        (wrap('<plan><subtask id="1">x</subtask></plan><final_answer>1</final_answer>'), "missing-attribute"),
        (wrap('<route model="W" skill="s">x</route><final_answer>1</final_answer>'), "missing-attribute"),
        (wrap('<plan round="one"></plan><final_answer>1</final_answer>'), "bad-attribute"),
        (wrap('<plan round="1" colour="red"></plan><final_answer>1</final_answer>'), "unknown-attribute"),
        ("<trajectory><final_answer>1</final_answer></trajectory>", "missing-element"),
        (wrap("<obs subtask=\"1\">x</obs><final_answer>1</final_answer>"), "misplaced-element"),
        (wrap("<final_answer>1</final_answer>" + route(1)), "misplaced-element"),
        ("<doc><query>q</query></doc>", "unknown-element"),
    ],
)
def test_parse_errors(raw, code):
    with pytest.raises(GrammarError) as exc:
        parse_trajectory(raw)
    assert exc.value.code == code


def test_continuation_routes_open_implicit_rounds():
    raw = wrap(route(1) + obs(1) + route(2) + obs(2) + "<final_answer>x</final_answer>")
    doc = parse_trajectory(raw)
    assert [t.round for t in doc.turns] == [1, 2]
    assert all(t.plan is None for t in doc.turns)
    assert validate_trajectory(doc).valid
    assert classify_behaviour(doc) == "continuation"


def test_routes_after_partial_observations_stay_in_plan_turn():
    raw = wrap(plan(1, (1, ""), (2, "1")) + route(1) + obs(1) + route(2) + obs(2) + "<final_answer>x</final_answer>")
    doc = parse_trajectory(raw)
    assert len(doc.turns) == 1 and len(doc.turns[0].routes) == 2


# -- validation ------------------------------------------------------------


def test_two_final_answers():
    raw = wrap("<final_answer>1</final_answer><final_answer>2</final_answer>")
    assert validate_text(raw).codes == (SINGLE_FINAL_ANSWER,)


def test_repeated_round():
    raw = wrap(plan(1, (1, "")) + route(1) + obs(1) + plan(1, (2, "")) + route(2) + obs(2) + "<final_answer>x</final_answer>")
    assert validate_text(raw).codes == (MONOTONE_ROUNDS,)


def test_forward_dependency_is_dag_violation():
    raw = wrap(plan(1, (1, ""), (2, "3"), (3, "")) + route(1) + route(2) + route(3) + "<final_answer>x</final_answer>")
    report = validate_text(raw)
    assert report.codes == (DAG_ACYCLIC,)
    assert not report.valid


def _brute_force_cycle(edges: dict[int, tuple[int, ...]]) -> bool:
    """A cycle exists iff some node reaches itself; plain DFS over every start."""
    def reaches(start, node, seen):
        for d in edges.get(node, ()):
            if d == start or (d not in seen and reaches(start, d, seen | {d})):
                return True
        return False
    return any(reaches(n, n, {n}) for n in edges)


def test_dag_flag_agrees_with_independent_cycle_oracle():
    rng = random.Random(5)
    for _ in range(300):
        n = rng.randint(2, 5)
        edges = {i: tuple(sorted(rng.sample([j for j in range(1, n + 1) if j != i], rng.randint(0, min(2, n - 1))))) for i in range(1, n + 1)}
        subs = tuple(Subtask(i, edges[i]) for i in range(1, n + 1))
        doc = TrajectoryDoc("q", (TurnBlock(1, PlanBlock(subs), tuple(RouteBlock(i, "W", "s") for i in range(1, n + 1))),), ("a",))
        flagged = DAG_ACYCLIC in validate_trajectory(doc).codes
        forward = any(d >= i for i, ds in edges.items() for d in ds)
        assert flagged == forward
        if _brute_force_cycle(edges):
            assert flagged  # every cycle needs a forward edge


def test_closed_vocabulary_needs_registry():
    raw = wrap(plan(1, (1, "")) + route(1, "Worker 9") + obs(1) + "<final_answer>x</final_answer>")
    assert validate_text(raw).valid
    assert validate_text(raw, default_registry()).codes == (CLOSED_VOCABULARY,)


def test_structural_codes_beyond_the_five():
    raw = wrap(plan(1, (1, ""), (2, "")) + route(1) + route(1) + route(7) + obs(8) + "<final_answer>x</final_answer>")
    codes = set(validate_text(raw).codes)
    assert codes == {"duplicate-route", "route-unknown-subtask", "unrouted-subtask", "obs-unknown-subtask"}


@pytest.mark.parametrize("code", sorted(VIOLATORS))
def test_each_violator_yields_exactly_its_code(code):
    rng = random.Random(code)
    reg = default_registry()
    for _ in range(50):
        assert validate_text(VIOLATORS[code](rng), reg).codes == (code,)


# -- serialization ---------------------------------------------------------


def test_roundtrip_generated_docs():
    rng = random.Random(0)
    for _ in range(200):
        doc = random_valid_doc(rng)
        text = serialize_trajectory(doc)
        assert parse_trajectory(text) == doc
        assert serialize_trajectory(parse_trajectory(text)) == text


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_roundtrip_property(seed):
    doc = random_valid_doc(random.Random(seed), max_turns=6)
    assert parse_trajectory(serialize_trajectory(doc)) == doc


def test_attribute_order_does_not_change_canonical_bytes():
    base = wrap(plan(1, (1, ""), (2, "1")) + route(1) + route(2) + obs(1) + obs(2) + "<final_answer>x</final_answer>")
    canon = canonicalize(base)
    for perm in itertools.permutations(['subtask="1"', 'model="Worker 1"', 'skill="direct_answer"']):
        swapped = base.replace('<route subtask="1" model="Worker 1" skill="direct_answer">', f"<route {' '.join(perm)}>")
        assert canonicalize(swapped) == canon
    swapped = base.replace('<subtask id="2" depends_on="1">', '<subtask depends_on=" 1 " id="2">')
    assert canonicalize(swapped) == canon


def test_empty_turns_serialize_to_query_and_answer():
    text = serialize_trajectory(TrajectoryDoc("what?", (), ("yes",)))
    assert text == "<trajectory>\n<query>what?</query>\n<final_answer>yes</final_answer>\n</trajectory>\n"


def test_serialize_rejects_invalid_doc():
    with pytest.raises(GrammarError) as exc:
        serialize_trajectory(TrajectoryDoc("q", (), ("a", "b")))
    assert exc.value.code == "invalid-doc"


def test_escaping_survives_roundtrip():
    doc = TrajectoryDoc('a<b & "c"', (TurnBlock(1, None, (RouteBlock(1, 'W "1"', "s&t", "x<y"),)),), ("&",))
    assert parse_trajectory(serialize_trajectory(doc)) == doc


# -- behaviour -------------------------------------------------------------


@pytest.mark.parametrize("mode", sorted(SHAPES))
def test_shape_generators_classify(mode):
    rng = random.Random(mode)
    for _ in range(30):
        assert classify_behaviour(parse_trajectory(serialize_trajectory(SHAPES[mode](rng)))) == mode


def test_repair_requires_later_plan():
    base = plan(1, (1, "")) + route(1) + obs(1) + "<verify>bad<replan/></verify>"
    repaired = wrap(base + plan(2, (2, "1")) + route(2) + obs(2) + "<final_answer>x</final_answer>")
    chained = wrap(base + route(2) + obs(2) + "<final_answer>x</final_answer>")
    assert classify_behaviour(parse_trajectory(repaired)) == "decomp_repair"
    assert classify_behaviour(parse_trajectory(chained)) == "continuation"


def test_unclassifiable_invalid_doc():
    with pytest.raises(GrammarError) as exc:
        classify_behaviour(TrajectoryDoc("q", (), ()))
    assert exc.value.code == "unclassifiable"


def test_stream_helpers(tmp_path):
    raws = [serialize_trajectory(SHAPES["lazy"](random.Random(i))) for i in range(3)]
    stream = join_stream(raws)
    assert split_stream(stream) == raws
    path = tmp_path / "c.traj"
    path.write_text(stream)
    assert [r for _, r in iter_corpus(path)] == raws
    d = tmp_path / "dir"
    d.mkdir()
    for i, r in enumerate(raws):
        (d / f"{i}.traj.xml").write_text(r)
    assert [r for _, r in iter_corpus(d)] == raws
    stats = behaviour_stats(raws + ["<bad"])
    assert stats.counts["lazy"] == 3 and stats.invalid == 1
