from __future__ import annotations

import itertools
import random

import pytest

from orchestra.config import Config
from orchestra.errors import ConfigError, ContextBudgetError
from orchestra.grammar import (
    ObsBlock,
    PlanBlock,
    RouteBlock,
    Subtask,
    TurnBlock,
    VerifyBlock,
    classify_behaviour,
    parse_trajectory,
    serialize_trajectory,
    validate_trajectory,
)
from orchestra.policies import CascadePolicy, ChainPolicy, FanoutPolicy, LazyPolicy, ScriptedPolicy, make_policy
from orchestra.reward import INVALID_EMISSION, PREMATURE_FINAL, REPAIR_TRIGGERED, SCHEMA_VALID_PLAN
from orchestra.scheduler import (
    ELIDED,
    CycleDetected,
    PolicyAction,
    count_tokens,
    ready_set,
    run_episode,
    truncate_context,
)
from orchestra.synth import default_registry
from orchestra.workers import ScriptedBackend, ScriptedBehaviour

TABLE = {("*", "*"): {"correct": "ok: {instruction}", "wrong": "nope"}}
OPEN = Config(blind=False)


def backends(latency: float = 0.0, realtime: bool = False, fail: str | None = None, competence: float = 1.0):
    return {
        w: ScriptedBackend(ScriptedBehaviour({"*": competence}, TABLE, (100, 20), latency, fail), realtime=realtime)
        for w in ("Worker 1", "Worker 2", "Worker 3")
    }


def plan_action(*subs: tuple[int, tuple[int, ...]], model="Worker 1", kind="decompose_route") -> PolicyAction:
    plan = PlanBlock(tuple(Subtask(i, d, f"part {i}") for i, d in subs))
    routes = tuple(RouteBlock(i, model, "direct_answer", f"do {i}") for i, _ in subs)
    return PolicyAction(kind, plan, routes)


FINAL = PolicyAction("final", answer="done")


# -- ready_set -------------------------------------------------------------


def test_ready_set_examples():
    deps = {1: (), 2: (), 3: (1, 2)}
    assert ready_set(deps, set()) == {1, 2}
    assert ready_set(deps, {1, 2}) == {3}
    assert ready_set(deps, {1, 2, 3}) == set()
    with pytest.raises(CycleDetected):
        ready_set({1: (2,), 2: (1,)}, set())


def _levels(deps):
    """Independent oracle: longest-path depth from the sources, by memoized recursion."""
    memo = {}

    def depth(n):
        if n not in memo:
            memo[n] = 1 + max((depth(d) for d in deps[n]), default=0)
        return memo[n]

    return {n: depth(n) for n in deps}


def frontier_rounds(deps):
    resolved, rounds = set(), {}
    k = 0
    while len(resolved) < len(deps):
        k += 1
        batch = ready_set(deps, resolved)
        for n in batch:
            rounds[n] = k
        resolved |= batch
    return rounds


def test_ready_set_matches_level_oracle_on_small_dags():
    for n in range(1, 5):
        pairs = [(j, i) for i in range(1, n + 1) for j in range(1, i)]
        for bits in itertools.product((0, 1), repeat=len(pairs)):
            deps = {i: tuple(j for (j, k), b in zip(pairs, bits) if b and k == i) for i in range(1, n + 1)}
            assert frontier_rounds(deps) == _levels(deps)


def test_ready_set_on_relabelled_dags():
    rng = random.Random(2)
    for _ in range(200):
        n = rng.randint(2, 7)
        perm = list(range(1, n + 1))
        rng.shuffle(perm)
        deps = {perm[i]: tuple(perm[j] for j in range(i) if rng.random() < 0.4) for i in range(n)}
        assert frontier_rounds(deps) == _levels(deps)


# -- truncation ------------------------------------------------------------


def turns(n: int, words: int = 20) -> list[TurnBlock]:
    out = []
    for t in range(1, n + 1):
        body = " ".join(f"w{t}_{k}" for k in range(words))
        out.append(TurnBlock(t, PlanBlock((Subtask(t, (), f"s{t}"),)), (RouteBlock(t, "Worker 1", "direct_answer", "x"),),
                             (ObsBlock(t, body),)))
    return out


def test_truncate_identity_under_budget():
    history = turns(2)
    full = truncate_context("q", history, 10_000)
    assert ELIDED not in full and "w1_19" in full


def test_truncate_drops_oldest_first_and_keeps_newest():
    history = turns(10)
    full = count_tokens(truncate_context("the query", history, 10_000))
    text = truncate_context("the query", history, full - 50)
    assert count_tokens(text) <= full - 50
    assert "w1_0" not in text and "w2_0" not in text and "w3_0" not in text  # 3 * 19 tokens removed
    assert "w4_0" in text
    assert "w10_19" in text and "the query" in text
    for t in range(1, 11):
        assert f'<subtask id="{t}"' in text
    tight = truncate_context("the query", history, full - 9 * 19)  # every elision saves 19 tokens
    assert tight.count(ELIDED) == 9 and "w10_0" in tight


def test_truncate_errors():
    with pytest.raises(ContextBudgetError):
        truncate_context("q", turns(10), 30)
    with pytest.raises(ValueError):
        truncate_context("q", [], 0)


# -- episodes --------------------------------------------------------------


def test_direct_answer_is_lazy_and_free():
    doc, out = run_episode("q?", LazyPolicy(lambda q: "42"), default_registry(), backends(), OPEN)
    assert classify_behaviour(doc) == "lazy"
    assert out.cost == 0 and out.log == [] and not out.truncated and out.answer == "42"


def test_three_independent_subtasks_run_as_one_batch():
    pol = ScriptedPolicy([plan_action((1, ()), (2, ()), (3, ())), FINAL])
    doc, out = run_episode("q", pol, default_registry(), backends(0.05, realtime=True), OPEN)
    assert len(doc.turns) == 1 and classify_behaviour(doc) == "oneshot"
    ds = out.records[0].dispatches
    assert len(ds) == 3
    assert max(d.started for d in ds) < min(d.finished for d in ds)  # all three in flight together
    assert [o.subtask_id for o in doc.turns[0].observations] == [1, 2, 3]
    assert out.cost > 0 and len(out.ledger.entries) == 3


def test_dependent_subtask_waits_for_parents():
    pol = ScriptedPolicy([plan_action((1, ()), (2, ()), (3, (1, 2))), FINAL])
    _, out = run_episode("q", pol, default_registry(), backends(0.03, realtime=True), OPEN)
    by = {d.route.subtask_id: d for d in out.records[0].dispatches}
    assert by[3].started >= max(by[1].finished, by[2].finished)


class Endless:
    name = "endless"

    def act(self, view):
        sid = view.next_subtask_id()
        return PolicyAction("decompose_route", None, (RouteBlock(sid, "Worker 1", "direct_answer", f"step {sid}"),))

    def check(self, view):
        return None


def test_truncation_at_t_max():
    doc, out = run_episode("q", Endless(), default_registry(), backends(), OPEN.replace(t_max=8))
    assert out.truncated and out.answer == "" and len(doc.turns) == 8
    assert validate_trajectory(doc).valid
    assert classify_behaviour(doc) == "continuation"


def test_chain_policy_answers_at_last_turn():
    doc, out = run_episode("; ".join(f"p{i}" for i in range(20)), ChainPolicy(), default_registry(), backends(), OPEN)
    assert not out.truncated and len(doc.turns) == 7 and out.answer == "ok: p6"


def test_never_final_is_truncated():
    pol = ScriptedPolicy([PolicyAction("final")])  # invalid every turn: no answer
    doc, out = run_episode("q", pol, default_registry(), backends(), OPEN)
    assert out.truncated and len(out.records) == 8 and doc.turns == ()
    assert all(r.shaping_events == [INVALID_EMISSION] for r in out.records)


def test_invalid_action_consumes_turn_and_episode_continues():
    bad = PolicyAction("decompose_route", None, (RouteBlock(1, "Worker 9", "direct_answer", "x"),))
    pol = ScriptedPolicy([bad, plan_action((1, ())), FINAL])
    doc, out = run_episode("q", pol, default_registry(), backends(), OPEN)
    assert out.records[0].shaping_events == [INVALID_EMISSION]
    assert not out.records[0].valid and out.records[1].valid
    assert [t.round for t in doc.turns] == [2]
    assert [s.r for s in out.shaping(0.05)][:2] == [-0.025, 0.025]


@pytest.mark.parametrize(
    "action",
    [
        PolicyAction("direct_answer"),
        PolicyAction("final", answer="x", routes=(RouteBlock(1, "Worker 1", "direct_answer"),)),
        PolicyAction("decompose_route", answer="x", routes=(RouteBlock(1, "Worker 1", "direct_answer"),)),
        PolicyAction("decompose_route"),
        PolicyAction("decompose_route", None, (RouteBlock(1, "Worker 1", "direct_answer"), RouteBlock(2, "Worker 1", "direct_answer"))),
        plan_action((1, ()), (1, ())),
        plan_action((1, (2,)), (2, ())),
        plan_action((0, ())),
        PolicyAction("decompose_route", PlanBlock((Subtask(1), Subtask(2))), (RouteBlock(1, "Worker 1", "direct_answer"),)),
        PolicyAction("teleport"),  # type: ignore[arg-type]
    ],
)
def test_invalid_actions_are_flagged(action):
    _, out = run_episode("q", ScriptedPolicy([action, FINAL]), default_registry(), backends(), OPEN)
    assert out.records[0].problems and out.records[0].shaping_events == [INVALID_EMISSION]


def test_reused_subtask_id_is_invalid():
    pol = ScriptedPolicy([plan_action((1, ())), plan_action((1, ())), FINAL])
    _, out = run_episode("q", pol, default_registry(), backends(), OPEN)
    assert out.records[1].shaping_events == [INVALID_EMISSION]


def test_repair_after_failed_verify():
    pol = ScriptedPolicy(
        [plan_action((1, ())), plan_action((2, (1,)), kind="repair"), FINAL],
        [VerifyBlock("bad", replan=True), VerifyBlock("good")],
    )
    doc, out = run_episode("q", pol, default_registry(), backends(), OPEN)
    assert classify_behaviour(doc) == "decomp_repair"
    assert REPAIR_TRIGGERED in out.records[1].shaping_events
    assert [s.r for s in out.shaping(0.05)][:2] == [0.025, 0.05]
    assert out.records[0].verify_outcome == "repair_needed" and out.records[1].verify_outcome == "pass"
    # the repaired subtask sees its cross-round parent's observation
    assert "ok: do 1" in doc.turns[0].observations[0].text


def test_premature_final_is_tagged():
    pol = ScriptedPolicy([plan_action((1, ())), FINAL], [VerifyBlock("bad", replan=True)])
    _, out = run_episode("q", pol, default_registry(), backends(), OPEN)
    assert out.records[1].shaping_events == [PREMATURE_FINAL]


def test_failed_workers_become_error_observations():
    doc, out = run_episode("q", ScriptedPolicy([plan_action((1, ())), FINAL]), default_registry(), backends(fail="timeout"), OPEN)
    assert doc.turns[0].observations[0].text == "[error] timeout"
    assert out.log[0]["status"] == "timeout"


def test_plan_less_routes_across_round_gap_get_explicit_plan():
    one = PolicyAction("decompose_route", None, (RouteBlock(1, "Worker 1", "direct_answer", "a"),))
    two = PolicyAction("decompose_route", None, (RouteBlock(2, "Worker 2", "direct_answer", "b"),))
    bad = PolicyAction("final")
    doc, _ = run_episode("q", ScriptedPolicy([one, bad, two, FINAL]), default_registry(), backends(), OPEN)
    assert [t.round for t in doc.turns] == [1, 3]
    assert doc.turns[0].plan is None and doc.turns[1].plan is not None
    assert parse_trajectory(serialize_trajectory(doc)) == doc


def test_turn_kind_rederived_from_serialized_doc():
    pol = ScriptedPolicy([plan_action((1, ())), PolicyAction("decompose_route", None, (RouteBlock(2, "Worker 1", "direct_answer"),)), FINAL])
    doc, out = run_episode("q", pol, default_registry(), backends(), OPEN)
    back = parse_trajectory(serialize_trajectory(doc))
    for rec, turn in zip([r for r in out.records if r.block is not None], back.turns):
        shape = "decompose_route" if (turn.plan is not None or turn.routes) else "final"
        assert rec.kind in (shape, "repair")


def test_blind_mode_hides_worker_ids(sample_registry, sample_backends, config):
    pol = CascadePolicy()
    doc, out = run_episode("What is the capital of France?", pol, sample_registry, sample_backends, config, episode_seed=9)
    text = serialize_trajectory(doc)
    assert not any(w in text for w in sample_registry.workers)
    entry = out.log[0]
    assert entry["worker_label"].startswith("Worker ") and entry["worker_id"] in sample_registry.workers
    assert out.view.worker(entry["worker_label"]) == entry["worker_id"]


def test_replay_determinism(sample_registry, sample_backends, config):
    q = "What is the capital of Peru?"
    runs = [run_episode(q, FanoutPolicy(), sample_registry, sample_backends, config, episode_seed=4) for _ in range(2)]
    assert serialize_trajectory(runs[0][0]) == serialize_trajectory(runs[1][0])
    assert runs[0][1].ledger == runs[1][1].ledger


def test_cascade_escalates_on_errors():
    bk = backends()
    bk["Worker 1"] = ScriptedBackend(ScriptedBehaviour({"*": 1.0}, TABLE, fail_mode="transport_error"))
    doc, out = run_episode("hello", CascadePolicy(), default_registry(), bk, OPEN)
    assert [t.routes[0].model for t in doc.turns] == ["Worker 1", "Worker 2"]
    assert out.answer == "ok: hello"
    assert classify_behaviour(doc) == "decomp_repair"


def test_missing_backend_is_config_error():
    with pytest.raises(ConfigError):
        run_episode("q", LazyPolicy(), default_registry(), {}, OPEN)


def test_make_policy():
    assert make_policy("chain").name == "chain"
    with pytest.raises(ValueError):
        make_policy("oracle")


def test_context_tokens_recorded():
    doc, out = run_episode("a b c", ScriptedPolicy([plan_action((1, ())), FINAL]), default_registry(), backends(), OPEN)
    assert out.records[0].context_tokens == count_tokens("<query>a b c</query>")
    assert out.context_tokens == out.records[0].context_tokens
    assert SCHEMA_VALID_PLAN in out.events
