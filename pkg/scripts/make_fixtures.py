"""Regenerate bundled sample data and test fixtures.

    python3 scripts/make_fixtures.py

Outputs are deterministic; rerunning leaves the tree unchanged.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from orchestra.grammar import join_stream, serialize_trajectory
from orchestra.synth import SHAPES

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "src" / "orchestra" / "data"
FIX = ROOT / "tests" / "fixtures"

# Per-mode counts in a 999-document corpus (App. F frequencies x 10; they sum to 99.9 %).
BEHAVIOUR_COUNTS = {"lazy": 156, "oneshot": 495, "continuation": 304, "decomp_repair": 44}

SCRIPTED = {
    "gemini-2.5-flash-lite": (0.45, (260, 120)),
    "gemini-2.5-flash": (0.55, (280, 160)),
    "gemini-3-flash-preview": (0.65, (300, 200)),
    "gemini-3.1-pro-preview": (0.80, (320, 260)),
    "kimi-k2.5": (0.60, (300, 220)),
    "gpt-5.3-codex": (0.70, (340, 240)),
    "gpt-5.4": (0.82, (340, 260)),
    "claude-sonnet-4-6": (0.85, (360, 280)),
    "claude-opus-4-6": (0.90, (380, 320)),
}


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def make_tasks(rng: random.Random) -> tuple[list[dict], dict[str, dict[str, str]]]:
    tasks: list[dict] = []
    responses: dict[str, dict[str, str]] = {}

    def add(tid, query, gold, source, axis, correct, wrong):
        tasks.append({"task_id": tid, "query": query, "gold": gold, "source": source, "axis": axis})
        responses[f"{query}||direct_answer"] = {"correct": correct, "wrong": wrong}

    for i in range(10):
        a, b, c = rng.randint(2, 40), rng.randint(2, 40), rng.randint(1, 99)
        v = a * b + c
        add(f"math-{i:02d}", f"Compute {a}*{b}+{c}.", {"kind": "math", "gold": str(v)}, "MATH-500",
            "compositional_reasoning", f"\\boxed{{{v}}}", str(v + rng.randint(1, 9)))
    for i in range(5):
        k, m = rng.randint(2, 9), rng.randint(2, 9)
        add(f"aime-{i:02d}", f"Solve {k}x - {k * m} = 0 and give the equation for x.", {"kind": "math", "gold": f"x = {m}"},
            "AIME", "compositional_reasoning", f"{k}x = {k * m}", f"x = {m + 1}")
    ops = [("add", "a + b", 2, 3), ("mul", "a * b", 4, 5), ("sub", "a - b", 9, 4), ("mx", "max(a, b)", 3, 8), ("pw", "a ** b", 2, 5)]
    for i, (name, expr, x, y) in enumerate(ops):
        tests = f"assert {name}({x}, {y}) == {eval(expr, {'a': x, 'b': y})}\nassert {name}(1, 1) == {eval(expr, {'a': 1, 'b': 1})}\n"
        add(f"he-{i:02d}", f"Write a Python function {name}(a, b) returning {expr}.",
            {"kind": "code", "gold": "", "aux": {"tests": tests}}, "HumanEval", "tool_code",
            f"def {name}(a, b):\n    return {expr}\n", f"def {name}(a, b):\n    return None\n")
    capitals = [("France", "Paris"), ("Japan", "Tokyo"), ("Kenya", "Nairobi"), ("Peru", "Lima"), ("Norway", "Oslo"),
                ("Egypt", "Cairo"), ("Chile", "Santiago"), ("Canada", "Ottawa"), ("Spain", "Madrid"), ("India", "New Delhi")]
    for i, (country, city) in enumerate(capitals):
        add(f"mmlu-{i:02d}", f"What is the capital of {country}?", {"kind": "qa", "gold": city}, "MMLU",
            "knowledge_retrieval", f"The capital is {city}.", "Berlin")
    for i in range(10):
        p, q = rng.randint(3, 30), rng.randint(3, 30)
        add(f"drop-{i:02d}", f"The home team scored {p} points and the visitors {q}. How many points were scored in total?",
            {"kind": "qa", "gold": f"{p + q}"}, "DROP", "multi_hop", f"{p + q}", f"{p + q + 2}")
    cities = ["Paris", "Lima", "Oslo", "Cairo", "Tokyo"]
    for i, city in enumerate(cities):
        answer = json.dumps({"name": "get_weather", "arguments": {"city": city, "days": i + 1}})
        aux = {"required": {"name": "string", "arguments": "object"}}
        add(f"tool-{i:02d}", f"Call the weather tool for {city} over {i + 1} day(s); reply with the JSON call.",
            {"kind": "tool_schema", "gold": answer, "aux": aux}, "ToolBench", "agentic_long_context",
            answer, f"get_weather({city})")
    for i in range(5):
        a, b = rng.randint(10, 99), rng.randint(10, 99)
        add(f"lrb-{i:02d}", f"Which is larger, {a} or {b}?", {"kind": "qa", "gold": str(max(a, b))}, "LLMRouterBench",
            "atomic_reasoning", str(max(a, b)), str(min(a, b)))
    return tasks, responses


def make_pool(responses: dict) -> dict:
    registry = json.loads((DATA / "registry.sample.json").read_text("utf-8"))
    scripted = {
        wid: {"competence": {"*": p}, "token_profile": list(profile), "latency": 0.0}
        for wid, (p, profile) in SCRIPTED.items()
    }
    responses = dict(responses)
    responses["*||*"] = {"correct": "I cannot determine this.", "wrong": "I cannot determine this."}
    return {**registry, "scripted": scripted, "responses": responses}


GROUPING = {
    "benchmarks": {
        "MATH-500": {"domain": "Math"},
        "AIME": {"domain": "Math"},
        "HumanEval": {"domain": "Code/SE"},
        "MBPP": {"domain": "Code/SE"},
        "LiveCodeBench": {"domain": "Code/SE"},
        "SWE-bench": {"domain": "Code/SE"},
        "MMLU": {"domain": "Know."},
        "GPQA": {"domain": "Know."},
        "DROP": {"domain": "Read."},
        "MRCR": {"domain": "Read."},
        "GAIA": {"domain": "Agentic"},
        "Terminal-Bench": {"domain": "Agentic"},
        "ToolBench": {"domain": "Agentic"},
        "LLMRouterBench": {"domain": "Routing", "excluded": True},
    }
}


def make_corpus(rng: random.Random) -> tuple[str, dict]:
    labels = [mode for mode, n in BEHAVIOUR_COUNTS.items() for _ in range(n)]
    rng.shuffle(labels)
    raws = [serialize_trajectory(SHAPES[mode](rng)) for mode in labels]
    manifest = {"counts": BEHAVIOUR_COUNTS, "total": len(labels), "labels": labels}
    return join_stream(raws), manifest


def make_curriculum(rng: random.Random) -> tuple[list[dict], list[dict]]:
    cells = ["rl"] * 4549 + ["sft"] * 3200 + ["solved"] * 2000 + ["infra"] * 251
    rng.shuffle(cells)
    probes, rl_ids = [], []
    for i, cell in enumerate(cells):
        tid = f"task-{i:05d}"
        row = {"task_id": tid, "b0": 0, "b_star": 0, "infra_flag": False}
        if cell == "solved":
            row.update(b0=1, b_star=rng.randint(0, 1))
        elif cell == "infra":
            row["infra_flag"] = True
        elif cell == "sft":
            row.update(b_star=1, teacher="gemini-3.1-pro-preview", teacher_trace=f"traces/{tid}.traj.xml")
        else:
            rl_ids.append(tid)
        probes.append(row)
    winners = set(rng.sample(rl_ids, 1573))
    cascade = ["gemini-2.5-pro", "claude-sonnet-4-6", "gpt-5.4"]
    retries = [
        {"task_id": tid, "success": tid in winners, "teacher": rng.choice(cascade),
         "trace": f"traces/{tid}.fallback.traj.xml" if tid in winners else None}
        for tid in rl_ids
    ]
    return probes, retries


def main() -> None:
    tasks, responses = make_tasks(random.Random(7))
    (DATA / "tasks.sample.jsonl").write_text(_jsonl(tasks), "utf-8")
    (DATA / "pool.sample.json").write_text(json.dumps(make_pool(responses), indent=1, sort_keys=True) + "\n", "utf-8")
    (DATA / "grouping.sample.json").write_text(json.dumps(GROUPING, indent=1) + "\n", "utf-8")

    FIX.mkdir(parents=True, exist_ok=True)
    stream, manifest = make_corpus(random.Random(11))
    (FIX / "behaviour_corpus.traj").write_text(stream, "utf-8")
    (FIX / "behaviour_manifest.json").write_text(json.dumps(manifest, indent=0) + "\n", "utf-8")

    probes, retries = make_curriculum(random.Random(13))
    (FIX / "curriculum_probes.jsonl").write_text(_jsonl(probes), "utf-8")
    (FIX / "curriculum_retries.jsonl").write_text(_jsonl(retries), "utf-8")
    print(f"{len(tasks)} tasks, {manifest['total']} corpus docs, {len(probes)} probes, {len(retries)} retries")


if __name__ == "__main__":
    main()
