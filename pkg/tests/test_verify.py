from __future__ import annotations

import json
import sys
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from orchestra.verify import (
    GoldSpec,
    default_code_aux,
    exact_match,
    normalize_answer,
    parse_math,
    token_f1,
    verify_answer,
    verify_code_tests,
    verify_math,
    verify_qa_em_f1,
    verify_schema_match,
)

# -- math ------------------------------------------------------------------


@pytest.mark.parametrize(
    "answer, gold, b",
    [
        ("1/2", "0.5", 1),
        ("x+1", "1+x", 1),
        ("x^2/10 - y^2/6 = 1", "y^2/6 - x^2/10 = 1", 0),
        ("y^2/6 - x^2/10 = 1", "\\nicefrac{y^2}{6} - \\nicefrac{x^2}{10} = 1", 1),
        ("(x+1)^2", "x^2 + 2x + 1", 1),
        ("\\boxed{\\frac{3}{4}}", "0.75", 1),
        ("$6 \\cdot 7$", "42", 1),
        ("2x = 6", "x = 3", 1),  # same solution set up to a scalar
        ("x = 3", "3", 0),  # equation vs expression
        ("2**3", "8", 1),
        ("1/3", "0.333", 0),
        ("1/0", "1", 0),
        ("((1", "1", 0),
    ],
)
def test_verify_math_cases(answer, gold, b):
    assert verify_math(answer, gold).b == b


def test_fraction_oracle():
    poly, is_eq = parse_math("5/10")
    assert not is_eq and poly == {(): Fraction(1, 2)}


def test_parse_detail_and_fallback():
    assert verify_math("1 +* 2", "3").detail == "parse"
    fb = verify_math("sqrt(2)", "sqrt(2)")
    assert (fb.b, fb.detail) == (1, "fallback")
    assert verify_math("sin(x)", "cos(x)").b == 0


def _eval(expr: str, x: Fraction) -> Fraction:
    poly, _ = parse_math(expr)
    total = Fraction(0)
    for mono, c in poly.items():
        term = c
        for _, e in mono:
            term *= x**e
        total += term
    return total


@given(st.lists(st.integers(-9, 9), min_size=1, max_size=4), st.lists(st.integers(-9, 9), min_size=1, max_size=4))
def test_product_expansion_matches_pointwise_evaluation(p, q):
    # independent oracle: two polynomials are equal iff they agree on more points than their degree
    def lit(coeffs):
        return "(" + " + ".join(f"({c})*x^{i}" for i, c in enumerate(coeffs)) + ")"

    product = lit(p) + "*" + lit(q)
    expanded = [0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        for j, b in enumerate(q):
            expanded[i + j] += a * b
    flat = " + ".join(f"({c})*x^{i}" for i, c in enumerate(expanded))
    assert verify_math(product, flat).b == 1
    for x in range(-3, 4):
        assert _eval(product, Fraction(x)) == _eval(flat, Fraction(x))


@given(st.sampled_from(["x+1", "1/2", "0.5", "2x=6", "x=3", "(x-1)(x+1)", "x^2-1", "7", "foo", "3/0"]),
       st.sampled_from(["1+x", "x+1", "2/4", "x^2 - 1", "3 = x", "7.0", "foo", "1"]))
def test_verify_math_is_symmetric(a, g):
    assert verify_math(a, g).b == verify_math(g, a).b


# -- QA --------------------------------------------------------------------


def test_qa_examples():
    v = verify_qa_em_f1("Paris", "Paris")
    assert (v.b, v.score) == (1, 1.0)
    v = verify_qa_em_f1("in Paris", "Paris", 0.5)
    assert v.b == 1 and v.score == pytest.approx(2 * 0.5 * 1.0 / 1.5, abs=1e-12)
    v = verify_qa_em_f1("London", "Paris")
    assert (v.b, v.score) == (0, 0.0)


def test_normalization_and_modes():
    assert normalize_answer("The  Eiffel, Tower!") == "eiffel tower"
    assert exact_match("the Paris.", "paris") == 1.0
    assert verify_qa_em_f1("...", "Paris").b == 0
    assert verify_qa_em_f1("in Paris", "Paris", 0.7).b == 0
    assert verify_qa_em_f1("Paris", "Paris", score_mode="f1").score == 1.0


@given(st.lists(st.sampled_from(["red", "blue", "green", "cat", "dog"]), min_size=1, max_size=6),
       st.lists(st.sampled_from(["red", "blue", "green", "cat", "dog"]), min_size=1, max_size=6))
def test_f1_against_counting_oracle(pred, gold):
    common = 0
    remaining = list(gold)
    for tok in pred:
        if tok in remaining:
            remaining.remove(tok)
            common += 1
    expected = 0.0 if common == 0 else 2 * common / (len(pred) + len(gold))
    assert token_f1(" ".join(pred), " ".join(gold)) == pytest.approx(expected, abs=1e-12)
    v = verify_qa_em_f1(" ".join(pred), " ".join(gold), 0.5)
    assert v.b == int(v.score >= 0.5)


# -- code ------------------------------------------------------------------


def test_code_true_false_timeout():
    assert verify_code_tests("", {"command": ["true"]}).b == 1
    assert verify_code_tests("", {"command": "false"}).b == 0
    v = verify_code_tests("", {"command": [sys.executable, "-c", "import time; time.sleep(10)"], "timeout": 0.5})
    assert (v.b, v.detail) == (0, "timeout")


def test_code_infra_flags():
    v = verify_code_tests("", {})
    assert v.infra and v.detail == "infra"
    v = verify_code_tests("", {"command": ["/no/such/binary"]})
    assert v.infra and v.b == 0


def test_default_harness_runs_tests():
    tests = "assert add(2, 3) == 5\n"
    assert verify_code_tests("def add(a, b):\n    return a + b\n", default_code_aux(tests)).b == 1
    assert verify_code_tests("def add(a, b):\n    return a - b\n", default_code_aux(tests)).b == 0


def test_default_harness_blocks_network():
    artifact = "import socket\nsocket.create_connection(('127.0.0.1', 9))\n"
    assert verify_code_tests(artifact, default_code_aux("")).b == 0


def test_artifact_substitution():
    aux = {"command": [sys.executable, "-c", "import sys; sys.exit(open(sys.argv[1]).read() != 'ok')", "{artifact}"]}
    assert verify_code_tests("ok", aux).b == 1
    assert verify_code_tests("no", aux).b == 0


# -- schema ----------------------------------------------------------------


SCHEMA = {"required": {"name": "text", "args": "object"}}


@pytest.mark.parametrize(
    "answer, b",
    [
        ('{"name":"x","args":{}}', 1),
        ('{"name":"x","args":{},"extra":3}', 1),
        ('{"name":"x"}', 0),
        ('{"name":5,"args":{}}', 0),
        ("[1,2]", 0),
        ("get_weather(Paris)", 0),
    ],
)
def test_schema_match(answer, b):
    assert verify_schema_match(answer, SCHEMA).b == b


def test_bool_is_not_a_number():
    assert verify_schema_match('{"n": true}', {"required": {"n": "number"}}).b == 0
    assert verify_schema_match('{"n": 1.5}', {"required": {"n": "number"}}).b == 1
    assert verify_schema_match('{"n": 1}', {"required": {"n": "mystery"}}).b == 0


# -- dispatch on kind ------------------------------------------------------


def test_verify_answer_dispatch():
    assert verify_answer("0.5", GoldSpec("math", "1/2")).b == 1
    assert verify_answer("in Paris", GoldSpec("qa", "Paris", threshold=0.9)).b == 0
    assert verify_answer("def f():\n    return 1\n", GoldSpec("code", "", {"tests": "assert f() == 1\n"})).b == 1
    assert verify_answer('{"name":"x","args":{}}', GoldSpec("tool_schema", "", SCHEMA)).b == 1


def test_gold_spec_validation_and_from_dict():
    with pytest.raises(ValueError):
        GoldSpec("image", "x")
    with pytest.raises(ValueError):
        GoldSpec("qa", "x", threshold=1.5)
    spec = GoldSpec.from_dict(json.loads('{"kind": "qa", "gold": "Paris", "threshold": 0.8}'))
    assert spec.threshold == 0.8 and spec.aux == {}
