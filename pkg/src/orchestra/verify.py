"""Source-specific verifiers producing the binary correctness signal."""

from __future__ import annotations

import json
import os
import re
import resource
import shlex
import string
import subprocess
import sys
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Literal, Mapping

GoldKind = Literal["math", "qa", "code", "tool_schema"]


@dataclass(frozen=True)
class GoldSpec:
    kind: GoldKind
    gold: str
    aux: Mapping[str, Any] = field(default_factory=dict)
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in ("math", "qa", "code", "tool_schema"):
            raise ValueError(f"unknown gold kind {self.kind!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> GoldSpec:
        return cls(
            kind=data["kind"],
            gold=str(data.get("gold", "")),
            aux=dict(data.get("aux") or {}),
            threshold=float(data.get("threshold", 0.5)),
        )


@dataclass(frozen=True)
class Verdict:
    b: int
    score: float
    detail: str = ""
    infra: bool = False


# -- math ------------------------------------------------------------------


class MathSyntaxError(ValueError):
    pass


class Unsupported(ValueError):
    """Valid-looking input outside the exact-rational polynomial fragment."""


Monomial = tuple[tuple[str, int], ...]
Poly = dict[Monomial, Fraction]

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*|\.\d+|\d+)|([A-Za-z]+)|(\*\*|[-+*/^()=]))")
_LATEX = [
    (re.compile(r"\\[dt]?frac\{([^{}]*)\}\{([^{}]*)\}"), r"((\1)/(\2))"),
    (re.compile(r"\\nicefrac\{([^{}]*)\}\{([^{}]*)\}"), r"((\1)/(\2))"),
    (re.compile(r"\\(?:cdot|times)"), "*"),
    (re.compile(r"\\div"), "/"),
    (re.compile(r"\\left|\\right|\\[,;! ]"), ""),
]


def _clean(text: str) -> str:
    s = text.strip().strip("$").strip()
    m = re.fullmatch(r"\\boxed\{(.*)\}", s)
    if m:
        s = m.group(1)
    for pat, rep in _LATEX:
        s = pat.sub(rep, s)
    s = s.replace("\u2212", "-").replace("\u00d7", "*").replace("\u00f7", "/").replace("{", "(").replace("}", ")")
    return s.rstrip(".").strip()


def _tokens(s: str) -> list[str]:
    out: list[str] = []
    pos = 0
    s = s.rstrip()
    while pos < len(s):
        m = _TOKEN.match(s, pos)
        if not m:
            raise MathSyntaxError(f"unexpected character {s[pos:pos+1]!r}")
        pos = m.end()
        num, word, op = m.groups()
        if word is not None and len(word) > 1:
            raise Unsupported(f"symbol {word!r}")
        out.append(num or word or ("^" if op == "**" else op))
    return out


def _p_const(c: Fraction) -> Poly:
    return {(): c} if c else {}


def _p_add(a: Poly, b: Poly, sign: int = 1) -> Poly:
    out = dict(a)
    for m, c in b.items():
        v = out.get(m, Fraction(0)) + sign * c
        if v:
            out[m] = v
        else:
            out.pop(m, None)
    return out


def _p_mul(a: Poly, b: Poly) -> Poly:
    out: Poly = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            powers: dict[str, int] = dict(ma)
            for v, e in mb:
                powers[v] = powers.get(v, 0) + e
            m = tuple(sorted(powers.items()))
            out = _p_add(out, {m: ca * cb})
    return out


def _p_pow(a: Poly, n: int) -> Poly:
    if n < 0:
        if set(a) - {()}:
            raise Unsupported("negative power of a non-constant")
        c = a.get((), Fraction(0))
        if c == 0:
            raise ZeroDivisionError("zero to a negative power")
        return _p_const(Fraction(1) / c ** (-n))
    out: Poly = {(): Fraction(1)}
    for _ in range(n):
        out = _p_mul(out, a)
    return out


class _Parser:
    # expr := term (('+'|'-') term)* ; term := unary (('*'|'/'|implicit) unary)*
    # unary := '-' unary | '+' unary | power ; power := atom ('^' unary)?
    def __init__(self, tokens: list[str]) -> None:
        self.t = tokens
        self.i = 0

    def peek(self) -> str | None:
        return self.t[self.i] if self.i < len(self.t) else None

    def take(self) -> str:
        tok = self.peek()
        if tok is None:
            raise MathSyntaxError("unexpected end of expression")
        self.i += 1
        return tok

    def parse(self) -> Poly:
        if not self.t:
            raise MathSyntaxError("empty expression")
        p = self.expr()
        if self.peek() is not None:
            raise MathSyntaxError(f"unexpected token {self.peek()!r}")
        return p

    def expr(self) -> Poly:
        p = self.term()
        while self.peek() in ("+", "-"):
            sign = 1 if self.take() == "+" else -1
            p = _p_add(p, self.term(), sign)
        return p

    def term(self) -> Poly:
        p = self.unary()
        while True:
            tok = self.peek()
            if tok in ("*", "/"):
                self.take()
                rhs = self.unary()
                if tok == "*":
                    p = _p_mul(p, rhs)
                else:
                    if set(rhs) - {()}:
                        raise Unsupported("division by a non-constant")
                    c = rhs.get((), Fraction(0))
                    if c == 0:
                        raise ZeroDivisionError("division by zero")
                    p = _p_mul(p, _p_const(1 / c))
            elif tok is not None and (tok == "(" or tok[0].isalnum() or tok[0] == "."):
                p = _p_mul(p, self.unary())  # implicit product: 2x, 3(x+1)
            else:
                return p

    def unary(self) -> Poly:
        tok = self.peek()
        if tok == "-":
            self.take()
            return _p_mul(_p_const(Fraction(-1)), self.unary())
        if tok == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Poly:
        base = self.atom()
        if self.peek() == "^":
            self.take()
            exp = self.unary()
            if set(exp) - {()}:
                raise Unsupported("symbolic exponent")
            e = exp.get((), Fraction(0))
            if e.denominator != 1:
                raise Unsupported("fractional exponent")
            return _p_pow(base, int(e))
        return base

    def atom(self) -> Poly:
        tok = self.take()
        if tok == "(":
            p = self.expr()
            if self.take() != ")":
                raise MathSyntaxError("unbalanced parenthesis")
            return p
        if tok[0].isdigit() or tok[0] == ".":
            return _p_const(Fraction(tok))
        if tok.isalpha():
            return {((tok, 1),): Fraction(1)}
        raise MathSyntaxError(f"unexpected token {tok!r}")


def parse_math(text: str) -> tuple[Poly, bool]:
    """Canonical polynomial of an expression or equation; the flag marks equations."""
    s = _clean(text)
    sides = s.split("=")
    if len(sides) > 2:
        raise Unsupported("chained equation")
    polys = [_Parser(_tokens(side)).parse() for side in sides]
    if len(polys) == 1:
        return polys[0], False
    return _p_add(polys[0], polys[1], -1), True


def _scalar_multiple(a: Poly, b: Poly) -> bool:
    if set(a) != set(b):
        return False
    if not a:
        return True
    ratios = {a[m] / b[m] for m in a}
    return len(ratios) == 1


def verify_math(answer: str, gold: str) -> Verdict:
    try:
        pa, eq_a = parse_math(answer)
        pg, eq_g = parse_math(gold)
    except (MathSyntaxError, ZeroDivisionError):
        return Verdict(0, 0.0, "parse")
    except Unsupported:
        same = " ".join(answer.split()) == " ".join(gold.split())
        return Verdict(int(same), float(same), "fallback")
    if eq_a != eq_g:
        return Verdict(0, 0.0, "shape")
    same = _scalar_multiple(pa, pg) if eq_a else pa == pg
    return Verdict(int(same), float(same), "symbolic")


# -- QA --------------------------------------------------------------------


def normalize_answer(s: str) -> str:
    s = s.lower()
    s = "".join(ch for ch in s if ch not in set(string.punctuation))
    s = re.sub(r"\b(a|an|the)\b", " ", s)
    return " ".join(s.split())


def exact_match(prediction: str, gold: str) -> float:
    return float(normalize_answer(prediction) == normalize_answer(gold))


def token_f1(prediction: str, gold: str) -> float:
    pred = normalize_answer(prediction).split()
    ref = normalize_answer(gold).split()
    if not pred or not ref:
        return float(pred == ref)
    common = sum((Counter(pred) & Counter(ref)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred)
    recall = common / len(ref)
    return 2 * precision * recall / (precision + recall)


def verify_qa_em_f1(answer: str, gold: str, threshold: float = 0.5, *, score_mode: str = "max") -> Verdict:
    if not normalize_answer(answer) or not normalize_answer(gold):
        return Verdict(0, 0.0, "empty")
    f1 = token_f1(answer, gold)
    score = max(exact_match(answer, gold), f1) if score_mode == "max" else f1
    return Verdict(int(score >= threshold), score, f"f1={f1:.4f}")


# -- code ------------------------------------------------------------------


def _limits(cpu_s: int, memory_mb: int):
    def apply() -> None:
        resource.setrlimit(resource.RLIMIT_CPU, (cpu_s, cpu_s))
        if memory_mb:
            nbytes = memory_mb * 1024 * 1024
            resource.setrlimit(resource.RLIMIT_AS, (nbytes, nbytes))

    return apply


def default_code_aux(tests: str) -> dict[str, Any]:
    """Aux payload running ``tests`` against the artifact with the bundled no-network harness."""
    return {
        "command": [sys.executable, "-m", "orchestra.sandbox", "{artifact}", "{tests}"],
        "tests": tests,
        "timeout": 5.0,
        "memory_mb": 1024,
    }


def verify_code_tests(artifact: str, aux: Mapping[str, Any]) -> Verdict:
    """Run the external check command; b=1 iff it exits 0 within the limits."""
    command = aux.get("command")
    if not command:
        return Verdict(0, 0.0, "infra", infra=True)
    timeout = float(aux.get("timeout", 5.0))
    with tempfile.TemporaryDirectory(prefix="orchestra-check-") as tmp:
        workdir = Path(tmp)
        artifact_path = workdir / str(aux.get("filename", "solution.py"))
        artifact_path.write_text(artifact, "utf-8")
        tests_path = workdir / "checks.py"
        tests_path.write_text(str(aux.get("tests", "")), "utf-8")
        subs = {"artifact": str(artifact_path), "tests": str(tests_path), "workdir": str(workdir)}
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        argv = [str(a).format(**subs) for a in argv]
        env = {"PATH": os.environ.get("PATH", "/usr/bin:/bin"), "HOME": str(workdir), "PYTHONPATH": _own_path()}
        try:
            proc = subprocess.run(
                argv,
                cwd=workdir,
                env=env,
                stdin=subprocess.DEVNULL,
                capture_output=True,
                timeout=timeout,
                preexec_fn=_limits(int(timeout) + 1, int(aux.get("memory_mb", 0))),
            )
        except subprocess.TimeoutExpired:
            return Verdict(0, 0.0, "timeout")
        except OSError as exc:
            return Verdict(0, 0.0, f"infra: {exc}", infra=True)
    if proc.returncode == 0:
        return Verdict(1, 1.0, "pass")
    return Verdict(0, 0.0, f"exit {proc.returncode}")


def _own_path() -> str:
    return str(Path(__file__).resolve().parent.parent)


# -- tool-use schema -------------------------------------------------------

_TYPES: dict[str, tuple[type, ...]] = {
    "text": (str,),
    "string": (str,),
    "number": (int, float),
    "integer": (int,),
    "boolean": (bool,),
    "object": (dict,),
    "array": (list,),
    "null": (type(None),),
}


def _type_ok(value: Any, expected: str) -> bool:
    kinds = _TYPES.get(expected)
    if kinds is None:
        return False
    if isinstance(value, bool) and expected in ("number", "integer"):
        return False
    return isinstance(value, kinds)


def verify_schema_match(answer: str, aux: Mapping[str, Any]) -> Verdict:
    try:
        obj = json.loads(answer)
    except (json.JSONDecodeError, TypeError):
        return Verdict(0, 0.0, "parse")
    if not isinstance(obj, dict):
        return Verdict(0, 0.0, "not an object")
    required = aux.get("required", {})
    for name, expected in required.items():
        if name not in obj:
            return Verdict(0, 0.0, f"missing {name}")
        if not _type_ok(obj[name], str(expected)):
            return Verdict(0, 0.0, f"type mismatch on {name}")
    return Verdict(1, 1.0, "match")


def verify_answer(answer: str, spec: GoldSpec, *, qa_score: str = "max") -> Verdict:
    if spec.kind == "math":
        return verify_math(answer, spec.gold)
    if spec.kind == "qa":
        return verify_qa_em_f1(answer, spec.gold, spec.threshold, score_mode=qa_score)
    if spec.kind == "code":
        aux = spec.aux if "command" in spec.aux else {**default_code_aux(str(spec.aux.get("tests", ""))), **spec.aux}
        return verify_code_tests(answer, aux)
    return verify_schema_match(answer, spec.aux)
