"""Worker backends: a seeded scripted simulator and a chat-completion HTTP client."""

from __future__ import annotations

import hashlib
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Literal, Mapping, Protocol

import httpx

from .errors import ConfigError, InadmissiblePair, MissingFixture
from .pool import AdmissiblePair, PoolRegistry, UsageRecord

Status = Literal["ok", "timeout", "refusal", "transport_error"]
RETRYABLE = ("timeout", "transport_error")


@dataclass(frozen=True)
class WorkerRequest:
    pair: AdmissiblePair
    instruction: str
    context: str = ""
    timeout: float = 60.0
    attempt_seed: int = 0

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass(frozen=True)
class WorkerResponse:
    observation: str
    usage: UsageRecord
    latency: float
    status: Status
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


class Backend(Protocol):
    def call(self, request: WorkerRequest) -> WorkerResponse: ...


def stable_seed(*parts: object) -> int:
    """Process-independent 64-bit seed from arbitrary parts."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big")


# -- scripted workers ------------------------------------------------------


@dataclass(frozen=True)
class ScriptedBehaviour:
    """Deterministic stand-in for one frozen worker.

    ``response_table`` maps ``(instruction, primitive)`` to a row with
    ``correct`` and ``wrong`` observations; ``"*"`` matches anything in either
    position. ``{instruction}`` in a row is substituted.
    """

    competence: Mapping[str, float]
    response_table: Mapping[tuple[str, str], Mapping[str, str]] = field(default_factory=dict)
    token_profile: tuple[int, int] = (0, 0)
    latency: float = 0.0
    fail_mode: Status | None = None

    def __post_init__(self) -> None:
        for prim, p in self.competence.items():
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"competence for {prim!r} must lie in [0, 1], got {p}")

    def row(self, instruction: str, primitive: str) -> Mapping[str, str]:
        key = instruction.strip()
        for k in ((key, primitive), (key, "*"), ("*", primitive), ("*", "*")):
            if k in self.response_table:
                return self.response_table[k]
        raise MissingFixture(f"no scripted response for instruction {key[:60]!r} / {primitive}")


def scripted_success(behaviour: ScriptedBehaviour, request: WorkerRequest) -> bool:
    p = behaviour.competence.get(request.pair.primitive_id, behaviour.competence.get("*", 0.0))
    rng = random.Random(
        stable_seed(request.pair.worker_id, request.pair.primitive_id, request.instruction.strip(), request.attempt_seed)
    )
    return rng.random() < p


def scripted_worker_eval(behaviour: ScriptedBehaviour, request: WorkerRequest) -> WorkerResponse:
    usage = UsageRecord(*behaviour.token_profile)
    if behaviour.fail_mode is not None:
        return WorkerResponse("", UsageRecord(), behaviour.latency, behaviour.fail_mode, "scripted failure")
    row = behaviour.row(request.instruction, request.pair.primitive_id)
    column = "correct" if scripted_success(behaviour, request) else "wrong"
    text = row.get(column, "").replace("{instruction}", request.instruction.strip())
    if not text:
        return WorkerResponse("", usage, behaviour.latency, "refusal", f"empty {column} column")
    return WorkerResponse(text, usage, behaviour.latency, "ok", column)


class ScriptedBackend:
    """Pure per call; with ``realtime`` it also sleeps for the scripted latency."""

    def __init__(self, behaviour: ScriptedBehaviour, *, realtime: bool = False) -> None:
        self.behaviour = behaviour
        self.realtime = realtime

    def call(self, request: WorkerRequest) -> WorkerResponse:
        if self.realtime and self.behaviour.latency > 0:
            time.sleep(self.behaviour.latency)
        return scripted_worker_eval(self.behaviour, request)


def scripted_backends_from_pool(
    pool: Mapping[str, Any], *, realtime: bool = False
) -> dict[str, ScriptedBackend]:
    """Build scripted backends from the ``scripted`` and ``responses`` sections of a pool file."""
    responses = pool.get("responses", {})
    table: dict[tuple[str, str], Mapping[str, str]] = {}
    for key, row in responses.items():
        instruction, _, primitive = key.partition("||")
        table[(instruction.strip() or "*", primitive.strip() or "*")] = row
    backends = {}
    for wid, spec in pool.get("scripted", {}).items():
        profile = spec.get("token_profile", [0, 0])
        backends[wid] = ScriptedBackend(
            ScriptedBehaviour(
                competence=dict(spec.get("competence", {})),
                response_table=table,
                token_profile=(int(profile[0]), int(profile[1])),
                latency=float(spec.get("latency", 0.0)),
                fail_mode=spec.get("fail_mode"),
            ),
            realtime=realtime,
        )
    return backends


# -- HTTP workers ----------------------------------------------------------


def api_key_env(worker_id: str) -> str:
    return "ORCHESTRA_API_KEY_" + re.sub(r"[^A-Z0-9]", "_", worker_id.upper())


class ChatCompletionBackend:
    """``POST {endpoint}/chat/completions`` with bearer auth from ``ORCHESTRA_API_KEY_<WORKER>``."""

    def __init__(
        self,
        endpoint: str,
        worker_id: str,
        *,
        model: str | None = None,
        api_key: str | None = None,
        max_in_flight: int = 8,
        skill_contracts: Mapping[str, str] | None = None,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.url = endpoint.rstrip("/") + "/chat/completions"
        self.worker_id = worker_id
        self.model = model or worker_id
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env(worker_id))
        self.skill_contracts = dict(skill_contracts or {})
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._transport = transport

    def _payload(self, request: WorkerRequest) -> dict[str, Any]:
        contract = self.skill_contracts.get(request.pair.primitive_id, "")
        system = f"Skill: {request.pair.primitive_id}. {contract}".strip()
        user = request.instruction if not request.context else f"{request.context}\n\n{request.instruction}"
        return {
            "model": self.model,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
            "seed": request.attempt_seed % (1 << 31),
        }

    def call(self, request: WorkerRequest) -> WorkerResponse:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        start = time.monotonic()
        with self._slots:
            try:
                with httpx.Client(timeout=request.timeout, transport=self._transport) as client:
                    resp = client.post(self.url, json=self._payload(request), headers=headers)
            except httpx.TimeoutException as exc:
                return WorkerResponse("", UsageRecord(), time.monotonic() - start, "timeout", str(exc))
            except httpx.HTTPError as exc:
                return WorkerResponse("", UsageRecord(), time.monotonic() - start, "transport_error", str(exc))
        latency = time.monotonic() - start
        try:
            body = resp.json()
        except ValueError:
            body = {}
        usage = _usage(body.get("usage"))
        if resp.status_code >= 400:
            return WorkerResponse("", usage, latency, "transport_error", f"HTTP {resp.status_code}")
        try:
            choice = body["choices"][0]
            text = choice["message"].get("content") or ""
        except (KeyError, IndexError, TypeError, AttributeError):
            return WorkerResponse("", usage, latency, "transport_error", "malformed response")
        if not text.strip() or choice.get("finish_reason") == "content_filter":
            return WorkerResponse("", usage, latency, "refusal", "empty or filtered completion")
        return WorkerResponse(text.strip(), usage, latency, "ok")


def _usage(raw: Any) -> UsageRecord:
    if not isinstance(raw, Mapping):
        return UsageRecord()
    try:
        return UsageRecord(max(0, int(raw.get("prompt_tokens", 0))), max(0, int(raw.get("completion_tokens", 0))))
    except (TypeError, ValueError):
        return UsageRecord()


def http_backends(registry: PoolRegistry, *, max_in_flight: int = 8) -> dict[str, ChatCompletionBackend]:
    contracts = {p.primitive_id: p.contract for p in registry.primitives.values()}
    return {
        w.worker_id: ChatCompletionBackend(
            w.endpoint, w.worker_id, model=w.model, max_in_flight=max_in_flight, skill_contracts=contracts
        )
        for w in registry.workers.values()
        if w.endpoint
    }


# -- dispatch --------------------------------------------------------------


def dispatch_call(
    request: WorkerRequest,
    backend: Backend,
    registry: PoolRegistry | None = None,
    *,
    retries: int = 2,
) -> WorkerResponse:
    """Exactly one response per request.

    Timeouts and transport errors are retried up to ``retries`` times; usage
    from every attempt is billed. Backend exceptions other than configuration
    errors come back as ``transport_error``.
    """
    if registry is not None and not registry.is_admissible(request.pair.worker_id, request.pair.primitive_id):
        raise InadmissiblePair(f"({request.pair.worker_id}, {request.pair.primitive_id}) is not admissible")
    billed = UsageRecord()
    latency = 0.0
    resp: WorkerResponse | None = None
    for _ in range(retries + 1):
        try:
            resp = backend.call(request)
        except ConfigError:
            raise
        except Exception as exc:  # noqa: BLE001 - the scheduler must never see backend exceptions
            resp = WorkerResponse("", UsageRecord(), 0.0, "transport_error", f"{type(exc).__name__}: {exc}")
        billed = billed + resp.usage
        latency += resp.latency
        if resp.status not in RETRYABLE:
            break
    assert resp is not None
    status = resp.status if resp.status != "ok" or resp.observation else "refusal"
    return WorkerResponse(resp.observation if status == "ok" else "", billed, latency, status, resp.detail)
