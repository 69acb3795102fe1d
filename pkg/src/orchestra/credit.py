"""Group-relative credit assignment: returns, advantages, clipped surrogate and KL.

Everything here is a pure function of its inputs. Log-probabilities come from
an external trainer; this module only turns them into numbers.

Mixing weights that share symbols with other quantities are renamed:
``rho_mix`` weights the turn-level term of the multi-turn estimator and
``eta_mix`` weights the anchor term of the anchor-grouped estimator.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import IO, Any, Iterable, Mapping, Sequence

from . import kernels
from .errors import CreditError

ESTIMATORS = ("grpo", "agentic", "tree", "mt", "gigpo", "agentic_shaped")


@dataclass(frozen=True)
class Rollout:
    """One trajectory of a group, reduced to what credit assignment needs.

    ``branch`` is ``(prefix_id, branch_turn)``: turns before ``branch_turn``
    are shared with every sibling carrying the same ``prefix_id``.
    """

    rollout_id: str
    R: float
    r: tuple[float, ...]
    kinds: tuple[str, ...]
    trajectory: str = ""
    branch: tuple[str, int] | None = None
    anchor_keys: tuple[str | None, ...] = ()

    def __post_init__(self) -> None:
        if len(self.r) != len(self.kinds):
            raise CreditError(
                f"rollout {self.rollout_id}: {len(self.r)} shaping values for {len(self.kinds)} turns",
                code="length-mismatch",
            )
        if self.anchor_keys and len(self.anchor_keys) != len(self.kinds):
            raise CreditError(f"rollout {self.rollout_id}: anchor keys do not match turns", code="length-mismatch")
        if not math.isfinite(self.R) or not all(math.isfinite(x) for x in self.r):
            raise CreditError(f"rollout {self.rollout_id}: non-finite reward", code="non-finite")

    @property
    def T(self) -> int:
        return len(self.kinds)


@dataclass(frozen=True)
class RolloutGroup:
    query_id: str
    rollouts: tuple[Rollout, ...]

    def __post_init__(self) -> None:
        ids = [r.rollout_id for r in self.rollouts]
        if len(set(ids)) != len(ids):
            raise CreditError(f"duplicate rollout id in group {self.query_id}", code="duplicate-rollout")

    @property
    def G(self) -> int:
        return len(self.rollouts)


@dataclass(frozen=True)
class TurnKey:
    query_id: str
    turn: int
    kind: str

    @property
    def cohort_id(self) -> str:
        return f"{self.query_id}/t{self.turn}/{self.kind}"


@dataclass(frozen=True)
class AdvantageRow:
    query_id: str
    rollout_id: str
    turn: int
    kind: str
    R_tilde: float
    advantage: float
    cohort_id: str
    estimator: str


@dataclass
class AdvantageTable:
    estimator: str
    rows: list[AdvantageRow] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._index = {(row.rollout_id, row.turn): row for row in self.rows}

    def get(self, rollout_id: str, turn: int) -> float:
        try:
            return self._index[(rollout_id, turn)].advantage
        except KeyError:
            raise CreditError(f"no advantage for rollout {rollout_id} turn {turn}", code="missing-advantage") from None

    def by_rollout(self, rollout_id: str) -> list[float]:
        return [row.advantage for row in self.rows if row.rollout_id == rollout_id]

    def cohorts(self) -> dict[str, list[AdvantageRow]]:
        out: dict[str, list[AdvantageRow]] = {}
        for row in self.rows:
            out.setdefault(row.cohort_id, []).append(row)
        return out

    def records(self) -> list[dict[str, Any]]:
        return [asdict(row) for row in self.rows]


# -- returns and standardization -------------------------------------------


def _check_gamma(gamma: float) -> None:
    if not 0.0 < gamma <= 1.0:
        raise CreditError(f"gamma must lie in (0, 1], got {gamma}", code="bad-gamma")


def discounted_returns(R: float, r: Sequence[float], gamma: float = 1.0) -> list[float]:
    """Backward recursion for the turn-level return of one rollout."""
    _check_gamma(gamma)
    out = [0.0] * len(r)
    acc = R
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + (gamma * acc if t < len(r) - 1 else acc)
        out[t] = acc
    return out


def turn_returns(group: RolloutGroup, gamma: float = 1.0) -> dict[str, list[float]]:
    """R-tilde per rollout, indexed by turn - 1."""
    return {ro.rollout_id: discounted_returns(ro.R, ro.r, gamma) for ro in group.rollouts}


def standardize(values: Sequence[float], keys: Sequence[Any], eps: float = 1e-8) -> list[float]:
    """Population z-score of each value within the cohort sharing its key."""
    if len(values) != len(keys):
        raise CreditError("values and keys differ in length", code="length-mismatch")
    ids: dict[Any, int] = {}
    group_ids = [ids.setdefault(k, len(ids)) for k in keys]
    return kernels.standardize_groups(list(values), group_ids, len(ids), eps)


def grpo_advantages(terminal_R: Sequence[float], eps: float = 1e-8) -> list[float]:
    """One standardized score per rollout; zero spread gives zeros."""
    return standardize(terminal_R, [0] * len(terminal_R), eps)


def _broadcast(group: RolloutGroup, per_rollout: Mapping[str, float], estimator: str, gamma: float) -> AdvantageTable:
    returns = turn_returns(group, gamma)
    rows = [
        AdvantageRow(group.query_id, ro.rollout_id, t + 1, ro.kinds[t], returns[ro.rollout_id][t],
                     per_rollout[ro.rollout_id], f"{group.query_id}/group", estimator)
        for ro in group.rollouts
        for t in range(ro.T)
    ]
    return AdvantageTable(estimator, rows)


def grpo_table(group: RolloutGroup, eps: float = 1e-8, gamma: float = 1.0) -> AdvantageTable:
    """Trajectory-level scores broadcast to every turn."""
    a = grpo_advantages([ro.R for ro in group.rollouts], eps)
    return _broadcast(group, {ro.rollout_id: x for ro, x in zip(group.rollouts, a)}, "grpo", gamma)


def _cohort_table(
    group: RolloutGroup, values: Mapping[str, Sequence[float]], estimator: str, eps: float, gamma: float = 1.0
) -> AdvantageTable:
    returns = turn_returns(group, gamma)
    cells = [(ro, t) for ro in group.rollouts for t in range(ro.T)]
    keys = [TurnKey(group.query_id, t + 1, ro.kinds[t]) for ro, t in cells]
    adv = standardize([values[ro.rollout_id][t] for ro, t in cells], keys, eps)
    rows = [
        AdvantageRow(group.query_id, ro.rollout_id, t + 1, ro.kinds[t], returns[ro.rollout_id][t], a, k.cohort_id, estimator)
        for (ro, t), k, a in zip(cells, keys, adv)
    ]
    return AdvantageTable(estimator, rows)


def agentic_advantages(group: RolloutGroup, gamma: float = 1.0, eps: float = 1e-8) -> AdvantageTable:
    """Standardize R-tilde within (query, turn, action kind) cohorts."""
    return _cohort_table(group, turn_returns(group, gamma), "agentic", eps, gamma)


# -- variants ---------------------------------------------------------------


def _per_turn(params: Mapping[str, Any], name: str, group: RolloutGroup) -> dict[str, list[float]]:
    table = params.get(name)
    if not isinstance(table, Mapping):
        raise CreditError(f"parameter {name!r} (per-rollout per-turn values) is required", code="missing-param")
    out = {}
    for ro in group.rollouts:
        values = table.get(ro.rollout_id)
        if values is None or len(values) != ro.T:
            raise CreditError(f"{name} for rollout {ro.rollout_id} must have {ro.T} values", code="length-mismatch")
        out[ro.rollout_id] = [float(v) for v in values]
    return out


def _group_scores(group: RolloutGroup, params: Mapping[str, Any], eps: float) -> dict[str, float]:
    override = params.get("A_g")
    if override is not None:
        return {ro.rollout_id: float(override[ro.rollout_id]) for ro in group.rollouts}
    a = grpo_advantages([ro.R for ro in group.rollouts], eps)
    return {ro.rollout_id: x for ro, x in zip(group.rollouts, a)}


def _tree(group: RolloutGroup, params: Mapping[str, Any], eps: float, gamma: float) -> AdvantageTable:
    if any(ro.branch is None for ro in group.rollouts):
        raise CreditError("tree estimator needs branch lineage on every rollout", code="missing-lineage")
    returns = turn_returns(group, gamma)
    a_g = _group_scores(group, params, eps)
    # sibling signal from the return at the branch turn
    at_branch = []
    for ro in group.rollouts:
        prefix, b = ro.branch  # type: ignore[misc]
        if not 1 <= b <= max(ro.T, 1):
            raise CreditError(f"branch turn {b} outside rollout {ro.rollout_id}", code="missing-lineage")
        at_branch.append(returns[ro.rollout_id][b - 1] if ro.T else ro.R)
    siblings = standardize(at_branch, [ro.branch[0] for ro in group.rollouts], eps)  # type: ignore[index]
    rows = []
    for ro, t_b in zip(group.rollouts, siblings):
        prefix, b = ro.branch  # type: ignore[misc]
        for t in range(ro.T):
            post = t + 1 >= b
            rows.append(
                AdvantageRow(
                    group.query_id, ro.rollout_id, t + 1, ro.kinds[t], returns[ro.rollout_id][t],
                    t_b if post else a_g[ro.rollout_id],
                    f"{group.query_id}/branch/{prefix}" if post else f"{group.query_id}/group",
                    "tree",
                )
            )
    return AdvantageTable("tree", rows)


def _mt(group: RolloutGroup, params: Mapping[str, Any], eps: float, gamma: float) -> AdvantageTable:
    u = _per_turn(params, "U", group)
    rho_mix = float(params.get("rho_mix", 1.0))
    a_g = _group_scores(group, params, eps)
    returns = turn_returns(group, gamma)
    cells = [(ro, t) for ro in group.rollouts for t in range(ro.T)]
    keys = [(group.query_id, t + 1) for _, t in cells]
    b = standardize([u[ro.rollout_id][t] for ro, t in cells], keys, eps)
    rows = [
        AdvantageRow(group.query_id, ro.rollout_id, t + 1, ro.kinds[t], returns[ro.rollout_id][t],
                     a_g[ro.rollout_id] + rho_mix * bt, f"{group.query_id}/t{t + 1}", "mt")
        for (ro, t), bt in zip(cells, b)
    ]
    return AdvantageTable("mt", rows)


def _gigpo(group: RolloutGroup, params: Mapping[str, Any], eps: float, gamma: float) -> AdvantageTable:
    if any(not ro.anchor_keys for ro in group.rollouts if ro.T):
        raise CreditError("anchor-grouped estimator needs anchor keys on every rollout", code="missing-anchors")
    q = _per_turn(params, "Q", group)
    eta_mix = float(params.get("eta_mix", 1.0))
    a_g = _group_scores(group, params, eps)
    returns = turn_returns(group, gamma)
    cells = [(ro, t) for ro in group.rollouts for t in range(ro.T)]
    # a missing anchor is its own singleton cohort
    keys = [
        ("anchor", ro.anchor_keys[t]) if ro.anchor_keys[t] is not None else ("solo", ro.rollout_id, t)
        for ro, t in cells
    ]
    m = standardize([q[ro.rollout_id][t] for ro, t in cells], keys, eps)
    rows = [
        AdvantageRow(group.query_id, ro.rollout_id, t + 1, ro.kinds[t], returns[ro.rollout_id][t],
                     a_g[ro.rollout_id] + eta_mix * mt,
                     f"{group.query_id}/anchor/{k[1]}" if k[0] == "anchor" else f"{group.query_id}/solo/{ro.rollout_id}/t{t + 1}",
                     "gigpo")
        for (ro, t), k, mt in zip(cells, keys, m)
    ]
    return AdvantageTable("gigpo", rows)


def _agentic_shaped(group: RolloutGroup, params: Mapping[str, Any], eps: float, gamma: float) -> AdvantageTable:
    """S_t = w_t R + gamma_progress V_t - alpha_cost C_t, standardized per turn cohort; w_t = 1/T."""
    v = _per_turn(params, "V", group)
    c = _per_turn(params, "C", group)
    gamma_progress = float(params.get("gamma_progress", 1.0))
    alpha_cost = float(params.get("alpha_cost", 0.1))
    scores = {
        ro.rollout_id: [ro.R / ro.T + gamma_progress * v[ro.rollout_id][t] - alpha_cost * c[ro.rollout_id][t] for t in range(ro.T)]
        for ro in group.rollouts
    }
    return _cohort_table(group, scores, "agentic_shaped", eps, gamma)


_VARIANTS = {"tree": _tree, "mt": _mt, "gigpo": _gigpo, "agentic_shaped": _agentic_shaped}


def variant_advantages(
    strategy: str,
    group: RolloutGroup,
    params: Mapping[str, Any] | None = None,
    *,
    gamma: float = 1.0,
    eps: float = 1e-8,
) -> AdvantageTable:
    """Tree, multi-turn, anchor-grouped or shaped-agentic advantages.

    ``params`` may carry ``A_g`` (rollout id to group score) to override the
    trajectory-level term; ``U`` / ``Q`` / ``V`` / ``C`` are per-rollout
    per-turn value lists.
    """
    try:
        fn = _VARIANTS[strategy]
    except KeyError:
        raise CreditError(f"unknown strategy {strategy!r}; expected one of {sorted(_VARIANTS)}", code="bad-strategy") from None
    _check_gamma(gamma)
    return fn(group, params or {}, eps, gamma)


def compute_advantages(
    estimator: str, group: RolloutGroup, params: Mapping[str, Any] | None = None, *, gamma: float = 1.0, eps: float = 1e-8
) -> AdvantageTable:
    if estimator == "grpo":
        return grpo_table(group, eps, gamma)
    if estimator == "agentic":
        return agentic_advantages(group, gamma, eps)
    return variant_advantages(estimator, group, params, gamma=gamma, eps=eps)


# -- loss ------------------------------------------------------------------


@dataclass(frozen=True)
class TokenMask:
    """Policy-emitted token indices of one rollout and the turn each belongs to."""

    rollout_id: str
    turn_of: Mapping[int, int]

    def __post_init__(self) -> None:
        if any(i < 0 for i in self.turn_of) or any(t < 1 for t in self.turn_of.values()):
            raise CreditError("token indices must be >= 0 and turns >= 1", code="bad-mask")

    @property
    def indices(self) -> list[int]:
        return sorted(self.turn_of)

    @classmethod
    def from_spans(cls, rollout_id: str, spans: Iterable[tuple[int, int, int]]) -> TokenMask:
        """Build from ``(start, stop, turn)`` half-open spans."""
        turn_of: dict[int, int] = {}
        for start, stop, turn in spans:
            for i in range(start, stop):
                if i in turn_of:
                    raise CreditError(f"token {i} assigned to two turns", code="bad-mask")
                turn_of[i] = turn
        return cls(rollout_id, turn_of)


@dataclass(frozen=True)
class TokenTerm:
    rollout_id: str
    index: int
    turn: int
    ratio: float
    contribution: float
    kl: float


@dataclass(frozen=True)
class LossBreakdown:
    policy_term: float
    kl_term: float
    total: float
    per_token: tuple[TokenTerm, ...]

    def record(self) -> dict[str, Any]:
        return {
            "policy_term": self.policy_term,
            "kl_term": self.kl_term,
            "total": self.total,
            "per_token": [asdict(t) for t in self.per_token],
        }


LogProbs = Mapping[int, float] | Sequence[float]


def _gather(values: LogProbs, mask: TokenMask, name: str) -> list[float]:
    idx = mask.indices
    if isinstance(values, Mapping):
        extra = set(values) - set(mask.turn_of)
        if extra:
            raise CreditError(f"{name}: index {min(extra)} outside the mask of {mask.rollout_id}", code="index-outside-mask")
        try:
            out = [float(values[i]) for i in idx]
        except KeyError as exc:
            raise CreditError(f"{name}: no value for masked index {exc.args[0]}", code="missing-logprob") from None
    else:
        if idx and idx[-1] >= len(values):
            raise CreditError(f"{name}: masked index {idx[-1]} beyond sequence length", code="index-outside-mask")
        out = [float(values[i]) for i in idx]
    if not all(math.isfinite(x) for x in out):
        raise CreditError(f"{name}: non-finite log-probability", code="non-finite")
    return out


def kl_estimate(rho: float) -> float:
    """rho - ln rho - 1; non-negative, zero only at rho = 1."""
    if not (rho > 0.0 and math.isfinite(rho)):
        raise CreditError(f"ratio must be positive and finite, got {rho}", code="non-positive-ratio")
    return rho - math.log(rho) - 1.0


def masked_clipped_loss(
    masks: Mapping[str, TokenMask],
    logp_new: Mapping[str, LogProbs],
    logp_old: Mapping[str, LogProbs],
    logp_ref: Mapping[str, LogProbs],
    advantages: AdvantageTable,
    clip_eps: float = 0.2,
    beta: float = 1e-3,
    *,
    kl_ratio: str = "reference",
) -> LossBreakdown:
    """Clipped surrogate summed over masked tokens plus the weighted KL estimate.

    Log-probabilities are per rollout, either keyed by token index (exactly
    the masked indices) or as full sequences of which only masked positions
    are read. ``kl_ratio="behaviour"`` evaluates the KL estimator on the
    new/old ratio instead of the reference ratio.
    """
    if not 0.0 <= clip_eps < 1.0:
        raise CreditError("clip epsilon must lie in [0, 1)", code="bad-clip")
    if kl_ratio not in ("reference", "behaviour"):
        raise CreditError(f"unknown kl_ratio {kl_ratio!r}", code="bad-kl-ratio")
    terms: list[TokenTerm] = []
    for rid in sorted(masks):
        mask = masks[rid]
        new = _gather(logp_new[rid], mask, "logp_new")
        old = _gather(logp_old[rid], mask, "logp_old")
        ref = _gather(logp_ref[rid], mask, "logp_ref")
        idx = mask.indices
        adv = [advantages.get(rid, mask.turn_of[i]) for i in idx]
        contrib, ratio, kl = kernels.clipped_terms(new, old, ref, adv, clip_eps)
        if kl_ratio == "behaviour":
            kl = [kl_estimate(r) for r in ratio]
        terms.extend(TokenTerm(rid, i, mask.turn_of[i], r, c, k) for i, r, c, k in zip(idx, ratio, contrib, kl))
    policy_term = math.fsum(t.contribution for t in terms)
    kl_term = math.fsum(t.kl for t in terms)
    return LossBreakdown(policy_term, kl_term, policy_term + beta * kl_term, tuple(terms))


# -- I/O -------------------------------------------------------------------


def group_from_dict(data: Mapping[str, Any]) -> RolloutGroup:
    try:
        rollouts = tuple(
            Rollout(
                rollout_id=str(r["rollout_id"]),
                R=float(r["R"]),
                r=tuple(float(x) for x in r.get("r", [0.0] * len(r["kinds"]))),
                kinds=tuple(r["kinds"]),
                trajectory=str(r.get("trajectory", "")),
                branch=(str(r["branch"][0]), int(r["branch"][1])) if r.get("branch") else None,
                anchor_keys=tuple(r.get("anchor_keys") or ()),
            )
            for r in data["rollouts"]
        )
        return RolloutGroup(str(data["query_id"]), rollouts)
    except (KeyError, TypeError, ValueError) as exc:
        raise CreditError(f"malformed rollout group: {exc}", code="parse-error") from None


def write_jsonl(records: Iterable[Mapping[str, Any]], stream: IO[str]) -> int:
    n = 0
    for rec in records:
        stream.write(json.dumps(rec, sort_keys=True) + "\n")
        n += 1
    return n
