"""Pure-Python twins of the compiled kernels; same signatures, same results."""

from __future__ import annotations

import math
from typing import Sequence

# Cohort spreads at or below this fraction of the largest magnitude count as zero.
REL_SPREAD = 1e-12


def clipped_terms(
    logp_new: Sequence[float],
    logp_old: Sequence[float],
    logp_ref: Sequence[float],
    adv: Sequence[float],
    eps: float,
) -> tuple[list[float], list[float], list[float]]:
    n = len(logp_new)
    if not len(logp_old) == len(logp_ref) == len(adv) == n:
        raise ValueError("length mismatch")
    contrib, ratio, kl = [], [], []
    for new, old, ref, a in zip(logp_new, logp_old, logp_ref, adv):
        if not (math.isfinite(new) and math.isfinite(old) and math.isfinite(ref)):
            raise ValueError("non-finite log-probability")
        rho = math.exp(new - old)
        clipped = min(max(rho, 1.0 - eps), 1.0 + eps)
        contrib.append(-min(rho * a, clipped * a))
        ratio.append(rho)
        rref = math.exp(ref - new)
        kl.append(rref - math.log(rref) - 1.0)
    return contrib, ratio, kl


def standardize_groups(values: Sequence[float], group_ids: Sequence[int], n_groups: int, eps: float) -> list[float]:
    if len(group_ids) != len(values):
        raise ValueError("length mismatch")
    sums = [0.0] * n_groups
    counts = [0] * n_groups
    scales = [0.0] * n_groups
    for v, g in zip(values, group_ids):
        scales[g] = max(scales[g], abs(v))
        sums[g] += v
        counts[g] += 1
    means = [s / c if c else 0.0 for s, c in zip(sums, counts)]
    sq = [0.0] * n_groups
    for v, g in zip(values, group_ids):
        sq[g] += (v - means[g]) ** 2
    out = []
    for v, g in zip(values, group_ids):
        sigma = math.sqrt(sq[g] / counts[g])
        # a spread at rounding level is zero spread
        out.append(0.0 if counts[g] < 2 or sigma <= REL_SPREAD * scales[g] else (v - means[g]) / (sigma + eps))
    return out
