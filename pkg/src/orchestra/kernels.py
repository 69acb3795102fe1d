"""Kernel dispatch: the compiled extension when built, else the pure-Python twin.

Set ``ORCHESTRA_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os
from array import array
from typing import Sequence

from . import _kernels_py

try:
    if os.environ.get("ORCHESTRA_PURE_PYTHON") == "1":
        raise ImportError("pure Python requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def clipped_terms(
    logp_new: Sequence[float], logp_old: Sequence[float], logp_ref: Sequence[float], adv: Sequence[float], eps: float
) -> tuple[list[float], list[float], list[float]]:
    """Per-token clipped contribution, importance ratio and KL estimate."""
    if _compiled is None:
        return _kernels_py.clipped_terms(logp_new, logp_old, logp_ref, adv, eps)
    c, r, k = _compiled.clipped_terms(
        array("d", logp_new), array("d", logp_old), array("d", logp_ref), array("d", adv), float(eps)
    )
    return c.tolist(), r.tolist(), k.tolist()


def standardize_groups(values: Sequence[float], group_ids: Sequence[int], n_groups: int, eps: float) -> list[float]:
    """Population z-scores within groups; singletons and zero-spread groups give 0."""
    if _compiled is None:
        return _kernels_py.standardize_groups(values, group_ids, n_groups, eps)
    return _compiled.standardize_groups(array("d", values), array("l", group_ids), n_groups, float(eps)).tolist()
