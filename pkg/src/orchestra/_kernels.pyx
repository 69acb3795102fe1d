# cython: language_level=3
"""Compiled loops for the clipped surrogate and cohort standardization."""

from libc.math cimport exp, fabs, log, sqrt, isfinite
from cpython cimport array

cdef double REL_SPREAD = 1e-12
import array


def clipped_terms(double[::1] logp_new, double[::1] logp_old, double[::1] logp_ref, double[::1] adv, double eps):
    cdef Py_ssize_t n = logp_new.shape[0], i
    if logp_old.shape[0] != n or logp_ref.shape[0] != n or adv.shape[0] != n:
        raise ValueError("length mismatch")
    cdef array.array contrib = array.array("d", [0.0]) * n
    cdef array.array ratio = array.array("d", [0.0]) * n
    cdef array.array kl = array.array("d", [0.0]) * n
    cdef double[::1] c = contrib, r = ratio, k = kl
    cdef double rho, clipped, a, unclipped, rref
    for i in range(n):
        if not (isfinite(logp_new[i]) and isfinite(logp_old[i]) and isfinite(logp_ref[i])):
            raise ValueError("non-finite log-probability")
        rho = exp(logp_new[i] - logp_old[i])
        clipped = rho
        if clipped < 1.0 - eps:
            clipped = 1.0 - eps
        elif clipped > 1.0 + eps:
            clipped = 1.0 + eps
        a = adv[i]
        unclipped = rho * a
        clipped = clipped * a
        c[i] = -(unclipped if unclipped < clipped else clipped)
        r[i] = rho
        rref = exp(logp_ref[i] - logp_new[i])
        k[i] = rref - log(rref) - 1.0
    return contrib, ratio, kl


def standardize_groups(double[::1] values, long[::1] group_ids, Py_ssize_t n_groups, double eps):
    cdef Py_ssize_t n = values.shape[0], i, g
    if group_ids.shape[0] != n:
        raise ValueError("length mismatch")
    cdef array.array out = array.array("d", [0.0]) * n
    cdef array.array sums = array.array("d", [0.0]) * n_groups
    cdef array.array sq = array.array("d", [0.0]) * n_groups
    cdef array.array counts = array.array("l", [0]) * n_groups
    cdef array.array scales = array.array("d", [0.0]) * n_groups
    cdef double[::1] o = out, s = sums, q = sq, m = scales
    cdef long[::1] cnt = counts
    cdef double d, sigma
    for i in range(n):
        g = group_ids[i]
        if fabs(values[i]) > m[g]:
            m[g] = fabs(values[i])
        s[g] += values[i]
        cnt[g] += 1
    for g in range(n_groups):
        if cnt[g] > 0:
            s[g] /= cnt[g]
    for i in range(n):
        g = group_ids[i]
        d = values[i] - s[g]
        q[g] += d * d
    for i in range(n):
        g = group_ids[i]
        if cnt[g] < 2:
            continue
        sigma = sqrt(q[g] / cnt[g])
        if sigma <= REL_SPREAD * m[g]:
            continue  # spread at rounding level is zero spread
        o[i] = (values[i] - s[g]) / (sigma + eps)
    return out
