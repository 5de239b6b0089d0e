"""Numba-compiled twins of the kernels in _kernels_numpy.py.

Importing this module requires numba. Compilation is lazy (first call) and
cached on disk; parallel and fastmath stay off so results are reproducible
and bit-stable across runs and thread counts.
"""

import numpy as np
from numba import njit


@njit(cache=True, parallel=False, fastmath=False)
def _ratio_scores_impl(cos_id, cos_ood, tau, k_coef):
    n, c = cos_id.shape
    m = cos_ood.shape[1]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        hi = cos_id[i, 0] / tau
        for j in range(1, c):
            e = cos_id[i, j] / tau
            if e > hi:
                hi = e
        for j in range(m):
            e = cos_ood[i, j] / tau
            if e > hi:
                hi = e
        big_a = 0.0
        for j in range(c):
            big_a += np.exp(cos_id[i, j] / tau - hi)
        big_b = 0.0
        for j in range(m):
            big_b += np.exp(cos_ood[i, j] / tau - hi)
        out[i] = big_a / (big_a + k_coef * big_b)
    return out


def ratio_scores(cos_id, cos_ood, tau, k_coef):
    a = np.ascontiguousarray(cos_id, dtype=np.float64)
    n = a.shape[0]
    if cos_ood is None or cos_ood.shape[1] == 0:
        return np.ones(n, dtype=np.float64)
    b = np.ascontiguousarray(cos_ood, dtype=np.float64)
    return _ratio_scores_impl(a, b, float(tau), float(k_coef))


@njit(cache=True, parallel=False, fastmath=False)
def _softmax_max_impl(rows):
    n, c = rows.shape
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        hi = rows[i, 0]
        for j in range(1, c):
            if rows[i, j] > hi:
                hi = rows[i, j]
        denom = 0.0
        for j in range(c):
            denom += np.exp(rows[i, j] - hi)
        out[i] = 1.0 / denom
    return out


def softmax_max(rows):
    return _softmax_max_impl(np.ascontiguousarray(rows, dtype=np.float64))


@njit(cache=True, parallel=False, fastmath=False)
def _birch_assign_impl(x, t_sq, cap):
    n, d = x.shape
    labels = np.empty(n, dtype=np.int64)
    counts = np.zeros(cap, dtype=np.int64)
    ls = np.zeros((cap, d), dtype=np.float64)
    ss = np.zeros(cap, dtype=np.float64)
    n_sub = 0
    for i in range(n):
        v_sq = 0.0
        for k in range(d):
            v_sq += x[i, k] * x[i, k]
        best = -1
        best_d2 = np.inf
        for s in range(n_sub):
            d2 = 0.0
            for k in range(d):
                diff = ls[s, k] / counts[s] - x[i, k]
                d2 += diff * diff
            if d2 < best_d2:
                best_d2 = d2
                best = s
        join = False
        if best >= 0:
            n2 = counts[best] + 1
            merged_sq = 0.0
            for k in range(d):
                merged = ls[best, k] + x[i, k]
                merged_sq += merged * merged
            r_sq = (ss[best] + v_sq) / n2 - merged_sq / (n2 * n2)
            join = r_sq <= t_sq
        if not join and n_sub < cap:
            best = n_sub
            n_sub += 1
        labels[i] = best
        counts[best] += 1
        for k in range(d):
            ls[best, k] += x[i, k]
        ss[best] += v_sq
    return labels, counts[:n_sub], ls[:n_sub], ss[:n_sub]


def birch_assign(feats, threshold, max_subclusters):
    x = np.ascontiguousarray(feats, dtype=np.float64)
    cap = min(int(max_subclusters), x.shape[0])
    return _birch_assign_impl(x, float(threshold) * float(threshold), cap)
