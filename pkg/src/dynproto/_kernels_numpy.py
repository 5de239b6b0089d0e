"""Pure-numpy reference kernels.

These are the fallback implementations of the hot inner loops; the numba
twins in _kernels_numba.py must stay drop-in compatible with them. All
accumulation is float64 regardless of input storage dtype.
"""

import numpy as np


def ratio_scores(cos_id, cos_ood, tau, k_coef):
    """Prototype score A / (A + K*B) per row from precomputed cosine matrices.

    cos_id: (N, C) cosines to ID prototypes; cos_ood: (N, M) cosines to OOD
    prototypes, M may be 0. Overflow-safe: exponents are shifted by the row
    maximum before exponentiation, which leaves the ratio unchanged.
    """
    a = np.asarray(cos_id, dtype=np.float64) / tau
    n = a.shape[0]
    if cos_ood is None or cos_ood.shape[1] == 0:
        return np.ones(n, dtype=np.float64)
    b = np.asarray(cos_ood, dtype=np.float64) / tau
    hi = np.maximum(a.max(axis=1), b.max(axis=1))
    big_a = np.exp(a - hi[:, None]).sum(axis=1)
    big_b = np.exp(b - hi[:, None]).sum(axis=1)
    return big_a / (big_a + k_coef * big_b)


def softmax_max(rows):
    """Maximum softmax probability per row, overflow-safe."""
    x = np.asarray(rows, dtype=np.float64)
    hi = x.max(axis=1)
    denom = np.exp(x - hi[:, None]).sum(axis=1)
    return 1.0 / denom


def birch_assign(feats, threshold, max_subclusters):
    """Single-pass flat CF clustering in input order.

    Each feature joins the nearest-centroid subcluster when the post-merge
    radius stays <= threshold, otherwise opens a new subcluster; once
    max_subclusters exist, it joins the nearest one unconditionally.

    Returns (labels, counts, linear_sums, squared_sums) where the CF arrays
    are trimmed to the number of subclusters actually created.
    """
    x = np.asarray(feats, dtype=np.float64)
    n, d = x.shape
    cap = min(max_subclusters, n)
    labels = np.empty(n, dtype=np.int64)
    counts = np.zeros(cap, dtype=np.int64)
    ls = np.zeros((cap, d), dtype=np.float64)
    ss = np.zeros(cap, dtype=np.float64)
    t_sq = threshold * threshold
    n_sub = 0
    for i in range(n):
        v = x[i]
        v_sq = float(v @ v)
        best = -1
        if n_sub > 0:
            centroids = ls[:n_sub] / counts[:n_sub, None]
            diff = centroids - v
            d2 = np.einsum("ij,ij->i", diff, diff)
            best = int(np.argmin(d2))
        join = False
        if best >= 0:
            n2 = counts[best] + 1
            merged = ls[best] + v
            r_sq = (ss[best] + v_sq) / n2 - float(merged @ merged) / (n2 * n2)
            join = r_sq <= t_sq
        if not join and n_sub < cap:
            best = n_sub
            n_sub += 1
        labels[i] = best
        counts[best] += 1
        ls[best] += v
        ss[best] += v_sq
    return labels, counts[:n_sub], ls[:n_sub], ss[:n_sub]
