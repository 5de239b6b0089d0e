"""Coarse OOD pattern capturing.

Per-class bounded caches of suspicious features, the cold-start admission
threshold theta (a percentile of ID training scores), the per-batch adaptive
threshold alpha (variance-minimizing split of the batch's score histogram),
and the two cache update policies (FIFO, RH).

Caches are single-writer: within one batch all insertions happen in sample
order on one thread after scoring completes; prototype rebuilds read them
only between batches.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    ClassOutOfRange,
    EmptyInput,
    InvalidConfig,
    MissingAlpha,
    OutOfRange,
    SeedOverflow,
)

POLICY_FIFO = "fifo"
POLICY_RH = "rh"
POLICIES = (POLICY_FIFO, POLICY_RH)

INIT_EMPTY = "empty"
INIT_SEEDED = "seeded"
INIT_STRATEGIES = (INIT_EMPTY, INIT_SEEDED)

PHASE_COLD_START = "cold_start"
PHASE_ADAPTIVE = "adaptive"

# Seeded entries get admission score +inf so RH replaces them before any
# real detection (RH replaces the maximum-admission entry).
SEED_ADMISSION_SCORE = np.inf


@dataclass
class Thresholds:
    """theta: cold-start admission threshold; beta: the percentile that
    produced it; alpha: per-batch adaptive threshold, absent until first
    computed."""

    theta: float
    beta: float
    alpha: Optional[float] = None


class ClassCache:
    """Bounded queue of (feature, insertion sequence number, admission score)
    for one ID class."""

    def __init__(self, capacity):
        if capacity < 1:
            raise InvalidConfig(f"cache capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.features = []
        self.seqs = []
        self.scores = []

    def __len__(self):
        return len(self.features)

    def insert_fifo(self, v, score, seq):
        self.features.append(v)
        self.seqs.append(seq)
        self.scores.append(score)
        if len(self.features) > self.capacity:
            oldest = self.seqs.index(min(self.seqs))
            del self.features[oldest]
            del self.seqs[oldest]
            del self.scores[oldest]

    def insert_rh(self, v, score, seq):
        if len(self.features) < self.capacity:
            self.features.append(v)
            self.seqs.append(seq)
            self.scores.append(score)
            return
        worst = self.scores.index(max(self.scores))
        if score < self.scores[worst]:
            self.features[worst] = v
            self.seqs[worst] = seq
            self.scores[worst] = score

    def feature_matrix(self):
        """Cached features stacked in storage order, (n, D) float64."""
        if not self.features:
            raise EmptyInput("cache is empty")
        return np.stack(self.features).astype(np.float64, copy=False)


class CacheBank:
    """Exactly C class caches sharing one capacity and one update policy."""

    def __init__(self, n_classes, capacity, policy):
        if n_classes < 1:
            raise InvalidConfig(f"need at least one class, got {n_classes}")
        if policy not in POLICIES:
            raise InvalidConfig(f"unknown cache policy {policy!r}")
        self.policy = policy
        self.capacity = capacity
        self.caches = [ClassCache(capacity) for _ in range(n_classes)]

    @property
    def n_classes(self):
        return len(self.caches)

    def __len__(self):
        return sum(len(c) for c in self.caches)

    def any_nonempty(self):
        return any(len(c) > 0 for c in self.caches)


def calibrate_theta(id_train_scores, beta):
    """Nearest-rank percentile of the ID training score distribution.

    Sort ascending and return the element at rank ceil(beta/100 * N),
    1-based. The epsilon inside the ceiling guards against float products
    like 0.05*100 landing just above the exact integer.
    """
    s = np.asarray(id_train_scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise EmptyInput("calibrate_theta needs at least one score")
    if not (0.0 < beta < 100.0):
        raise OutOfRange(f"beta must be in (0, 100), got {beta}")
    if not np.all(np.isfinite(s)):
        raise OutOfRange("calibration scores must be finite")
    rank = int(np.ceil(beta * s.size / 100.0 - 1e-9))
    rank = min(max(rank, 1), s.size)
    return float(np.sort(s)[rank - 1])


def _split_terms(scores, alpha):
    s = np.asarray(scores, dtype=np.float64).ravel()
    low = s[s <= alpha]
    high = s[s > alpha]
    if low.size == 0 or high.size == 0:
        raise EmptyInput("split leaves an empty group")
    return low, high


def literal_split_objective(scores, alpha):
    """The minimized objective: both brackets sum over the WHOLE batch, each
    normalized by one group's count — (1/n_hi)*sum_all(s - mu_hi)^2 +
    (1/n_lo)*sum_all(s - mu_lo)^2."""
    low, high = _split_terms(scores, alpha)
    s = np.concatenate([low, high])
    mu_lo = low.mean()
    mu_hi = high.mean()
    return float(((s - mu_hi) ** 2).sum() / high.size
                 + ((s - mu_lo) ** 2).sum() / low.size)


def split_variance_objective(scores, alpha):
    """Within-group reading for comparison: the sum of the two population
    variances. Zero exactly when each side of the split is a point mass."""
    low, high = _split_terms(scores, alpha)
    return float(low.var() + high.var())


def adaptive_alpha(batch_scores, fallback):
    """Variance-minimizing threshold over one batch's scores in (0, 1).

    Candidates are the midpoints between consecutive distinct sorted scores;
    the literal objective (see literal_split_objective) is evaluated for each
    split via prefix sums in O(N log N); ties break to the smallest
    candidate. Fewer than 2 distinct scores: returns `fallback`.
    """
    s = np.asarray(batch_scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise EmptyInput("adaptive_alpha needs at least one score")
    if np.any(s <= 0.0) or np.any(s >= 1.0):
        raise OutOfRange("batch scores must lie strictly inside (0, 1)")
    s = np.sort(s)
    boundaries = np.flatnonzero(s[1:] != s[:-1]) + 1  # split sizes n0
    if boundaries.size == 0:
        return float(fallback)
    p = np.cumsum(s)
    q = np.cumsum(s * s)
    n = s.size
    n0 = boundaries.astype(np.float64)
    n1 = n - n0
    sum0 = p[boundaries - 1]
    sum1 = p[-1] - sum0
    w0 = q[boundaries - 1] - sum0 * sum0 / n0
    w1 = (q[-1] - q[boundaries - 1]) - sum1 * sum1 / n1
    delta = sum1 / n1 - sum0 / n0
    obj = (1.0 / n0 + 1.0 / n1) * (w0 + w1) \
        + (n0 / n1 + n1 / n0) * delta * delta
    k = boundaries[int(np.argmin(obj))]
    return float(0.5 * (s[k - 1] + s[k]))


def cache_insert(bank, class_idx, v, score, seq):
    """Admit one feature into its class cache under the bank's policy.

    FIFO: append; over capacity, the smallest sequence number is evicted.
    RH: under capacity append; at capacity, replace the entry with the
    maximum admission score only if the new score is lower, else discard.
    Returns the bank (mutated in place; single-writer contract).
    """
    if not (0 <= class_idx < bank.n_classes):
        raise ClassOutOfRange(
            f"class {class_idx} outside [0, {bank.n_classes})")
    cache = bank.caches[class_idx]
    if bank.policy == POLICY_FIFO:
        cache.insert_fifo(v, score, seq)
    else:
        cache.insert_rh(v, score, seq)
    return bank


def init_caches(strategy, n_classes, capacity, policy, seed_features=None):
    """Build the cache bank, empty or pre-filled.

    Seeded entries get sequence numbers -k..-1 (evicted before any real
    entry under FIFO) and admission score +inf (replaced before any real
    detection under RH).
    """
    if strategy not in INIT_STRATEGIES:
        raise InvalidConfig(f"unknown cache init strategy {strategy!r}")
    bank = CacheBank(n_classes, capacity, policy)
    if strategy == INIT_EMPTY:
        return bank
    if seed_features is None:
        raise InvalidConfig("seeded init needs per-class seed features")
    if len(seed_features) != n_classes:
        raise InvalidConfig(
            f"need {n_classes} seed lists, got {len(seed_features)}")
    for c, seeds in enumerate(seed_features):
        seeds = list(seeds)
        if len(seeds) > capacity:
            raise SeedOverflow(
                f"class {c}: {len(seeds)} seeds exceed capacity {capacity}")
        k = len(seeds)
        for i, v in enumerate(seeds):
            cache = bank.caches[c]
            cache.features.append(np.asarray(v, dtype=np.float64))
            cache.seqs.append(i - k)
            cache.scores.append(SEED_ADMISSION_SCORE)
    return bank


def should_cache(phase, base_score, dyn_score, thresholds):
    """Admission test: cold start compares the base score against theta,
    the adaptive phase compares the dynamic score against alpha. Both
    inequalities are strict, so a score equal to its threshold is NOT
    admitted."""
    if phase == PHASE_COLD_START:
        return base_score < thresholds.theta
    if phase == PHASE_ADAPTIVE:
        if thresholds.alpha is None:
            raise MissingAlpha("adaptive admission before alpha was computed")
        return dyn_score < thresholds.alpha
    raise InvalidConfig(f"unknown phase {phase!r}")
