"""Evaluation metrics.

ID is the positive class and higher scores mean more ID-like. FPR95 is the
false-positive rate on OOD at the largest threshold that still keeps ID
true-positive rate >= 95%; AUROC is the Mann-Whitney probability that a
random ID sample outscores a random OOD sample, ties counting half. Both
are exact (rank arithmetic on half-integers stays exact in float64), not
curve approximations.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InsufficientData
from .scoring import normalize_rows

DECISION_ID = "id"
DECISION_OOD = "ood"


@dataclass(frozen=True)
class ScoredSample:
    """One evaluated sample: emitted score, ground truth, and (optionally)
    the class the model predicted for it."""

    score: float
    is_id: bool
    predicted_class: Optional[int] = None


@dataclass(frozen=True)
class EvalReport:
    fpr95: float
    auroc: float
    n_id: int
    n_ood: int
    gamma95: float


def decide(score, gamma):
    """ID iff score >= gamma (ties count as ID)."""
    return DECISION_ID if score >= gamma else DECISION_OOD


def _check_groups(id_scores, ood_scores):
    ids = np.asarray(id_scores, dtype=np.float64).ravel()
    oods = np.asarray(ood_scores, dtype=np.float64).ravel()
    if ids.size == 0 or oods.size == 0:
        raise InsufficientData(
            f"need >= 1 of each: n_id={ids.size}, n_ood={oods.size}")
    return ids, oods


def fpr_at_tpr(id_scores, ood_scores, tpr_target=0.95):
    """(fpr, gamma): gamma is the largest threshold with ID TPR >= target.

    That threshold is the k-th smallest ID score with
    k = n - ceil(tpr_target * n) + 1; the epsilon inside the ceiling guards
    against float products overshooting an exact integer.
    """
    ids, oods = _check_groups(id_scores, ood_scores)
    n = ids.size
    need = int(np.ceil(tpr_target * n - 1e-9))
    need = min(max(need, 1), n)
    gamma = float(np.sort(ids)[n - need])
    fpr = float(np.mean(oods >= gamma))
    return fpr, gamma


def _average_ranks(values):
    order = np.argsort(values, kind="stable")
    ordered = values[order]
    n = values.size
    starts = np.flatnonzero(np.r_[True, ordered[1:] != ordered[:-1]])
    ends = np.r_[starts[1:], n]
    avg = (starts + ends + 1) / 2.0  # 1-based mean rank of each tie run
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auroc(id_scores, ood_scores):
    """P(ID score > OOD score) + 0.5 * P(tie), via average ranks."""
    ids, oods = _check_groups(id_scores, ood_scores)
    ranks = _average_ranks(np.concatenate([ids, oods]))
    n_id, n_ood = ids.size, oods.size
    u = ranks[:n_id].sum() - n_id * (n_id + 1) / 2.0
    return float(u / (n_id * n_ood))


def evaluate(id_scores, ood_scores, tpr_target=0.95):
    """Full report for one ID/OOD score split."""
    ids, oods = _check_groups(id_scores, ood_scores)
    fpr, gamma = fpr_at_tpr(ids, oods, tpr_target)
    return EvalReport(fpr95=fpr, auroc=auroc(ids, oods),
                      n_id=int(ids.size), n_ood=int(oods.size),
                      gamma95=gamma)


def similarity_delta(per_class_groups):
    """Per-class cohesion statistic.

    per_class_groups maps a class index to (detected_ood, undetected_ood,
    id_features) row matrices. Delta_c = mean cosine between detected and
    undetected OOD features minus mean cosine between detected OOD and ID
    features; classes missing any group are skipped (that is the defined
    behavior, not an error). Rows are renormalized defensively so the means
    are true cosines.
    """
    deltas = {}
    for c, (detected, undetected, id_feats) in per_class_groups.items():
        d = np.asarray(detected, dtype=np.float64)
        u = np.asarray(undetected, dtype=np.float64)
        g = np.asarray(id_feats, dtype=np.float64)
        if d.size == 0 or u.size == 0 or g.size == 0:
            continue
        d = normalize_rows(d)
        u = normalize_rows(u)
        g = normalize_rows(g)
        ood_ood = float((d @ u.T).mean())
        ood_id = float((d @ g.T).mean())
        deltas[int(c)] = ood_ood - ood_id
    return deltas
