"""Fine-grained OOD pattern refinement.

Clusters each class cache into subclusters and averages them into OOD
prototypes; also builds the per-class ID prototypes from training features.

Clustering is a single-level pass over clustering features (count, linear
sum, squared-norm sum): caches hold at most a few dozen vectors, so a flat
subcluster list with the radius-absorption rule is exact enough and fully
deterministic — no tree levels, no node splitting, no refinement pass.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import (
    DimensionMismatch,
    EmptyInput,
    InvalidConfig,
    MissingClass,
)
from .scoring import KIND_ID, KIND_OOD, Prototype, normalize, normalize_rows

log = logging.getLogger(__name__)

STRATEGY_BIRCH = "birch"
STRATEGY_AP = "ap"
STRATEGY_NONE = "none"  # every cached sample is its own prototype
STRATEGIES = (STRATEGY_BIRCH, STRATEGY_AP, STRATEGY_NONE)

DEFAULT_RADIUS_T = 0.5
DEFAULT_MAX_SUBCLUSTERS = 50


@dataclass
class ClusteringFeature:
    """Subcluster summary: member count, linear sum, sum of squared norms."""

    n: int
    ls: np.ndarray
    ss: float

    def __post_init__(self):
        if self.n < 1:
            raise InvalidConfig("a clustering feature needs n >= 1")
        self.ls = np.asarray(self.ls, dtype=np.float64)
        if self.ss < float(self.ls @ self.ls) / self.n - 1e-9:
            raise InvalidConfig("ss violates the Cauchy-Schwarz lower bound")

    @property
    def centroid(self):
        return self.ls / self.n


def cf_radius_after_merge(cf, v):
    """Radius the subcluster would have if v were absorbed; clamped at 0."""
    x = np.asarray(v, dtype=np.float64)
    if x.shape != cf.ls.shape:
        raise DimensionMismatch(
            f"dimension mismatch: {x.shape} vs {cf.ls.shape}")
    n2 = cf.n + 1
    ls2 = cf.ls + x
    ss2 = cf.ss + float(x @ x)
    r_sq = ss2 / n2 - float(ls2 @ ls2) / (n2 * n2)
    return float(np.sqrt(max(r_sq, 0.0)))


def birch_partition(features, radius_threshold, max_subclusters,
                    return_labels=False):
    """Single-pass flat CF clustering in input order.

    A feature joins the Euclidean-nearest subcluster when the post-merge
    radius stays <= radius_threshold, else opens a new subcluster; once
    max_subclusters subclusters exist it joins the nearest unconditionally.
    Deterministic for a fixed input order.
    """
    if not (radius_threshold > 0):
        raise InvalidConfig(
            f"radius threshold must be > 0, got {radius_threshold}")
    if max_subclusters < 1:
        raise InvalidConfig("max_subclusters must be >= 1")
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInput("birch_partition needs at least one feature row")
    labels, counts, ls, ss = backend.kernels().birch_assign(
        x, radius_threshold, max_subclusters)
    cfs = [ClusteringFeature(int(counts[i]), ls[i], float(ss[i]))
           for i in range(counts.shape[0])]
    if return_labels:
        return cfs, labels
    return cfs


def aggregate_prototypes(subclusters, source_class):
    """One OOD prototype per subcluster: the renormalized centroid.

    A zero centroid (possible for antipodal members) cannot be normalized;
    that subcluster is dropped and a warning is logged — callers can count
    drops as len(subclusters) - len(result).
    """
    subclusters = list(subclusters)
    if not subclusters:
        raise EmptyInput("aggregate_prototypes needs subclusters")
    protos = []
    for cf in subclusters:
        centroid = cf.centroid
        norm = float(np.linalg.norm(centroid))
        if norm == 0.0:
            log.warning("dropping zero-centroid subcluster (class %d, n=%d)",
                        source_class, cf.n)
            continue
        protos.append(Prototype(vector=centroid / norm, kind=KIND_OOD,
                                source_class=source_class,
                                member_count=cf.n))
    return protos


def build_id_prototypes(train_features_per_class):
    """Per class: mean of the unit-normalized training features,
    renormalized. One prototype per class, ordered by class index."""
    protos = []
    for c, rows in enumerate(train_features_per_class):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise MissingClass(f"class {c} has no training features")
        mean = normalize_rows(rows).mean(axis=0)
        protos.append(Prototype(vector=normalize(mean), kind=KIND_ID,
                                source_class=c, member_count=rows.shape[0]))
    if not protos:
        raise MissingClass("no classes supplied")
    return protos


def cache_prototypes(cache, source_class, strategy,
                     radius_threshold=DEFAULT_RADIUS_T,
                     max_subclusters=DEFAULT_MAX_SUBCLUSTERS):
    """OOD prototypes for one class cache under the chosen strategy.

    Returns (prototypes, dropped) where dropped counts zero-centroid
    subclusters that could not be turned into prototypes.
    """
    if strategy not in STRATEGIES:
        raise InvalidConfig(f"unknown cluster strategy {strategy!r}")
    if len(cache) == 0:
        return [], 0
    feats = cache.feature_matrix()
    if strategy == STRATEGY_BIRCH:
        cfs = birch_partition(feats, radius_threshold, max_subclusters)
    elif strategy == STRATEGY_AP:
        cfs = [ClusteringFeature(
            n=feats.shape[0], ls=feats.sum(axis=0),
            ss=float(np.einsum("ij,ij->", feats, feats)))]
    else:
        cfs = [ClusteringFeature(n=1, ls=feats[i], ss=float(feats[i] @ feats[i]))
               for i in range(feats.shape[0])]
    protos = aggregate_prototypes(cfs, source_class)
    return protos, len(cfs) - len(protos)


def rebuild_ood_prototypes(cache_bank, strategy,
                           radius_threshold=DEFAULT_RADIUS_T,
                           max_subclusters=DEFAULT_MAX_SUBCLUSTERS):
    """All OOD prototypes, caches visited in class order (empty caches
    contribute nothing)."""
    protos = []
    for c, cache in enumerate(cache_bank.caches):
        got, _ = cache_prototypes(cache, c, strategy,
                                  radius_threshold, max_subclusters)
        protos.extend(got)
    return protos
