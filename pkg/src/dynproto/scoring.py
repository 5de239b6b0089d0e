"""Pure score functions.

Base detectors (MSP, MCM, Energy), the prototype score with OOD coefficient
K (K=1 recovers the plain cumulative-ID-probability form), and class
prediction. Every function here is a pure mapping over immutable inputs and
is safe to call concurrently. Higher score always means more ID-like,
including for Energy.

Scalar operations carry a batched twin (plural name) used by the pipeline;
the scalar form simply delegates to it.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import (
    DimensionMismatch,
    InvalidConfig,
    ZeroVector,
)

KIND_ID = "id"
KIND_OOD = "ood"

NORM_ATOL = 1e-6


def normalize(v):
    """Scale a vector to unit Euclidean norm, preserving direction."""
    x = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(x))
    if n == 0.0:
        raise ZeroVector("cannot normalize an all-zero vector")
    return x / n


def normalize_rows(rows):
    """Row-wise normalize; rejects any all-zero row."""
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D array, got shape {x.shape}")
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ZeroVector(f"all-zero feature row at index {int(bad[0])}")
    return x / norms[:, None]


def cosine(a, b):
    """Dot product of two unit vectors, clamped to [-1, 1] against rounding."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatch(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(np.clip(x @ y, -1.0, 1.0))


@dataclass(frozen=True)
class ScoreConfig:
    """Temperature and OOD-term coefficient for the prototype score."""

    tau: float = 1.0
    k_coef: float = 5.0

    def __post_init__(self):
        if not (self.tau > 0):
            raise InvalidConfig(f"tau must be > 0, got {self.tau}")
        if not (self.k_coef > 0):
            raise InvalidConfig(f"k_coef must be > 0, got {self.k_coef}")


@dataclass(frozen=True)
class Prototype:
    """Unit-norm representative embedding.

    source_class is the ID class whose cache produced the prototype; for ID
    prototypes it is the class itself.
    """

    vector: np.ndarray
    kind: str
    source_class: int
    member_count: int = 1

    def __post_init__(self):
        if self.kind not in (KIND_ID, KIND_OOD):
            raise InvalidConfig(f"unknown prototype kind {self.kind!r}")
        if self.member_count < 1:
            raise InvalidConfig("member_count must be >= 1")
        v = np.asarray(self.vector, dtype=np.float64)
        if abs(float(np.linalg.norm(v)) - 1.0) > NORM_ATOL:
            raise InvalidConfig("prototype vector must be unit-norm")
        object.__setattr__(self, "vector", v)


class PrototypeBank:
    """C ID prototypes (ordered by class) plus M >= 0 dynamic OOD prototypes.

    The stacked float64 matrices are built once at construction; banks are
    immutable and shared read-only across threads.
    """

    def __init__(self, id_protos, ood_protos=()):
        id_protos = list(id_protos)
        ood_protos = list(ood_protos)
        if not id_protos:
            raise InvalidConfig("a bank needs at least one ID prototype")
        for c, p in enumerate(id_protos):
            if p.kind != KIND_ID:
                raise InvalidConfig(f"id_protos[{c}] has kind {p.kind!r}")
            if p.source_class != c:
                raise InvalidConfig(
                    f"id_protos[{c}] claims source_class {p.source_class}")
        for p in ood_protos:
            if p.kind != KIND_OOD:
                raise InvalidConfig("ood_protos entries must have kind 'ood'")
        dim = id_protos[0].vector.shape[0]
        for p in id_protos + ood_protos:
            if p.vector.shape[0] != dim:
                raise DimensionMismatch("prototype dimensions disagree")
        self.id_protos = tuple(id_protos)
        self.ood_protos = tuple(ood_protos)
        self.dim = dim
        self.id_matrix = np.ascontiguousarray(
            np.stack([p.vector for p in id_protos]))
        if ood_protos:
            self.ood_matrix = np.ascontiguousarray(
                np.stack([p.vector for p in ood_protos]))
        else:
            self.ood_matrix = np.zeros((0, dim), dtype=np.float64)

    @property
    def n_classes(self):
        return len(self.id_protos)

    @property
    def n_ood(self):
        return len(self.ood_protos)

    def with_ood(self, ood_protos):
        """A new bank sharing the ID prototypes with a fresh OOD set."""
        return PrototypeBank(self.id_protos, ood_protos)


def _check_batch(rows, dim, what):
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimensionMismatch(
            f"{what}: expected shape (*, {dim}), got {x.shape}")
    return x


def prototype_scores(rows, bank, cfg):
    """Batched prototype score A / (A + K*B); exactly 1.0 when M = 0.

    A sums exp(cos/tau) over the ID prototypes, B over the OOD prototypes.
    Overflow-safe down to tau = 0.005 via a shift by the row maximum.
    """
    if not isinstance(cfg, ScoreConfig):
        cfg = ScoreConfig(*cfg)
    x = _check_batch(rows, bank.dim, "prototype_scores")
    cos_id = x @ bank.id_matrix.T
    cos_ood = x @ bank.ood_matrix.T if bank.n_ood else None
    return backend.kernels().ratio_scores(cos_id, cos_ood, cfg.tau, cfg.k_coef)


def prototype_score(v, bank, cfg):
    """Scalar form of prototype_scores for a single feature vector."""
    return float(prototype_scores(np.asarray(v)[None, :], bank, cfg)[0])


def msp_scores(logits):
    """Maximum softmax probability per row, overflow-safe."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2 or z.shape[1] < 1:
        raise DimensionMismatch(f"logits must be (*, C), got {z.shape}")
    return backend.kernels().softmax_max(z)


def msp_score(logits):
    return float(msp_scores(np.asarray(logits)[None, :])[0])


def mcm_scores(rows, anchors, tau):
    """Max softmax over cosine similarities to the anchors, temperature tau.

    Identical to msp_scores applied to the logit rows cos(v, anchor_i)/tau.
    """
    if not (tau > 0):
        raise InvalidConfig(f"tau must be > 0, got {tau}")
    a = np.asarray(anchors, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch("anchors must be a (C, D) matrix")
    x = _check_batch(rows, a.shape[1], "mcm_scores")
    return backend.kernels().softmax_max((x @ a.T) / tau)


def mcm_score(v, anchors, tau):
    return float(mcm_scores(np.asarray(v)[None, :], anchors, tau)[0])


def energy_scores(logits, temperature=1.0):
    """temperature * logsumexp(logits / temperature); higher means more ID."""
    if not (temperature > 0):
        raise InvalidConfig(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    scaled = z / temperature
    hi = scaled.max(axis=1)
    return temperature * (hi + np.log(np.exp(scaled - hi[:, None]).sum(axis=1)))


def energy_score(logits, temperature=1.0):
    return float(energy_scores(np.asarray(logits)[None, :], temperature)[0])


def predict_classes(rows, bank, logits=None):
    """Predicted ID class per row: logit argmax when logits are given,
    otherwise the nearest ID prototype by cosine. Ties break to the lowest
    class index."""
    if logits is not None:
        z = np.asarray(logits, dtype=np.float64)
        if z.ndim == 1:
            z = z[None, :]
        if z.shape[1] != bank.n_classes:
            raise DimensionMismatch(
                f"logits have {z.shape[1]} classes, bank has {bank.n_classes}")
        return np.argmax(z, axis=1)
    x = _check_batch(rows, bank.dim, "predict_classes")
    return np.argmax(x @ bank.id_matrix.T, axis=1)


def predict_class(v, bank, logits=None):
    lg = None if logits is None else np.asarray(logits)[None, :]
    return int(predict_classes(np.asarray(v)[None, :], bank, lg)[0])
