"""Bit-exact file formats and synthetic data generation.

Feature files (DPFT): 20-byte little-endian header — magic "DPFT",
u16 version (1), u8 dtype code (1 = IEEE-754 binary32), u8 flags (bit 0 =
rows are pre-normalized), u32 dimension, u64 row count — followed by the
row-major float32 payload. Label files are bare little-endian int32 arrays
(value >= 0: ID class index, -1: OOD/unknown). Reports are JSON text.

Storage is 32-bit; every reduction over stored data accumulates in 64-bit.
"""

import dataclasses
import json
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    InvalidSpec,
    IOFailure,
    TruncatedPayload,
    UnsupportedVersion,
)
from .scoring import normalize, normalize_rows

MAGIC = b"DPFT"
VERSION = 1
DTYPE_FLOAT32 = 1
FLAG_NORMALIZED = 0x01

_HEADER = struct.Struct("<4sHBBIQ")


def write_features(path, rows, normalized=False):
    """Write a (N, D) matrix as a DPFT file; returns the row count."""
    x = np.asarray(rows)
    if x.ndim != 2:
        raise DimensionMismatch(f"features must be 2-D, got shape {x.shape}")
    n, d = x.shape
    if d < 1:
        raise DimensionMismatch("feature dimension must be >= 1")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_FLOAT32,
                          FLAG_NORMALIZED if normalized else 0, d, n)
    payload = np.ascontiguousarray(x, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as e:
        raise IOFailure(f"cannot write {path}: {e}") from e
    return n


def read_features(path):
    """Read a DPFT file; returns (rows float32 (N, D), normalized flag)."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as e:
        raise IOFailure(f"cannot read {path}: {e}") from e
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic(f"{path}: not a DPFT file")
    if len(buf) < _HEADER.size:
        raise TruncatedPayload(f"{path}: header truncated")
    _, version, dtype_code, flags, dim, count = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: version {version}, expected {VERSION}")
    if dtype_code != DTYPE_FLOAT32:
        raise UnsupportedVersion(f"{path}: dtype code {dtype_code} not supported")
    if dim < 1:
        raise TruncatedPayload(f"{path}: header dimension is 0")
    expected = count * dim * 4
    payload = buf[_HEADER.size:]
    if len(payload) != expected:
        raise TruncatedPayload(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    rows = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    return rows.copy(), bool(flags & FLAG_NORMALIZED)


def write_labels(path, labels):
    """Write a bare little-endian int32 array."""
    x = np.asarray(labels)
    if x.ndim != 1:
        raise DimensionMismatch(f"labels must be 1-D, got shape {x.shape}")
    try:
        with open(path, "wb") as fh:
            fh.write(np.ascontiguousarray(x, dtype="<i4").tobytes())
    except OSError as e:
        raise IOFailure(f"cannot write {path}: {e}") from e


def read_labels(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as e:
        raise IOFailure(f"cannot read {path}: {e}") from e
    if len(buf) % 4 != 0:
        raise TruncatedPayload(f"{path}: length {len(buf)} is not a multiple of 4")
    return np.frombuffer(buf, dtype="<i4").copy()


def check_pair(features, labels):
    """Row counts of a feature matrix and its label array must agree."""
    n = np.asarray(features).shape[0]
    k = np.asarray(labels).shape[0]
    if n != k:
        raise DimensionMismatch(f"{n} feature rows but {k} labels")


# ---------------------------------------------------------------------------
# Synthetic generation

@dataclass(frozen=True)
class IDClusterSpec:
    """One ID class: training pool plus test samples around one unit center."""

    train_count: int
    test_count: int
    spread: float
    center: Optional[Sequence[float]] = None


@dataclass(frozen=True)
class OODClusterSpec:
    """One OOD cluster. confusable_with places the center at angle_deg from
    that ID class's center; otherwise the center is random (or given)."""

    count: int
    spread: float
    confusable_with: Optional[int] = None
    angle_deg: float = 25.0
    center: Optional[Sequence[float]] = None


@dataclass(frozen=True)
class SyntheticSpec:
    dim: int
    id_clusters: Sequence[IDClusterSpec]
    ood_clusters: Sequence[OODClusterSpec]
    rng_seed: int
    logit_tau: float = 0.05


@dataclass
class SyntheticData:
    """Generated pools, float32 like their on-disk form.

    test_labels: ID class index or -1. test_sources: OOD cluster index or -1
    for ID rows. Logit rows are cosines to the true ID centers divided by
    the spec's logit temperature, so logit-based detectors run without any
    backbone.
    """

    train_features: np.ndarray
    train_labels: np.ndarray
    train_logits: np.ndarray
    test_features: np.ndarray
    test_labels: np.ndarray
    test_sources: np.ndarray
    test_logits: np.ndarray
    id_centers: np.ndarray
    ood_centers: np.ndarray


def _validate_spec(spec):
    if spec.dim < 1:
        raise InvalidSpec(f"dim must be >= 1, got {spec.dim}")
    if not spec.id_clusters:
        raise InvalidSpec("need at least one ID cluster")
    if not (spec.logit_tau > 0):
        raise InvalidSpec("logit_tau must be > 0")
    for i, c in enumerate(spec.id_clusters):
        if c.train_count < 1 or c.test_count < 1:
            raise InvalidSpec(f"ID cluster {i}: counts must be >= 1")
        if not (c.spread > 0):
            raise InvalidSpec(f"ID cluster {i}: spread must be > 0")
    for i, c in enumerate(spec.ood_clusters):
        if c.count < 1:
            raise InvalidSpec(f"OOD cluster {i}: count must be >= 1")
        if not (c.spread > 0):
            raise InvalidSpec(f"OOD cluster {i}: spread must be > 0")
        if c.confusable_with is not None and not (
                0 <= c.confusable_with < len(spec.id_clusters)):
            raise InvalidSpec(
                f"OOD cluster {i}: confusable_with {c.confusable_with} "
                f"outside [0, {len(spec.id_clusters)})")


def _random_unit(rng, dim):
    return normalize(rng.standard_normal(dim))


def _orthogonal_unit(rng, u):
    r = rng.standard_normal(u.shape[0])
    w = r - (r @ u) * u
    return normalize(w)


def _draw_cluster(rng, center, spread, count):
    pts = center[None, :] + spread * rng.standard_normal((count, center.shape[0]))
    return normalize_rows(pts)


def generate_synthetic(spec):
    """Deterministic pools for a spec: same seed, same bytes.

    Draw order is fixed (all centers, then train samples per ID cluster,
    then test samples per ID cluster, then OOD clusters) so the geometry
    never depends on sample counts downstream code asks for.
    """
    _validate_spec(spec)
    rng = np.random.default_rng(spec.rng_seed)
    dim = spec.dim

    id_centers = []
    for c in spec.id_clusters:
        if c.center is not None:
            id_centers.append(normalize(np.asarray(c.center, dtype=np.float64)))
        else:
            id_centers.append(_random_unit(rng, dim))
    id_centers = np.stack(id_centers)

    ood_centers = []
    for c in spec.ood_clusters:
        if c.center is not None:
            ood_centers.append(normalize(np.asarray(c.center, dtype=np.float64)))
        elif c.confusable_with is not None:
            u = id_centers[c.confusable_with]
            w = _orthogonal_unit(rng, u)
            a = np.deg2rad(c.angle_deg)
            ood_centers.append(np.cos(a) * u + np.sin(a) * w)
        else:
            ood_centers.append(_random_unit(rng, dim))
    ood_centers = np.stack(ood_centers) if ood_centers else np.zeros((0, dim))

    train_rows, train_labels = [], []
    for cls, c in enumerate(spec.id_clusters):
        train_rows.append(_draw_cluster(rng, id_centers[cls], c.spread,
                                        c.train_count))
        train_labels.append(np.full(c.train_count, cls, dtype=np.int32))

    test_rows, test_labels, test_sources = [], [], []
    for cls, c in enumerate(spec.id_clusters):
        test_rows.append(_draw_cluster(rng, id_centers[cls], c.spread,
                                       c.test_count))
        test_labels.append(np.full(c.test_count, cls, dtype=np.int32))
        test_sources.append(np.full(c.test_count, -1, dtype=np.int32))
    for src, c in enumerate(spec.ood_clusters):
        test_rows.append(_draw_cluster(rng, ood_centers[src], c.spread, c.count))
        test_labels.append(np.full(c.count, -1, dtype=np.int32))
        test_sources.append(np.full(c.count, src, dtype=np.int32))

    train = np.concatenate(train_rows)
    test = np.concatenate(test_rows)

    def logits_for(rows):
        return ((rows @ id_centers.T) / spec.logit_tau).astype(np.float32)

    return SyntheticData(
        train_features=train.astype(np.float32),
        train_labels=np.concatenate(train_labels),
        train_logits=logits_for(train),
        test_features=test.astype(np.float32),
        test_labels=np.concatenate(test_labels),
        test_sources=np.concatenate(test_sources),
        test_logits=logits_for(test),
        id_centers=id_centers,
        ood_centers=ood_centers,
    )


# Fixed acceptance dataset: 10 ID clusters, 5 OOD clusters of which three sit
# at 25 degrees from distinct ID centers (same spread as ID, so they are
# genuinely confusable) and two are far/random. Seed 7.
DESK64_SEED = 7
DESK64_SPREAD = 0.06
DESK64_LOGIT_TAU = 0.05
DESK64_CONFUSABLE_CLASSES = (0, 1, 2)


def desk64_spec():
    id_clusters = [IDClusterSpec(train_count=2000, test_count=500,
                                 spread=DESK64_SPREAD) for _ in range(10)]
    ood_clusters = [
        OODClusterSpec(count=1000, spread=DESK64_SPREAD, confusable_with=c)
        for c in DESK64_CONFUSABLE_CLASSES
    ] + [OODClusterSpec(count=1000, spread=DESK64_SPREAD) for _ in range(2)]
    return SyntheticSpec(dim=64, id_clusters=id_clusters,
                         ood_clusters=ood_clusters, rng_seed=DESK64_SEED,
                         logit_tau=DESK64_LOGIT_TAU)


# ---------------------------------------------------------------------------
# Reports

def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def report_text(report):
    """Canonical JSON text for a report object (dict/dataclass tree)."""
    return json.dumps(_jsonable(report), indent=2) + "\n"


def export_report(report, path):
    """Serialize a report to JSON. Field order follows declaration order, so
    identical runs produce identical bytes."""
    text = report_text(report)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as e:
        raise IOFailure(f"cannot write {path}: {e}") from e


def load_report(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as e:
        raise IOFailure(f"cannot read {path}: {e}") from e


def export_prototypes(bank, path):
    """Dump a prototype bank (vectors + member counts) for external plotting."""
    doc = {
        "dim": bank.dim,
        "n_classes": bank.n_classes,
        "n_ood": bank.n_ood,
        "id_prototypes": [
            {"source_class": p.source_class, "member_count": p.member_count,
             "vector": [float(x) for x in p.vector]}
            for p in bank.id_protos
        ],
        "ood_prototypes": [
            {"source_class": p.source_class, "member_count": p.member_count,
             "vector": [float(x) for x in p.vector]}
            for p in bank.ood_protos
        ],
    }
    export_report(doc, path)
