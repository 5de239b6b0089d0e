"""Streaming out-of-distribution detection with test-time OOD prototypes.

The detector starts from per-class ID prototypes and a base OOD score,
admits suspicious test samples into small per-class caches as the stream
arrives, clusters each cache into OOD prototypes, and scores subsequent
samples against both prototype sets. See the README for the CLI and file
formats.
"""

from .backend import active_backend, set_backend, warmup
from .capture import (
    CacheBank,
    ClassCache,
    Thresholds,
    adaptive_alpha,
    calibrate_theta,
)
from .dataio import (
    SyntheticSpec,
    desk64_spec,
    generate_synthetic,
    read_features,
    read_labels,
    write_features,
    write_labels,
)
from .errors import DynProtoError, ValidationError
from .metrics import EvalReport, auroc, evaluate, fpr_at_tpr, similarity_delta
from .pipeline import (
    BatchResult,
    PipelineConfig,
    PipelineState,
    StreamLog,
    initialize,
    make_batches,
    process_batch,
    process_stream,
    split_by_class,
)
from .refine import birch_partition, build_id_prototypes
from .scoring import (
    Prototype,
    PrototypeBank,
    ScoreConfig,
    energy_scores,
    mcm_scores,
    msp_scores,
    prototype_score,
    prototype_scores,
)

__version__ = "0.1.0"

__all__ = [
    "BatchResult",
    "CacheBank",
    "ClassCache",
    "DynProtoError",
    "EvalReport",
    "PipelineConfig",
    "PipelineState",
    "Prototype",
    "PrototypeBank",
    "ScoreConfig",
    "StreamLog",
    "SyntheticSpec",
    "Thresholds",
    "ValidationError",
    "active_backend",
    "adaptive_alpha",
    "auroc",
    "birch_partition",
    "build_id_prototypes",
    "calibrate_theta",
    "desk64_spec",
    "energy_scores",
    "evaluate",
    "fpr_at_tpr",
    "generate_synthetic",
    "initialize",
    "make_batches",
    "mcm_scores",
    "msp_scores",
    "process_batch",
    "process_stream",
    "prototype_score",
    "prototype_scores",
    "read_features",
    "read_labels",
    "set_backend",
    "similarity_delta",
    "split_by_class",
    "warmup",
    "write_features",
    "write_labels",
]
