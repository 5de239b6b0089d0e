"""Image-folder feature extraction emitting DPFT files.

Walks a directory of class subfolders, runs a deterministically seeded
torchvision backbone over every image, and writes the embeddings in the
DPFT binary format consumed by downstream detectors, together with int32
labels, optional logits, per-class text anchors, and a manifest that pins
file digests and row alignment.
"""

from .fileio import write_features, write_labels, read_features, read_labels
from .encoder import ExtractJob, extract

__all__ = [
    "ExtractJob",
    "extract",
    "write_features",
    "write_labels",
    "read_features",
    "read_labels",
]
