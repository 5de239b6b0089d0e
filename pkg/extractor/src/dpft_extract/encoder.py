"""Feature extraction from class-foldered image datasets.

The dataset layout is one subdirectory per class under ``data_dir``; every
regular file inside a class directory is treated as an image. Class indices
come from the sorted subdirectory names and rows are emitted in lexicographic
order of the image's relative path, so the same tree always produces the
same row order. There is no augmentation and no shuffling anywhere; combined
with a fixed init seed and single-threaded inference, reruns of the same job
are byte-identical.

The backbone is a torchvision residual network constructed with random
weights from ``init_seed``. Nothing is downloaded. Features are the pooled
penultimate activations, L2-normalized per row; logits are the final linear
layer applied to the unnormalized features.

Class anchors are synthetic text embeddings: the prompt template is rendered
per class name, hashed with SHA-256, and the digest seeds a generator that
draws a unit vector of the feature dimension. The anchors file therefore has
exactly one row per class and depends only on the template and class names.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ValidationError, ExtractError
from . import fileio

SUPPORTED_BACKBONES = ("resnet18", "resnet34", "resnet50")

# standard ImageNet channel statistics, applied regardless of weights
CHANNEL_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
CHANNEL_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

FEATURES_FILE = "features.dpft"
LABELS_FILE = "labels.i32"
LOGITS_FILE = "logits.dpft"
ANCHORS_FILE = "anchors.dpft"
MANIFEST_FILE = "manifest.json"


@dataclass(frozen=True)
class ExtractJob:
    """Everything needed to turn an image tree into DPFT files."""

    data_dir: str
    out_dir: str
    backbone: str = "resnet18"
    init_seed: int = 0
    batch_size: int = 32
    image_size: int = 224
    template: str = "a photo of a {}"
    write_logits: bool = True
    write_anchors: bool = True

    def validate(self):
        if self.backbone not in SUPPORTED_BACKBONES:
            raise ValidationError(
                f"unsupported backbone {self.backbone!r}, "
                f"expected one of {', '.join(SUPPORTED_BACKBONES)}"
            )
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if self.image_size < 32:
            raise ValidationError("image_size must be at least 32")
        if self.write_anchors and "{}" not in self.template:
            raise ValidationError("template must contain a {} placeholder")
        if not Path(self.data_dir).is_dir():
            raise ValidationError(f"no such dataset directory: {self.data_dir}")


@dataclass
class ExtractResult:
    classes: list
    count: int
    dim: int
    skipped: list = field(default_factory=list)
    out_dir: str = ""


def scan_dataset(data_dir):
    """List (relative_path, class_index) pairs in lexicographic path order.

    Classes are the sorted immediate subdirectories of ``data_dir``; files
    directly under ``data_dir`` are ignored. Hidden entries are skipped.
    """
    root = Path(data_dir)
    classes = sorted(
        p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith(".")
    )
    if not classes:
        raise ValidationError(f"{data_dir}: no class subdirectories found")
    items = []
    for idx, name in enumerate(classes):
        for child in sorted((root / name).iterdir()):
            if child.is_file() and not child.name.startswith("."):
                items.append((f"{name}/{child.name}", idx))
    # class dirs and members are each sorted, so this is already global
    # lexicographic order; the explicit sort keeps that true by construction
    items.sort(key=lambda pair: pair[0])
    return classes, items


def build_backbone(name, num_classes, init_seed):
    import torchvision.models as models

    torch.manual_seed(init_seed)
    model = getattr(models, name)(weights=None, num_classes=num_classes)
    model.eval()
    return model


def _forward(model, batch):
    """Pooled penultimate features plus classifier logits."""
    x = model.conv1(batch)
    x = model.bn1(x)
    x = model.relu(x)
    x = model.maxpool(x)
    x = model.layer1(x)
    x = model.layer2(x)
    x = model.layer3(x)
    x = model.layer4(x)
    x = model.avgpool(x)
    feats = torch.flatten(x, 1)
    logits = model.fc(feats)
    return feats, logits


def load_image(path, image_size):
    """Decode, resize the short side, center-crop, and normalize one image.

    Returns a CHW float32 array. Raises whatever PIL raises on a broken
    file; the caller decides whether that skips the row or aborts.
    """
    with Image.open(path) as img:
        img = img.convert("RGB")
        short = min(img.size)
        scale = (image_size * 256) // 224
        resized = img.resize(
            (
                max(1, round(img.size[0] * scale / short)),
                max(1, round(img.size[1] * scale / short)),
            ),
            Image.BILINEAR,
        )
        left = (resized.size[0] - image_size) // 2
        top = (resized.size[1] - image_size) // 2
        cropped = resized.crop((left, top, left + image_size, top + image_size))
        arr = np.asarray(cropped, dtype=np.float32) / 255.0
    arr = (arr - CHANNEL_MEAN) / CHANNEL_STD
    return arr.transpose(2, 0, 1)


def anchor_vector(template, class_name, dim):
    """Deterministic pseudo text embedding for one class prompt."""
    text = template.format(class_name)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    seed = np.frombuffer(digest, dtype=np.uint64)
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(dim)
    vec /= np.linalg.norm(vec)
    return vec.astype(np.float32)


def build_anchors(template, classes, dim):
    rows = [anchor_vector(template, name, dim) for name in classes]
    return np.stack(rows, axis=0)


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def alignment_digest(rows):
    """Hash of the ordered (relative path, label) pairs behind the outputs.

    Recomputable from the manifest's own ``rows`` listing, so a reader can
    verify that labels still line up with feature rows index for index.
    """
    h = hashlib.sha256()
    for rel, label in rows:
        h.update(rel.encode("utf-8"))
        h.update(b"\t")
        h.update(str(int(label)).encode("ascii"))
        h.update(b"\n")
    return h.hexdigest()


def extract(job: ExtractJob) -> ExtractResult:
    """Run one extraction job end to end and write all output files."""
    job.validate()
    classes, items = scan_dataset(job.data_dir)
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    # single-threaded inference keeps float reduction order fixed, which is
    # what makes rerunning the same job byte-identical
    prev_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        model = build_backbone(job.backbone, len(classes), job.init_seed)
        dim = model.fc.in_features

        kept_rows = []
        skipped = []
        feat_blocks = []
        logit_blocks = []
        pending = []

        def flush():
            if not pending:
                return
            batch = torch.from_numpy(np.stack(pending, axis=0))
            with torch.inference_mode():
                feats, logits = _forward(model, batch)
            feat_blocks.append(feats.numpy().astype(np.float32))
            logit_blocks.append(logits.numpy().astype(np.float32))
            pending.clear()

        root = Path(job.data_dir)
        for rel, label in items:
            try:
                arr = load_image(root / rel, job.image_size)
            except Exception as exc:  # broken file: record and move on
                skipped.append({"path": rel, "reason": str(exc) or type(exc).__name__})
                continue
            pending.append(arr)
            kept_rows.append((rel, label))
            if len(pending) >= job.batch_size:
                flush()
        flush()
    finally:
        torch.set_num_threads(prev_threads)

    if not kept_rows:
        raise ExtractError(f"{job.data_dir}: no readable images")

    features = np.concatenate(feat_blocks, axis=0)
    logits = np.concatenate(logit_blocks, axis=0)
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    if not np.all(norms > 0):
        raise ExtractError("backbone produced a zero feature vector")
    features = (features / norms).astype(np.float32)
    labels = np.array([label for _, label in kept_rows], dtype=np.int32)

    fileio.write_features(out_dir / FEATURES_FILE, features, normalized=True)
    fileio.write_labels(out_dir / LABELS_FILE, labels)
    written = [FEATURES_FILE, LABELS_FILE]
    if job.write_logits:
        fileio.write_features(out_dir / LOGITS_FILE, logits, normalized=False)
        written.append(LOGITS_FILE)
    if job.write_anchors:
        anchors = build_anchors(job.template, classes, features.shape[1])
        fileio.write_features(out_dir / ANCHORS_FILE, anchors, normalized=True)
        written.append(ANCHORS_FILE)

    manifest = {
        "kind": "dpft-extract-manifest",
        "version": 1,
        "backbone": job.backbone,
        "init_seed": job.init_seed,
        "batch_size": job.batch_size,
        "image_size": job.image_size,
        "template": job.template if job.write_anchors else None,
        "classes": classes,
        "count": int(labels.shape[0]),
        "dim": int(features.shape[1]),
        "rows": [{"path": rel, "label": int(label)} for rel, label in kept_rows],
        "alignment_sha256": alignment_digest(kept_rows),
        "skipped": skipped,
        "files": {
            name: {
                "sha256": _file_digest(out_dir / name),
                "bytes": (out_dir / name).stat().st_size,
            }
            for name in written
        },
    }
    with open(out_dir / MANIFEST_FILE, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")

    return ExtractResult(
        classes=classes,
        count=int(labels.shape[0]),
        dim=int(features.shape[1]),
        skipped=skipped,
        out_dir=str(out_dir),
    )
