import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

from dpft_extract import fileio
from dpft_extract.encoder import (
    ANCHORS_FILE,
    FEATURES_FILE,
    LABELS_FILE,
    LOGITS_FILE,
    MANIFEST_FILE,
    ExtractJob,
    alignment_digest,
    anchor_vector,
    extract,
    scan_dataset,
)
from dpft_extract.errors import ExtractError, ValidationError

from conftest import CLASS_SIZES, make_dataset


def load_manifest(out_dir):
    with open(Path(out_dir) / MANIFEST_FILE) as fh:
        return json.load(fh)


class TestScan:
    def test_classes_sorted(self, dataset_dir):
        classes, _ = scan_dataset(dataset_dir)
        assert classes == sorted(CLASS_SIZES)

    def test_items_lexicographic(self, dataset_dir):
        _, items = scan_dataset(dataset_dir)
        paths = [rel for rel, _ in items]
        assert paths == sorted(paths)
        assert len(paths) == sum(CLASS_SIZES.values())

    def test_labels_match_class_of_path(self, dataset_dir):
        classes, items = scan_dataset(dataset_dir)
        for rel, label in items:
            assert rel.split("/")[0] == classes[label]

    def test_no_class_dirs_rejected(self, tmp_path):
        (tmp_path / "stray.txt").write_text("not a class dir")
        with pytest.raises(ValidationError):
            scan_dataset(tmp_path)


class TestOutputs:
    def test_ten_images_ten_rows(self, result, job):
        assert result.count == 10
        feats, normalized = fileio.read_features(Path(job.out_dir) / FEATURES_FILE)
        assert feats.shape == (10, result.dim)
        assert normalized is True

    def test_features_unit_norm(self, result, job):
        feats, _ = fileio.read_features(Path(job.out_dir) / FEATURES_FILE)
        norms = np.linalg.norm(feats, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-5)

    def test_labels_file(self, result, job):
        labels = fileio.read_labels(Path(job.out_dir) / LABELS_FILE)
        assert labels.shape == (10,)
        # sorted class dirs: cat=0, dog=1, owl=2, in path order
        expected = [0] * CLASS_SIZES["cat"] + [1] * CLASS_SIZES["dog"] + [2] * CLASS_SIZES["owl"]
        assert labels.tolist() == expected

    def test_logits_shape_and_flag(self, result, job):
        logits, normalized = fileio.read_features(Path(job.out_dir) / LOGITS_FILE)
        assert logits.shape == (10, len(result.classes))
        assert normalized is False

    def test_anchor_rows_one_per_class(self, result, job):
        anchors, normalized = fileio.read_features(Path(job.out_dir) / ANCHORS_FILE)
        assert anchors.shape == (len(result.classes), result.dim)
        assert normalized is True
        assert np.allclose(np.linalg.norm(anchors, axis=1), 1.0, atol=1e-5)

    def test_manifest_row_alignment(self, result, job):
        doc = load_manifest(job.out_dir)
        labels = fileio.read_labels(Path(job.out_dir) / LABELS_FILE)
        assert [row["label"] for row in doc["rows"]] == labels.tolist()
        rows = [(row["path"], row["label"]) for row in doc["rows"]]
        assert alignment_digest(rows) == doc["alignment_sha256"]

    def test_manifest_file_digests(self, result, job):
        import hashlib

        doc = load_manifest(job.out_dir)
        assert set(doc["files"]) == {FEATURES_FILE, LABELS_FILE, LOGITS_FILE, ANCHORS_FILE}
        for name, entry in doc["files"].items():
            data = (Path(job.out_dir) / name).read_bytes()
            assert hashlib.sha256(data).hexdigest() == entry["sha256"]
            assert len(data) == entry["bytes"]

    def test_manifest_echoes_job(self, result, job):
        doc = load_manifest(job.out_dir)
        assert doc["backbone"] == "resnet18"
        assert doc["init_seed"] == 3
        assert doc["count"] == 10
        assert doc["classes"] == sorted(CLASS_SIZES)
        assert doc["skipped"] == []


class TestDeterminism:
    def test_rerun_byte_identical(self, job, tmp_path):
        rerun = dataclasses.replace(job, out_dir=str(tmp_path / "rerun"))
        extract(rerun)
        for name in (FEATURES_FILE, LABELS_FILE, LOGITS_FILE, ANCHORS_FILE):
            first = (Path(job.out_dir) / name).read_bytes()
            second = (Path(rerun.out_dir) / name).read_bytes()
            assert first == second, name
        # manifests agree except for nothing: they carry no volatile fields
        assert load_manifest(job.out_dir) == load_manifest(rerun.out_dir)

    def test_init_seed_changes_features(self, job, tmp_path):
        other = dataclasses.replace(
            job, out_dir=str(tmp_path / "seeded"), init_seed=job.init_seed + 1
        )
        extract(other)
        a, _ = fileio.read_features(Path(job.out_dir) / FEATURES_FILE)
        b, _ = fileio.read_features(Path(other.out_dir) / FEATURES_FILE)
        assert a.shape == b.shape
        assert not np.array_equal(a, b)

    def test_anchor_vector_stable(self):
        a = anchor_vector("a photo of a {}", "cat", 64)
        b = anchor_vector("a photo of a {}", "cat", 64)
        assert np.array_equal(a, b)

    def test_anchor_vector_varies_with_template_and_name(self):
        base = anchor_vector("a photo of a {}", "cat", 64)
        assert not np.array_equal(base, anchor_vector("a photo of a {}", "dog", 64))
        assert not np.array_equal(base, anchor_vector("a sketch of a {}", "cat", 64))


@pytest.fixture(scope="module")
def dirty_run(tmp_path_factory):
    data = tmp_path_factory.mktemp("dirty_images")
    make_dataset(data, {"ant": 3, "bee": 2}, seed=5)
    (data / "ant" / "broken.png").write_bytes(b"this is not an image")
    out = tmp_path_factory.mktemp("dirty_out")
    job = ExtractJob(
        data_dir=str(data), out_dir=str(out), batch_size=3, image_size=64
    )
    return extract(job), out


class TestSkipping:
    def test_unreadable_file_skipped(self, dirty_run):
        result, out = dirty_run
        assert result.count == 5
        assert len(result.skipped) == 1
        assert result.skipped[0]["path"] == "ant/broken.png"
        assert result.skipped[0]["reason"]

    def test_skip_recorded_in_manifest(self, dirty_run):
        result, out = dirty_run
        doc = load_manifest(out)
        assert [entry["path"] for entry in doc["skipped"]] == ["ant/broken.png"]
        assert doc["count"] == 5
        feats, _ = fileio.read_features(out / FEATURES_FILE)
        assert feats.shape[0] == 5
        assert "ant/broken.png" not in [row["path"] for row in doc["rows"]]

    def test_all_unreadable_is_an_error(self, tmp_path):
        (tmp_path / "junk").mkdir()
        (tmp_path / "junk" / "a.png").write_bytes(b"nope")
        job = ExtractJob(data_dir=str(tmp_path), out_dir=str(tmp_path / "out"), image_size=64)
        with pytest.raises(ExtractError):
            extract(job)


class TestValidation:
    def test_missing_data_dir(self, tmp_path):
        job = ExtractJob(data_dir=str(tmp_path / "absent"), out_dir=str(tmp_path))
        with pytest.raises(ValidationError):
            extract(job)

    def test_bad_backbone(self, dataset_dir, tmp_path):
        job = ExtractJob(
            data_dir=str(dataset_dir), out_dir=str(tmp_path), backbone="vit_b_16"
        )
        with pytest.raises(ValidationError):
            extract(job)

    def test_template_needs_placeholder(self, dataset_dir, tmp_path):
        job = ExtractJob(
            data_dir=str(dataset_dir), out_dir=str(tmp_path), template="no slot"
        )
        with pytest.raises(ValidationError):
            extract(job)

    def test_bad_batch_size(self, dataset_dir, tmp_path):
        job = ExtractJob(data_dir=str(dataset_dir), out_dir=str(tmp_path), batch_size=0)
        with pytest.raises(ValidationError):
            extract(job)


class TestFileFormat:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        mat = rng.standard_normal((7, 5)).astype(np.float32)
        path = tmp_path / "m.dpft"
        fileio.write_features(path, mat, normalized=False)
        back, normalized = fileio.read_features(path)
        assert np.array_equal(back, mat)
        assert normalized is False

    def test_header_layout(self, tmp_path):
        path = tmp_path / "m.dpft"
        fileio.write_features(path, np.zeros((2, 3), dtype=np.float32), normalized=True)
        raw = path.read_bytes()
        assert raw[:4] == b"DPFT"
        assert raw[4:6] == (1).to_bytes(2, "little")  # version
        assert raw[6] == 1  # float32 dtype code
        assert raw[7] == 1  # normalized flag
        assert int.from_bytes(raw[8:12], "little") == 3
        assert int.from_bytes(raw[12:20], "little") == 2
        assert len(raw) == 20 + 2 * 3 * 4

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.dpft"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(fileio.FormatError):
            fileio.read_features(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "m.dpft"
        fileio.write_features(path, np.zeros((4, 4), dtype=np.float32), normalized=False)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(fileio.FormatError):
            fileio.read_features(path)

    def test_labels_roundtrip(self, tmp_path):
        path = tmp_path / "l.i32"
        fileio.write_labels(path, np.array([0, 5, -1, 2], dtype=np.int64))
        assert fileio.read_labels(path).tolist() == [0, 5, -1, 2]


class TestEngineCompat:
    """The detection engine must accept these files through its own reader."""

    def test_engine_reads_features(self, result, job):
        dataio = pytest.importorskip("dynproto.dataio")
        ours, _ = fileio.read_features(Path(job.out_dir) / FEATURES_FILE)
        theirs, normalized = dataio.read_features(str(Path(job.out_dir) / FEATURES_FILE))
        assert normalized is True
        assert np.array_equal(ours, theirs)

    def test_engine_reads_labels_and_pairing(self, result, job):
        dataio = pytest.importorskip("dynproto.dataio")
        feats, _ = dataio.read_features(str(Path(job.out_dir) / FEATURES_FILE))
        labels = dataio.read_labels(str(Path(job.out_dir) / LABELS_FILE))
        dataio.check_pair(feats, labels)  # raises on row count mismatch
        assert feats.shape[0] == labels.shape[0] == result.count

    def test_engine_reads_anchors(self, result, job):
        dataio = pytest.importorskip("dynproto.dataio")
        anchors, normalized = dataio.read_features(str(Path(job.out_dir) / ANCHORS_FILE))
        assert normalized is True
        assert anchors.shape[0] == len(result.classes)
