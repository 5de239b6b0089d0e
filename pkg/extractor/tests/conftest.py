import numpy as np
import pytest
from PIL import Image

from dpft_extract.encoder import ExtractJob, extract

CLASS_SIZES = {"cat": 4, "dog": 3, "owl": 3}  # 10 images total


def make_dataset(root, class_sizes, seed=11, size=48):
    """Write small RGB noise PNGs in a class-per-subdirectory layout."""
    rng = np.random.default_rng(seed)
    for name, count in class_sizes.items():
        cdir = root / name
        cdir.mkdir(parents=True)
        for i in range(count):
            pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
            Image.fromarray(pixels).save(cdir / f"img_{i:03d}.png")


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("images")
    make_dataset(root, CLASS_SIZES)
    return root


@pytest.fixture(scope="session")
def job(dataset_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("out")
    return ExtractJob(
        data_dir=str(dataset_dir),
        out_dir=str(out),
        init_seed=3,
        batch_size=4,
        image_size=64,
    )


@pytest.fixture(scope="session")
def result(job):
    return extract(job)
