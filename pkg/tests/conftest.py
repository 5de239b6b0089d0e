import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from dynproto import backend, dataio


@pytest.fixture(scope="session")
def desk64():
    """The fixed synthetic acceptance dataset, generated once per session."""
    return dataio.generate_synthetic(dataio.desk64_spec())


@pytest.fixture(scope="session")
def desk64_train_per_class(desk64):
    return [desk64.train_features[desk64.train_labels == c].astype(np.float64)
            for c in range(10)]


@pytest.fixture(scope="session")
def desk64_train_logits_per_class(desk64):
    return [desk64.train_logits[desk64.train_labels == c].astype(np.float64)
            for c in range(10)]


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the jit kernels once so timed sections never pay compilation."""
    backend.warmup()
