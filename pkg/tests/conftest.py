import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cdblab.rng import substream


@pytest.fixture
def rng():
    return substream(20240601, "tests")


def random_feature_map(rng, c, h, w, dtype=np.float32):
    return rng.standard_normal((c, h, w)).astype(dtype)


@pytest.fixture(scope="session")
def cifar_dir():
    """Directory of the real CIFAR-10 binaries, or None when absent."""
    import os

    candidates = [
        os.environ.get("CDBLAB_CIFAR10_DIR"),
        "/root/data/cifar-10-batches-bin",
        "/root/pkg/data/cifar-10-batches-bin",
    ]
    for cand in candidates:
        if cand and os.path.isdir(cand) and os.path.exists(
            os.path.join(cand, "data_batch_1.bin")
        ):
            return cand
    return None
