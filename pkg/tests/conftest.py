import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from cimsim import data as data_mod

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SYNTHETIC_CACHE = os.path.join(REPO_ROOT, ".cache", "synthetic-mnist")


def _has_mnist_files(directory):
    if not directory or not os.path.isdir(directory):
        return False
    try:
        for names in data_mod.MNIST_FILES.values():
            data_mod._find_file(directory, names)
    except data_mod.DataError:
        return False
    return True


def resolve_mnist_dir():
    """Real MNIST when available, else the cached synthetic surrogate corpus.

    Returns (directory, is_real). The surrogate is generated once and reused
    across sessions; it is byte-exact IDX so the normal loaders apply.
    """
    for candidate in (os.environ.get("CIMSIM_MNIST_DIR"),
                      os.path.join(REPO_ROOT, "data", "mnist")):
        if _has_mnist_files(candidate):
            return candidate, True
    if not _has_mnist_files(SYNTHETIC_CACHE):
        print("generating synthetic digit corpus (one-time, a few minutes)...",
              file=sys.stderr, flush=True)
        data_mod.write_synthetic_mnist(SYNTHETIC_CACHE, 60000, 10000, seed=0)
    return SYNTHETIC_CACHE, False


@pytest.fixture(scope="session")
def mnist_source():
    directory, is_real = resolve_mnist_dir()
    train, test = data_mod.load_mnist(directory)
    label = "real MNIST" if is_real else "synthetic surrogate digits"
    print(f"\n[data] using {label} from {directory}", file=sys.stderr, flush=True)
    return {"train": train, "test": test, "real": is_real, "dir": directory}


@pytest.fixture(scope="session")
def mnist_10k(mnist_source):
    train = data_mod.subset(mnist_source["train"], 10000, seed=11)
    test = data_mod.subset(mnist_source["test"], 2000, seed=12)
    return train, test


@pytest.fixture(scope="session")
def small_digits():
    return data_mod.synthetic_digits(1500, 400, seed=7)
