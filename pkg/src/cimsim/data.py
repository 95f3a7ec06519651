"""Dataset loading: bit-exact IDX (MNIST) and CIFAR-10 binary parsers, seeded
subsetting and batching, plus a deterministic synthetic-digit generator that
writes canonical IDX files for desk-scale runs when the real corpus is not on
disk. No network access: files must be local.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from cimsim.variation import stream

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


class DataError(ValueError):
    """Raised for malformed dataset files or invalid selections."""


@dataclass
class Dataset:
    """Images as (count, H, W, C) reals in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim == 3:
            self.images = self.images[..., None]
        if len(self.images) != len(self.labels):
            raise DataError(
                f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0


def _open_maybe_gz(path: str):
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _find_file(directory: str, names) -> str:
    for name in names:
        for candidate in (name, name + ".gz"):
            path = os.path.join(directory, candidate)
            if os.path.exists(path):
                return path
    raise DataError(f"missing dataset file {names[0]!r} in {directory}")


def read_idx_images(path: str) -> np.ndarray:
    """Parse a big-endian IDX image file into a (count, rows, cols) uint8 array."""
    with _open_maybe_gz(path) as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise DataError(f"{path}: truncated IDX header at byte offset {len(head)}")
        magic, count, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGE_MAGIC:
            raise DataError(
                f"{path}: bad image magic 0x{magic:08x} at byte offset 0 "
                f"(expected 0x{IDX_IMAGE_MAGIC:08x})")
        payload = fh.read()
    expected = count * rows * cols
    if len(payload) != expected:
        raise DataError(
            f"{path}: expected {expected} pixel bytes, found {len(payload)} "
            f"(truncation at byte offset {16 + len(payload)})")
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path: str) -> np.ndarray:
    """Parse a big-endian IDX label file into a (count,) uint8 array."""
    with _open_maybe_gz(path) as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise DataError(f"{path}: truncated IDX header at byte offset {len(head)}")
        magic, count = struct.unpack(">II", head)
        if magic != IDX_LABEL_MAGIC:
            raise DataError(
                f"{path}: bad label magic 0x{magic:08x} at byte offset 0 "
                f"(expected 0x{IDX_LABEL_MAGIC:08x})")
        payload = fh.read()
    if len(payload) != count:
        raise DataError(
            f"{path}: expected {count} label bytes, found {len(payload)} "
            f"(truncation at byte offset {8 + len(payload)})")
    return np.frombuffer(payload, dtype=np.uint8)


def load_mnist(directory: str):
    """Load the four standard IDX files; pixels scaled by 1/255."""
    parts = {}
    for key, names in MNIST_FILES.items():
        parts[key] = _find_file(directory, names)
    train_x = read_idx_images(parts["train_images"])
    train_y = read_idx_labels(parts["train_labels"])
    test_x = read_idx_images(parts["test_images"])
    test_y = read_idx_labels(parts["test_labels"])
    if len(train_x) != len(train_y):
        raise DataError(
            f"train image/label count mismatch: {len(train_x)} vs {len(train_y)}")
    if len(test_x) != len(test_y):
        raise DataError(
            f"test image/label count mismatch: {len(test_x)} vs {len(test_y)}")
    return (
        Dataset(train_x / 255.0, train_y, "train"),
        Dataset(test_x / 255.0, test_y, "test"),
    )


CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


def _read_cifar_batch(path: str):
    with _open_maybe_gz(path) as fh:
        raw = fh.read()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD != 0:
        raise DataError(
            f"{path}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0]
    # planes are R, G, B each 32x32 row-major
    images = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return images, labels


def load_cifar10(directory: str):
    """Load the binary CIFAR-10 batches: 50,000 train / 10,000 test records."""
    train_images, train_labels = [], []
    for i in range(1, 6):
        path = _find_file(directory, (f"data_batch_{i}.bin",))
        xs, ys = _read_cifar_batch(path)
        train_images.append(xs)
        train_labels.append(ys)
    test_path = _find_file(directory, ("test_batch.bin",))
    test_x, test_y = _read_cifar_batch(test_path)
    return (
        Dataset(np.concatenate(train_images) / 255.0, np.concatenate(train_labels), "train"),
        Dataset(test_x / 255.0, test_y, "test"),
    )


def subset(ds: Dataset, n: int, seed: int) -> Dataset:
    """Class-stratified seeded sample of n examples (order shuffled)."""
    if not 1 <= n <= len(ds):
        raise DataError(f"subset size {n} outside [1, {len(ds)}]")
    rng = stream(seed, 0xDA7A)
    classes = np.unique(ds.labels)
    total = len(ds)
    picks = []
    for c in classes:
        idx = np.flatnonzero(ds.labels == c)
        take = int(round(n * len(idx) / total))
        picks.append(rng.permutation(idx)[:take])
    chosen = np.concatenate(picks)
    # rounding can leave us a few short or long of n; trim or top up at random
    if len(chosen) > n:
        chosen = rng.permutation(chosen)[:n]
    elif len(chosen) < n:
        remaining = np.setdiff1d(np.arange(total), chosen)
        extra = rng.permutation(remaining)[: n - len(chosen)]
        chosen = np.concatenate([chosen, extra])
    chosen = rng.permutation(chosen)
    return Dataset(ds.images[chosen], ds.labels[chosen], ds.split)


def batches(ds: Dataset, batch_size: int, seed: int, epoch: int = 0):
    """Yield (images, labels) minibatches, reshuffled per epoch from the seed."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    order = stream(seed, 0xBA7C, epoch).permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        take = order[start:start + batch_size]
        yield ds.images[take], ds.labels[take]


# ---------------------------------------------------------------------------
# Synthetic digits: a deterministic MNIST-shaped surrogate corpus.
# ---------------------------------------------------------------------------

# Stroke skeletons on a unit square, one polyline list per digit class.
_DIGIT_STROKES = {
    0: [[(0.5, 0.1), (0.78, 0.3), (0.78, 0.7), (0.5, 0.9), (0.22, 0.7), (0.22, 0.3), (0.5, 0.1)]],
    1: [[(0.35, 0.25), (0.55, 0.1), (0.55, 0.9)], [(0.35, 0.9), (0.75, 0.9)]],
    2: [[(0.25, 0.25), (0.5, 0.1), (0.75, 0.3), (0.3, 0.68), (0.25, 0.9), (0.78, 0.9)]],
    3: [[(0.25, 0.15), (0.7, 0.15), (0.45, 0.45), (0.75, 0.7), (0.45, 0.92), (0.22, 0.8)]],
    4: [[(0.65, 0.9), (0.65, 0.1), (0.2, 0.62), (0.8, 0.62)]],
    5: [[(0.75, 0.1), (0.28, 0.1), (0.25, 0.45), (0.6, 0.42), (0.75, 0.68), (0.5, 0.92), (0.22, 0.82)]],
    6: [[(0.68, 0.12), (0.35, 0.4), (0.25, 0.72), (0.5, 0.92), (0.72, 0.7), (0.5, 0.52), (0.28, 0.65)]],
    7: [[(0.22, 0.12), (0.78, 0.12), (0.45, 0.9)], [(0.32, 0.52), (0.68, 0.52)]],
    8: [[(0.5, 0.1), (0.72, 0.28), (0.5, 0.48), (0.28, 0.28), (0.5, 0.1)],
        [(0.5, 0.48), (0.75, 0.7), (0.5, 0.92), (0.25, 0.7), (0.5, 0.48)]],
    9: [[(0.72, 0.35), (0.5, 0.5), (0.3, 0.3), (0.5, 0.1), (0.72, 0.28), (0.7, 0.6), (0.45, 0.9)]],
}


def _render_digit(digit: int, rng: np.random.Generator, size: int = 28) -> np.ndarray:
    """Rasterize a jittered, affine-warped stroke skeleton to a [0,1] image."""
    angle = rng.normal(0.0, 0.18)
    scale = rng.uniform(0.78, 1.12)
    shear = rng.normal(0.0, 0.15)
    tx, ty = rng.normal(0.0, 0.07, 2)
    thickness = rng.uniform(0.04, 0.08)
    ca, sa = np.cos(angle), np.sin(angle)
    # low-frequency elastic warp: two random sine fields per axis
    wf = rng.normal(0.0, 0.028, 4)
    ph = rng.uniform(0, 2 * np.pi, 4)

    points = []
    for stroke in _DIGIT_STROKES[digit]:
        pts = np.asarray(stroke, dtype=float)
        # resample each segment densely so the raster has no gaps
        dense = [pts[0]]
        for a, b in zip(pts[:-1], pts[1:]):
            steps = max(2, int(np.hypot(*(b - a)) / 0.02))
            for t in np.linspace(0, 1, steps)[1:]:
                dense.append(a + t * (b - a))
        pts = np.asarray(dense)
        pts = pts + rng.normal(0.0, 0.012, pts.shape)  # stroke wobble
        pts = pts - 0.5
        x = scale * (ca * pts[:, 0] - sa * pts[:, 1] + shear * pts[:, 1]) + 0.5 + tx
        y = scale * (sa * pts[:, 0] + ca * pts[:, 1]) + 0.5 + ty
        x = x + wf[0] * np.sin(2 * np.pi * y + ph[0]) + wf[1] * np.sin(4 * np.pi * y + ph[1])
        y = y + wf[2] * np.sin(2 * np.pi * x + ph[2]) + wf[3] * np.sin(4 * np.pi * x + ph[3])
        points.append(np.stack([x, y], axis=1))
    points = np.concatenate(points)

    yy, xx = np.mgrid[0:size, 0:size]
    grid = np.stack([(xx + 0.5) / size, (yy + 0.5) / size], axis=-1)
    d2 = np.min(
        np.sum((grid[:, :, None, :] - points[None, None, :, :]) ** 2, axis=-1),
        axis=2,
    )
    img = np.exp(-d2 / (2 * thickness ** 2))
    img = np.clip(img * rng.uniform(0.75, 1.0) + rng.normal(0, 0.03, img.shape), 0, 1)
    return img


def synthetic_digits(n_train: int, n_test: int, seed: int = 0):
    """Deterministic MNIST-shaped surrogate: 28x28 grayscale digits, 10 classes."""
    rng = stream(seed, 0x5D16)

    def make(count, split):
        labels = rng.integers(0, 10, count)
        images = np.stack([_render_digit(int(c), rng) for c in labels])
        return Dataset(images, labels, split)

    return make(n_train, "train"), make(n_test, "test")


def write_idx(images: np.ndarray, labels: np.ndarray, directory: str,
              prefix: str = "train"):
    """Write images/labels as canonical big-endian IDX files (uint8 pixels)."""
    os.makedirs(directory, exist_ok=True)
    pix = np.rint(np.asarray(images) * 255).astype(np.uint8)
    if pix.ndim == 4:
        pix = pix[..., 0]
    count, rows, cols = pix.shape
    stem = "train" if prefix == "train" else "t10k"
    with open(os.path.join(directory, f"{stem}-images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, count, rows, cols))
        fh.write(pix.tobytes())
    with open(os.path.join(directory, f"{stem}-labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, count))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


def write_synthetic_mnist(directory: str, n_train: int = 60000,
                          n_test: int = 10000, seed: int = 0):
    """Generate the surrogate corpus and store it in MNIST's IDX layout."""
    train, test = synthetic_digits(n_train, n_test, seed)
    write_idx(train.images, train.labels, directory, "train")
    write_idx(test.images, test.labels, directory, "test")
    return directory
