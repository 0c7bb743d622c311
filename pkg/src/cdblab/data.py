"""Datasets: CIFAR binary ingestion and a synthetic glyph benchmark.

The synthetic set exists so localization and regularization behavior can
be tested without external downloads.  Class identities follow a cyclic
design over a shared glyph pool: class k shows glyphs {k, k+1, ...} mod K,
so every glyph appears in several classes and no single glyph gives a
class away; only the joint pattern does.  Each pair of classes shares at
least one glyph.  Glyph bounding boxes ride along with the images.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .rng import substream
from .tensor import read_tensor, write_tensor

CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILE = "test_batch.bin"
CIFAR100_TRAIN_FILE = "train.bin"
CIFAR100_TEST_FILE = "test.bin"

_IMAGE_BYTES = 3072  # 3 * 32 * 32
_CACHE_MAGIC = "CDBCACHE 1"


class DataFormatError(ValueError):
    pass


class CorruptRecordError(DataFormatError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, H, W) float32
    labels: np.ndarray  # (N,) int64
    num_classes: int
    glyph_boxes: np.ndarray | None = None  # (N, P, 4) int64, rows (r0, c0, r1, c1)

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataFormatError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        boxes = None if self.glyph_boxes is None else self.glyph_boxes[idx]
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, boxes)


# -- CIFAR binary format -------------------------------------------------------


def decode_cifar_file(path, variant: str) -> tuple[np.ndarray, np.ndarray]:
    """One .bin file -> (pixels float32, labels int64).

    c10 records are 1 label byte + 3072 pixel bytes (R, G, B planes,
    row-major); c100 records carry a coarse byte then the fine label byte
    we keep.  Pixel values are the raw bytes, so pixel (0,0,0) of record 0
    equals byte 1 of a c10 file; standardization happens at load time.
    """
    if variant == "c10":
        label_bytes, num_classes = 1, 10
    elif variant == "c100":
        label_bytes, num_classes = 2, 100
    else:
        raise ValueError(f"unknown variant {variant!r}, expected c10 or c100")
    record = label_bytes + _IMAGE_BYTES
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % record != 0:
        raise DataFormatError(
            f"{path}: expected a multiple of {record} bytes, found {raw.size}"
        )
    rows = raw.reshape(-1, record)
    labels = rows[:, label_bytes - 1].astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise CorruptRecordError(
            f"{path}: record {bad[0]} has label {labels[bad[0]]}, "
            f"valid range is [0, {num_classes})"
        )
    images = rows[:, label_bytes:].reshape(-1, 3, 32, 32).astype(np.float32)
    return images, labels


def normalize_pair(train_images: np.ndarray, test_images: np.ndarray):
    """Standardize both splits by the train split's per-channel mean/std."""
    mean = train_images.mean(axis=(0, 2, 3), dtype=np.float64)
    std = train_images.std(axis=(0, 2, 3), dtype=np.float64)
    if np.any(std == 0):
        raise DataFormatError("a channel of the train split is constant")
    mean32 = mean.astype(np.float32)[:, None, None]
    std32 = std.astype(np.float32)[:, None, None]
    return (train_images - mean32) / std32, (test_images - mean32) / std32


def load_cifar(data_dir, variant: str = "c10") -> tuple[Dataset, Dataset]:
    if variant == "c10":
        train_files, test_files, num_classes = CIFAR10_TRAIN_FILES, (CIFAR10_TEST_FILE,), 10
    elif variant == "c100":
        train_files, test_files, num_classes = (CIFAR100_TRAIN_FILE,), (CIFAR100_TEST_FILE,), 100
    else:
        raise ValueError(f"unknown variant {variant!r}, expected c10 or c100")

    def read_split(files):
        parts = [decode_cifar_file(os.path.join(data_dir, f), variant) for f in files]
        return (np.concatenate([p[0] for p in parts]),
                np.concatenate([p[1] for p in parts]))

    train_x, train_y = read_split(train_files)
    test_x, test_y = read_split(test_files)
    train_x, test_x = normalize_pair(train_x, test_x)
    return (Dataset(train_x, train_y, num_classes),
            Dataset(test_x, test_y, num_classes))


# -- augmentation --------------------------------------------------------------

CROP_PAD = 4


def crop_offsets(rng: np.random.Generator, pad: int = CROP_PAD) -> tuple[int, int]:
    """Uniform crop window origin inside the padded image: row first, then
    column, each over {0..2*pad}."""
    r = int(rng.integers(2 * pad + 1))
    c = int(rng.integers(2 * pad + 1))
    return r, c


def augment(image: np.ndarray, rng: np.random.Generator, flip: bool = False) -> np.ndarray:
    """Zero-pad by 4 on each side and crop back to the original size at a
    random window origin.  Horizontal flip is off by default and draws from
    the stream only when enabled."""
    c, h, w = image.shape
    padded = np.pad(image, ((0, 0), (CROP_PAD, CROP_PAD), (CROP_PAD, CROP_PAD)))
    r, col = crop_offsets(rng)
    out = padded[:, r : r + h, col : col + w]
    if flip and rng.random() < 0.5:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


# -- synthetic glyph dataset ----------------------------------------------------


class PlacementError(RuntimeError):
    """Could not place or sample the requested glyphs."""


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 4
    patches_per_class: int = 3
    glyph_size: int = 5
    noise: float = 0.25
    samples_per_class: int = 40
    test_per_class: int | None = None
    image_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 3:
            raise ValueError(
                "need at least 3 classes: with 2, no assignment can both share a "
                "glyph across every pair and keep single glyphs non-identifying"
            )
        if not 2 <= self.patches_per_class < self.num_classes:
            raise ValueError(
                f"patches_per_class must lie in [2, num_classes), got "
                f"{self.patches_per_class} for {self.num_classes} classes"
            )
        if 2 * self.patches_per_class <= self.num_classes:
            raise ValueError(
                "glyph windows too narrow: need 2*patches_per_class > num_classes "
                "so every pair of classes shares a glyph"
            )
        if self.glyph_size < 3:
            raise ValueError(f"glyph_size must be at least 3, got {self.glyph_size}")
        if self.glyph_size > self.image_size:
            raise ValueError("glyph does not fit in the image")
        if self.noise < 0:
            raise ValueError(f"noise must be nonnegative, got {self.noise}")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be positive")
        if self.test_per_class is not None and self.test_per_class < 1:
            raise ValueError("test_per_class must be positive")
        # loose packing bound; the placer still rejection-samples
        if 2 * self.patches_per_class * self.glyph_size**2 > self.image_size**2:
            raise ValueError("glyphs cannot plausibly be packed without overlap")

    @property
    def num_glyphs(self) -> int:
        return self.num_classes

    def class_glyphs(self, label: int) -> list[int]:
        """Glyph indices shown by a class: a contiguous window of size
        patches_per_class on the cyclic glyph pool.  Adjacent classes
        overlap, every glyph serves several classes."""
        return [(label + j) % self.num_classes for j in range(self.patches_per_class)]


def synthetic_glyphs(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic glyph bank: binary patterns (G, s, s) and RGB color
    vectors (G, 3).  Patterns are rejection-sampled to stay pairwise
    distinct (Hamming distance at least a quarter of the cells)."""
    s = spec.glyph_size
    cells = s * s
    min_dist = max(1, cells // 4)
    rng = substream(spec.seed, "synth", "glyphs")
    patterns = np.zeros((spec.num_glyphs, s, s), dtype=np.float32)
    colors = np.zeros((spec.num_glyphs, 3), dtype=np.float32)
    for g in range(spec.num_glyphs):
        for _ in range(500):
            cand = (rng.random((s, s)) < 0.5).astype(np.float32)
            ones = int(cand.sum())
            if not s <= ones <= cells - s:
                continue
            if all(int(np.sum(cand != patterns[j])) >= min_dist for j in range(g)):
                break
        else:
            raise PlacementError(f"could not sample a distinct pattern for glyph {g}")
        patterns[g] = cand
        colors[g] = 0.6 + 0.4 * rng.random(3)
    return patterns, colors


def _place_boxes(rng: np.random.Generator, count: int, size: int, s: int) -> np.ndarray:
    boxes = np.zeros((count, 4), dtype=np.int64)
    for p in range(count):
        for _ in range(1000):
            r = int(rng.integers(size - s + 1))
            c = int(rng.integers(size - s + 1))
            clash = any(
                r < boxes[q, 2] and boxes[q, 0] < r + s
                and c < boxes[q, 3] and boxes[q, 1] < c + s
                for q in range(p)
            )
            if not clash:
                boxes[p] = (r, c, r + s, c + s)
                break
        else:
            raise PlacementError(f"no room for glyph {p} of {count} in a {size}x{size} image")
    return boxes


def _render_split(spec: SyntheticSpec, split: str, per_class: int,
                  patterns: np.ndarray, colors: np.ndarray):
    n = spec.num_classes * per_class
    size, s = spec.image_size, spec.glyph_size
    images = np.zeros((n, 3, size, size), dtype=np.float32)
    labels = np.zeros(n, dtype=np.int64)
    boxes = np.zeros((n, spec.patches_per_class, 4), dtype=np.int64)
    for i in range(n):
        label = i % spec.num_classes
        rng = substream(spec.seed, "synth", split, i)
        img = rng.normal(0.0, 1.0, size=(3, size, size)).astype(np.float32)
        img *= np.float32(spec.noise)
        img_boxes = _place_boxes(rng, spec.patches_per_class, size, s)
        for p, g in enumerate(spec.class_glyphs(label)):
            r0, c0, r1, c1 = img_boxes[p]
            img[:, r0:r1, c0:c1] += patterns[g] * colors[g][:, None, None]
        images[i] = img
        labels[i] = label
        boxes[i] = img_boxes
    return images, labels, boxes


def generate_synthetic(spec: SyntheticSpec, normalize: bool = True) -> tuple[Dataset, Dataset]:
    """Train/test pair of glyph scenes.  Fully determined by ``spec``: the
    split name and sample index key every random draw, so the run seed of a
    training job never changes the data.  ``normalize=False`` skips the
    standardization (useful with noise=0, where a channel can be constant)."""
    patterns, colors = synthetic_glyphs(spec)
    test_per_class = spec.test_per_class or spec.samples_per_class
    train_x, train_y, train_b = _render_split(spec, "train", spec.samples_per_class,
                                              patterns, colors)
    test_x, test_y, test_b = _render_split(spec, "test", test_per_class,
                                           patterns, colors)
    if normalize:
        train_x, test_x = normalize_pair(train_x, test_x)
    return (Dataset(train_x, train_y, spec.num_classes, train_b),
            Dataset(test_x, test_y, spec.num_classes, test_b))


# -- dataset cache ---------------------------------------------------------------


def save_dataset_cache(path, train: Dataset, test: Dataset) -> None:
    """Serialize a train/test pair: a small text manifest followed by named
    tensor blobs.  Labels and boxes are stored as float64 and restored to
    integers on load."""
    parts = {"train": train, "test": test}
    with open(path, "wb") as fh:
        fh.write(f"{_CACHE_MAGIC}\n".encode())
        fh.write(f"num_classes={train.num_classes}\n".encode())
        for name, ds in parts.items():
            fh.write(f"split={name} boxes={int(ds.glyph_boxes is not None)}\n".encode())
            write_tensor(fh, ds.images)
            write_tensor(fh, ds.labels.astype(np.float64))
            if ds.glyph_boxes is not None:
                write_tensor(fh, ds.glyph_boxes.astype(np.float64))


def load_dataset_cache(path) -> tuple[Dataset, Dataset]:
    def read_line(fh) -> str:
        buf = bytearray()
        while (ch := fh.read(1)) != b"\n":
            if not ch:
                raise DataFormatError("truncated cache manifest")
            buf.extend(ch)
        return buf.decode()

    with open(path, "rb") as fh:
        if read_line(fh) != _CACHE_MAGIC:
            raise DataFormatError(f"{path} is not a dataset cache")
        num_classes = int(read_line(fh).split("=")[1])
        out = {}
        for expect in ("train", "test"):
            fields = dict(kv.split("=") for kv in read_line(fh).split())
            if fields.get("split") != expect:
                raise DataFormatError(f"expected {expect} split, found {fields}")
            images = read_tensor(fh)
            labels = read_tensor(fh).astype(np.int64)
            boxes = read_tensor(fh).astype(np.int64) if fields["boxes"] == "1" else None
            out[expect] = Dataset(images, labels, num_classes, boxes)
    return out["train"], out["test"]
