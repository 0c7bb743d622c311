"""Reference regularizers the channel-drop scheme is compared against.

All four keep the usual conventions of their originals: dropout and
spatial dropout rescale survivors by 1/(1-rate) at train time, cutout and
DropBlock do their own thing (cutout never rescales, DropBlock normalizes
by the surviving fraction per plane).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .rng import substream
from .tensor import ShapeError


class BaselineKind(str, Enum):
    DROPOUT = "dropout"
    SPATIAL_DROPOUT = "spatial_dropout"
    CUTOUT = "cutout"
    DROPBLOCK = "dropblock"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BaselineConfig:
    kind: BaselineKind
    rate: float = 0.1
    block_size: int = 8
    insert_pos: tuple[str, ...] = ("v2", "v3")

    def __post_init__(self):
        if not 0.0 < self.rate < 1.0:
            raise ConfigError(f"rate must lie in (0, 1), got {self.rate}")
        if self.block_size < 1:
            raise ConfigError(f"block_size must be positive, got {self.block_size}")
        if self.kind is BaselineKind.DROPBLOCK and self.block_size % 2 == 0:
            raise ConfigError(f"dropblock block_size must be odd, got {self.block_size}")


def dropout_forward(f: np.ndarray, rate: float, rng: np.random.Generator):
    """Per-scalar Bernoulli dropout with inverted scaling."""
    keep = (rng.random(f.shape) >= rate).astype(f.dtype)
    factor = keep * f.dtype.type(1.0 / (1.0 - rate))
    return f * factor, factor


def spatial_dropout_forward(f: np.ndarray, rate: float, rng: np.random.Generator):
    """Drop whole channels, independently per (sample, channel)."""
    if f.ndim != 4:
        raise ShapeError(f"expected a (N, C, H, W) batch, got shape {f.shape}")
    n, c = f.shape[:2]
    keep = (rng.random((n, c)) >= rate).astype(f.dtype)
    factor = keep[:, :, None, None] * f.dtype.type(1.0 / (1.0 - rate))
    return f * factor, factor


def erase_square(image: np.ndarray, center: tuple[int, int], b: int) -> np.ndarray:
    """Zero a b x b square centered at (row, col), clipped to the image.
    Operates on a (C, H, W) image and returns a copy."""
    if image.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) image, got shape {image.shape}")
    _, h, w = image.shape
    r, c = center
    half = b // 2
    r0, r1 = max(0, r - half), min(h, r - half + b)
    c0, c1 = max(0, c - half), min(w, c - half + b)
    out = image.copy()
    out[:, r0:r1, c0:c1] = 0.0
    return out


def cutout_apply(image: np.ndarray, b: int, rng: np.random.Generator) -> np.ndarray:
    """Cutout on one input image: square erase at a uniformly random center.
    The center may sit near an edge, in which case the square is clipped.
    No rescaling of the remaining pixels."""
    _, h, w = image.shape
    r = int(rng.integers(h))
    c = int(rng.integers(w))
    return erase_square(image, (r, c), b)


def dropblock_forward(f: np.ndarray, rate: float, b: int, rng: np.random.Generator):
    """DropBlock on a (N, C, H, W) batch.

    Bernoulli seeds land in the valid interior (where a b x b block fits
    entirely), each seed wipes the block around it, and every plane is then
    renormalized by HW / surviving count.  Seed probability compensates the
    block area and the shrunken seed region so the expected fraction of
    dropped units matches ``rate``."""
    if f.ndim != 4:
        raise ShapeError(f"expected a (N, C, H, W) batch, got shape {f.shape}")
    n, c, h, w = f.shape
    if b % 2 == 0:
        raise ConfigError(f"block_size must be odd, got {b}")
    if b > min(h, w):
        raise ConfigError(f"block_size {b} exceeds feature map {h}x{w}")
    valid_h, valid_w = h - b + 1, w - b + 1
    seed_prob = rate * h * w / (b * b * valid_h * valid_w)
    seeds = rng.random((n, c, valid_h, valid_w)) < seed_prob
    block = np.zeros((n, c, h, w), dtype=bool)
    for dr in range(b):
        for dc in range(b):
            block[:, :, dr : dr + valid_h, dc : dc + valid_w] |= seeds
    keep = ~block
    ones = keep.reshape(n, c, -1).sum(axis=2).astype(np.float64)
    hw = float(h * w)
    # A fully wiped plane would zero-divide; it is already all zeros, so the
    # scale there is irrelevant and we pin it to 1.
    scale = np.where(ones > 0, hw / np.maximum(ones, 1.0), 1.0)
    factor = keep.astype(f.dtype) * scale.astype(f.dtype)[:, :, None, None]
    return f * factor, factor


def baseline_forward(f: np.ndarray, cfg: BaselineConfig, mode: str, key: tuple = ()):
    """Dispatch on kind; eval mode is an identity with no context.  Cutout
    is not applied here: it edits input images in the data pipeline, not
    feature maps."""
    if mode == "eval":
        return f, None
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    rng = substream(*key) if key else substream(0)
    if cfg.kind is BaselineKind.DROPOUT:
        return dropout_forward(f, cfg.rate, rng)
    if cfg.kind is BaselineKind.SPATIAL_DROPOUT:
        return spatial_dropout_forward(f, cfg.rate, rng)
    if cfg.kind is BaselineKind.DROPBLOCK:
        return dropblock_forward(f, cfg.rate, cfg.block_size, rng)
    raise ConfigError(f"{cfg.kind.value} does not run as a feature-map hook")


def baseline_backward(grad: np.ndarray, factor: np.ndarray | None) -> np.ndarray:
    if factor is None:
        return grad
    return grad * factor


@dataclass
class BaselineRegularizer:
    """Network hook wrapper with the same surface as the channel-drop one."""

    cfg: BaselineConfig
    last_factor: np.ndarray | None = field(default=None, repr=False)

    @property
    def insert_pos(self) -> tuple[str, ...]:
        return self.cfg.insert_pos

    def forward(self, f: np.ndarray, mode: str, key: tuple = ()):
        out, factor = baseline_forward(f, self.cfg, mode, key)
        self.last_factor = factor
        return out, factor

    def backward(self, grad: np.ndarray, ctx) -> np.ndarray:
        return baseline_backward(grad, ctx)
