"""Channel DropBlock: drop a correlated group of channels at once.

For each feature map in a batch, pick an anchor channel, rank every channel
by correlation with that anchor, and zero out the top group (anchor
included).  Survivors are scaled by 1/(1-gamma) so the expected activation
magnitude is preserved.  Evaluation mode is a strict identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .correlation import CorrelationMatrix, Metric, correlation_matrix, rank_correlated
from .rng import substream
from .tensor import ShapeError

INSERT_POINTS = ("v1", "v2", "v3", "v4", "v5")

DEFAULT_GAMMA = {
    Metric.MAX_ACTIVATION: 0.20,
    Metric.BILINEAR_POOLING: 0.05,
}


class Guidance(str, Enum):
    RANDOM = "random"
    ATTENTION = "attention"


class AllDroppedError(ValueError):
    """gamma rounds up to the full channel count: nothing would survive."""


@dataclass(frozen=True)
class DropMask:
    """Per-feature-map channel mask.  keep[c] == 0 means channel c is
    dropped; exactly dropped_count(gamma, C) zeros, anchor among them."""

    keep: np.ndarray  # (C,) uint8
    gamma: float
    anchor: int

    def __post_init__(self):
        if self.keep.ndim != 1 or self.keep.dtype != np.uint8:
            raise ShapeError("keep must be a 1-D uint8 vector")
        c = self.keep.shape[0]
        want = dropped_count(self.gamma, c)
        got = int((self.keep == 0).sum())
        if got != want:
            raise ValueError(f"mask drops {got} of {c} channels, expected {want}")
        if self.keep[self.anchor] != 0:
            raise ValueError(f"anchor channel {self.anchor} is not dropped")

    @property
    def num_channels(self) -> int:
        return self.keep.shape[0]

    def dropped_channels(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.keep == 0)]


@dataclass(frozen=True)
class CdbConfig:
    metric: Metric = Metric.MAX_ACTIVATION
    gamma: float | None = None
    guidance: Guidance = Guidance.RANDOM
    insert_pos: tuple[str, ...] = ("v2", "v3")

    def __post_init__(self):
        # accept the plain-string spellings so configs built by hand behave
        # exactly like parsed ones (identity checks downstream need members)
        object.__setattr__(self, "metric", Metric(self.metric))
        object.__setattr__(self, "guidance", Guidance(self.guidance))
        object.__setattr__(self, "insert_pos", tuple(self.insert_pos))
        if self.gamma is not None and not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.insert_pos:
            raise ValueError("insert_pos must name at least one tap")
        for p in self.insert_pos:
            if p not in INSERT_POINTS:
                raise ValueError(f"unknown insert position {p!r}")
        if len(set(self.insert_pos)) != len(self.insert_pos):
            raise ValueError("insert_pos contains duplicates")

    @property
    def effective_gamma(self) -> float:
        return DEFAULT_GAMMA[self.metric] if self.gamma is None else self.gamma


def dropped_count(gamma: float, c: int) -> int:
    """Number of channels to drop: gamma*C rounded half up, at least 1.
    The tiny nudge keeps exact .5 products (0.1 * 5, say) from landing just
    below the round boundary in binary floats."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if c < 2:
        raise ValueError(f"need at least 2 channels, got {c}")
    k = max(1, math.floor(gamma * c + 0.5 + 1e-9))
    if k >= c:
        raise AllDroppedError(f"gamma={gamma} drops all {c} channels")
    return k


def select_anchor(f: np.ndarray, guidance: Guidance, rng: np.random.Generator) -> int:
    """Anchor channel for one (C, H, W) feature map.  Random guidance draws
    uniformly; attention guidance takes the channel with the largest mean
    activation (first occurrence on ties) and consumes no randomness."""
    c = f.shape[0]
    if guidance is Guidance.RANDOM:
        return int(rng.integers(c))
    if guidance is Guidance.ATTENTION:
        return int(np.argmax(f.reshape(c, -1).mean(axis=1)))
    raise ValueError(f"unknown guidance {guidance!r}")


def build_drop_mask(m: CorrelationMatrix, anchor: int, gamma: float) -> DropMask:
    k = dropped_count(gamma, m.num_channels)
    order = rank_correlated(m, anchor)
    keep = np.ones(m.num_channels, dtype=np.uint8)
    keep[order[:k]] = 0
    return DropMask(keep, gamma, anchor)


def _apply_mask(f: np.ndarray, mask: DropMask, gamma: float) -> np.ndarray:
    # NEP 50: float32 array * python float stays float32, so kept channels
    # come out as exactly f * (1/(1-gamma)) in the input dtype.
    factor = np.where(mask.keep, f.dtype.type(1.0 / (1.0 - gamma)), f.dtype.type(0.0))
    return f * factor[:, None, None]


def cdb_forward(
    f: np.ndarray,
    cfg: CdbConfig,
    mode: str,
    key: tuple = (),
    masks: list[DropMask] | None = None,
) -> tuple[np.ndarray, list[DropMask] | None]:
    """Apply Channel DropBlock to a (N, C, H, W) batch.

    Training mode returns (out, masks); eval mode returns the input object
    itself untouched with no masks.  ``key`` routes each feature map to its
    own deterministic random substream.  Passing ``masks`` replays frozen
    masks instead of sampling (used by gradient checks)."""
    if mode == "eval":
        return f, None
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if f.ndim != 4:
        raise ShapeError(f"expected a (N, C, H, W) batch, got shape {f.shape}")
    gamma = cfg.effective_gamma
    n = f.shape[0]
    if masks is not None and len(masks) != n:
        raise ValueError(f"got {len(masks)} frozen masks for a batch of {n}")
    out = np.empty_like(f)
    built: list[DropMask] = []
    for i in range(n):
        if masks is None:
            m = correlation_matrix(f[i], cfg.metric)
            rng = substream(*key, i) if key else substream(0, i)
            anchor = select_anchor(f[i], cfg.guidance, rng)
            mask = build_drop_mask(m, anchor, gamma)
        else:
            mask = masks[i]
        out[i] = _apply_mask(f[i], mask, gamma)
        built.append(mask)
    return out, built


def cdb_backward(grad_out: np.ndarray, masks: list[DropMask], gamma: float) -> np.ndarray:
    """Gradient of the mask-and-scale: the same per-channel factors applied
    to the upstream gradient."""
    if grad_out.ndim != 4:
        raise ShapeError(f"expected a (N, C, H, W) gradient, got shape {grad_out.shape}")
    if len(masks) != grad_out.shape[0]:
        raise ValueError(
            f"have {len(masks)} masks for a gradient batch of {grad_out.shape[0]}"
        )
    out = np.empty_like(grad_out)
    for i, mask in enumerate(masks):
        out[i] = _apply_mask(grad_out[i], mask, gamma)
    return out


@dataclass
class CdbRegularizer:
    """Network hook wrapper.  forward() stashes nothing globally; the masks
    ride in the returned context so backward() stays reentrant."""

    cfg: CdbConfig
    last_masks: list[DropMask] | None = field(default=None, repr=False)

    @property
    def insert_pos(self) -> tuple[str, ...]:
        return self.cfg.insert_pos

    def forward(self, f: np.ndarray, mode: str, key: tuple = ()):
        out, masks = cdb_forward(f, self.cfg, mode, key)
        self.last_masks = masks
        return out, masks

    def backward(self, grad: np.ndarray, ctx) -> np.ndarray:
        if ctx is None:
            return grad
        return cdb_backward(grad, ctx, self.cfg.effective_gamma)
