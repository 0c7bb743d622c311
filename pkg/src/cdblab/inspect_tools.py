"""Post-hoc model inspection: saliency heatmaps, correlation dumps, and
empirical channel-drop frequencies.  Everything here runs the network in
eval mode and leaves no state behind."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .cdb import CdbConfig, Guidance, build_drop_mask, select_anchor
from .config import ConfigError
from .correlation import CorrelationMatrix, correlation_matrix, correlation_to_csv
from .network import Network
from .rng import substream
from .tensor import ShapeError


@dataclass(frozen=True)
class Heatmap:
    values: np.ndarray  # (H, W), nonnegative, scaled so max == 1 unless all zero
    layer: str
    class_index: int
    raw_min: float
    raw_max: float

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ShapeError(f"heatmap must be 2-D, got shape {self.values.shape}")
        if self.values.size and self.values.min() < 0:
            raise ValueError("heatmap values must be nonnegative")
        top = float(self.values.max())
        if top != 0.0 and abs(top - 1.0) > 1e-6:
            raise ValueError(f"heatmap max must be 1 unless all zero, got {top}")


def _eval_capture(net: Network, image: np.ndarray, class_index: int, layer: str):
    if layer not in net.spec.tap_names:
        raise ConfigError(
            f"unknown layer {layer!r}, expected one of {net.spec.tap_names}"
        )
    if not 0 <= class_index < net.spec.num_classes:
        raise ValueError(
            f"class index {class_index} out of range for {net.spec.num_classes} classes"
        )
    acts: dict[str, np.ndarray] = {}
    logits = net.forward(image[None], mode="eval", capture=acts)
    onehot = np.zeros_like(logits)
    onehot[0, class_index] = 1.0
    grads: dict[str, np.ndarray] = {}
    net.backward(onehot, capture=grads)
    return acts[layer][0], grads[layer][0]


def grad_cam(net: Network, image: np.ndarray, class_index: int, layer: str) -> Heatmap:
    """Class activation map at a tap: channel weights are the spatial means
    of the class-score gradient, the map is the relu of the weighted
    activation sum, scaled by its own maximum (so a map proportional to one
    channel stays proportional after scaling)."""
    activations, gradients = _eval_capture(net, image, class_index, layer)
    alpha = gradients.mean(axis=(1, 2), dtype=np.float64)
    raw = (alpha[:, None, None] * activations.astype(np.float64)).sum(axis=0)
    raw = np.maximum(raw, 0.0)
    raw_min, raw_max = float(raw.min()), float(raw.max())
    values = raw / raw_max if raw_max > 0 else raw
    return Heatmap(values, layer, class_index, raw_min, raw_max)


def heatmap_peak(h: Heatmap) -> tuple[int, int]:
    """(row, col) of the maximum cell, first occurrence in row-major order."""
    flat = int(np.argmax(h.values))
    return flat // h.values.shape[1], flat % h.values.shape[1]


def write_pgm(path, h: Heatmap) -> None:
    """8-bit binary PGM plus a sidecar <path>.txt holding the scaling
    metadata the image bytes cannot carry."""
    height, width = h.values.shape
    quantized = np.round(h.values * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(quantized.tobytes())
    with open(f"{path}.txt", "w", encoding="utf-8") as fh:
        fh.write(f"layer={h.layer}\n")
        fh.write(f"class_index={h.class_index}\n")
        fh.write(f"raw_min={h.raw_min!r}\n")
        fh.write(f"raw_max={h.raw_max!r}\n")
        fh.write(f"height={height}\nwidth={width}\n")


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P5":
            raise ValueError(f"{path} is not a binary PGM file")
        width, height = (int(t) for t in fh.readline().split())
        maxval = int(fh.readline())
        if maxval != 255:
            raise ValueError(f"expected 8-bit PGM, got maxval {maxval}")
        data = np.frombuffer(fh.read(width * height), dtype=np.uint8)
    return data.reshape(height, width)


def layer_feature_map(net: Network, image: np.ndarray, layer: str) -> np.ndarray:
    if layer not in net.spec.tap_names:
        raise ConfigError(
            f"unknown layer {layer!r}, expected one of {net.spec.tap_names}"
        )
    acts: dict[str, np.ndarray] = {}
    net.forward(image[None], mode="eval", capture=acts)
    return acts[layer][0]


def dump_correlation(net: Network, image: np.ndarray, layer: str, metric) -> str:
    """CSV of the correlation matrix of one image's feature map at a tap."""
    return correlation_to_csv(layer_correlation(net, image, layer, metric))


def layer_correlation(net: Network, image: np.ndarray, layer: str, metric) -> CorrelationMatrix:
    return correlation_matrix(layer_feature_map(net, image, layer), metric)


def drop_frequencies(f: np.ndarray, cfg: CdbConfig, trials: int,
                     seed: int = 0, key: tuple = ()) -> np.ndarray:
    """Empirical per-channel drop frequency over independent mask draws on
    one fixed feature map.  The map is fixed, so the mask is a function of
    the anchor alone: enumerate the per-anchor masks once and tally anchor
    draws instead of rebuilding masks per trial."""
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    m = correlation_matrix(f, cfg.metric)
    gamma = cfg.effective_gamma
    c = f.shape[0]
    dropped = np.stack(
        [build_drop_mask(m, a, gamma).keep == 0 for a in range(c)]
    ).astype(np.int64)
    rng = substream(seed, "drops", *key)
    if cfg.guidance is Guidance.RANDOM:
        anchor_counts = np.bincount(rng.integers(0, c, size=trials), minlength=c)
    else:
        anchor_counts = np.zeros(c, dtype=np.int64)
        anchor_counts[select_anchor(f, cfg.guidance, rng)] = trials
    return (anchor_counts @ dropped) / float(trials)


def drop_report(net: Network, images: np.ndarray, cfg: CdbConfig, trials: int,
                layer: str, seed: int = 0) -> str:
    """Per-image and averaged channel drop frequencies as CSV.  Rows are
    keyed by image index; the final row is the across-image mean."""
    if images.ndim != 4:
        raise ShapeError(f"expected a (N, 3, H, W) image batch, got {images.shape}")
    rows = []
    for i in range(images.shape[0]):
        f = layer_feature_map(net, images[i], layer)
        rows.append(drop_frequencies(f, cfg, trials, seed=seed, key=(i,)))
    table = np.stack(rows)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image"] + [f"ch{c}" for c in range(table.shape[1])])
    for i, freqs in enumerate(rows):
        writer.writerow([i] + [repr(float(v)) for v in freqs])
    writer.writerow(["mean"] + [repr(float(v)) for v in table.mean(axis=0)])
    return buf.getvalue()
