"""Channel correlation matrices.

Two metrics are supported and they rank "most correlated" in opposite
directions, so the matrix carries its orientation explicitly:

* max activation: squared Euclidean distance between the smoothed peak
  response positions of two channels (smaller = more correlated),
* bilinear pooling: cosine similarity of the flattened channels
  (larger = more correlated).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .tensor import ShapeError, avg_pool_3x3_same, l2_normalize_rows, matmul, peak_positions


class Metric(str, Enum):
    MAX_ACTIVATION = "ma"
    BILINEAR_POOLING = "bp"


class Orientation(str, Enum):
    DISTANCE_ASCENDING = "DistanceAscending"
    SIMILARITY_DESCENDING = "SimilarityDescending"


ORIENTATION_OF = {
    Metric.MAX_ACTIVATION: Orientation.DISTANCE_ASCENDING,
    Metric.BILINEAR_POOLING: Orientation.SIMILARITY_DESCENDING,
}


class DegenerateInputError(ValueError):
    """Fewer than two channels: pairwise correlation is undefined."""


@dataclass(frozen=True)
class CorrelationMatrix:
    values: np.ndarray  # (C, C)
    metric: Metric
    orientation: Orientation

    @property
    def num_channels(self) -> int:
        return self.values.shape[0]


def _check_feature_map(f: np.ndarray) -> None:
    if f.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) feature map, got shape {f.shape}")
    if f.shape[0] < 2:
        raise DegenerateInputError(f"need at least 2 channels, got {f.shape[0]}")


def max_activation_matrix(f: np.ndarray) -> CorrelationMatrix:
    """Squared distances between per-channel peak positions.

    Peaks are located on a smoothed temporary copy (3x3 average pooling);
    the feature map itself is left untouched.  The squared norm is kept as
    is since ranking does not need the square root.
    """
    _check_feature_map(f)
    pos = peak_positions(avg_pool_3x3_same(f)).astype(np.float64)
    diff = pos[:, None, :] - pos[None, :, :]
    values = (diff * diff).sum(axis=2)
    return CorrelationMatrix(values, Metric.MAX_ACTIVATION, Orientation.DISTANCE_ASCENDING)


def bilinear_correlation_matrix(f: np.ndarray) -> CorrelationMatrix:
    """Pairwise cosine similarity of the channels flattened to (C, H*W).

    Channels with (near-)zero norm normalize to zero rows, so they come out
    uncorrelated with everything, including themselves (explicit 0 on the
    diagonal) and can never be pulled into a dropped group.
    """
    _check_feature_map(f)
    c = f.shape[0]
    x = f.reshape(c, -1)
    normalized = l2_normalize_rows(x)
    values = matmul(normalized, normalized.T)
    return CorrelationMatrix(values, Metric.BILINEAR_POOLING, Orientation.SIMILARITY_DESCENDING)


def correlation_matrix(f: np.ndarray, metric: Metric) -> CorrelationMatrix:
    if metric == Metric.MAX_ACTIVATION:
        return max_activation_matrix(f)
    if metric == Metric.BILINEAR_POOLING:
        return bilinear_correlation_matrix(f)
    raise ValueError(f"unknown metric {metric!r}")


def rank_correlated(m: CorrelationMatrix, anchor: int) -> list[int]:
    """Channel indices sorted most-correlated-first with respect to
    ``anchor``.  The anchor itself is always first; remaining ties break to
    the lower channel index."""
    c = m.num_channels
    if not 0 <= anchor < c:
        raise IndexError(f"anchor {anchor} out of range for {c} channels")
    row = m.values[anchor]
    sign = 1.0 if m.orientation is Orientation.DISTANCE_ASCENDING else -1.0
    rest = sorted((j for j in range(c) if j != anchor), key=lambda j: (sign * row[j], j))
    return [anchor, *rest]


def correlation_to_csv(m: CorrelationMatrix) -> str:
    """CSV dump: header row ``metric,orientation,C`` then C rows of C values
    printed at full round-trip precision."""
    lines = [f"{m.metric.value},{m.orientation.value},{m.num_channels}"]
    for row in m.values:
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def correlation_from_csv(text: str) -> CorrelationMatrix:
    lines = [ln for ln in text.strip().splitlines() if ln]
    metric_s, orientation_s, c_s = lines[0].split(",")
    metric = Metric(metric_s)
    orientation = Orientation(orientation_s)
    c = int(c_s)
    if len(lines) != c + 1:
        raise ValueError(f"expected {c} data rows, found {len(lines) - 1}")
    values = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=np.float64)
    if values.shape != (c, c):
        raise ValueError(f"expected a {c}x{c} matrix, got {values.shape}")
    if orientation is not ORIENTATION_OF[metric]:
        raise ValueError(f"metric {metric.value} cannot carry orientation {orientation.value}")
    return CorrelationMatrix(values, metric, orientation)
