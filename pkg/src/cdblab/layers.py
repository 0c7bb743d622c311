"""Layers with hand-written backward passes.

Every layer keeps its parameters in ``.params`` and accumulates gradients
into ``.grads`` under the same keys.  ``forward`` caches whatever the
matching ``backward`` needs; a backward call must follow its own forward.
All layers preserve the dtype of their parameters end to end so the whole
stack can run in float64 for gradient checking.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, matmul

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class DegenerateBatchError(ValueError):
    """Batch statistics need at least two values per channel."""


class LabelError(ValueError):
    pass


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def zero_grads(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


class Conv2d3x3(Layer):
    """3x3 convolution, stride 1, zero padding 1 (shape preserving).

    Implemented as im2col plus one matrix product; the column matrix is
    cached for the weight gradient.  He-normal init, zero bias.
    """

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        std = float(np.sqrt(2.0 / (in_channels * 9)))
        w = rng.normal(0.0, std, size=(out_channels, in_channels, 3, 3))
        self.params = {"w": w.astype(dtype), "b": np.zeros(out_channels, dtype=dtype)}
        self.zero_grads()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self._cols = None
        self._x_shape = None

    @staticmethod
    def _im2col(x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
        # (n, c, h, w, 3, 3) -> (n*h*w, c*9)
        return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * w, c * 9)

    def forward(self, x: np.ndarray, mode: str = "train") -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"expected (N, {self.in_channels}, H, W), got shape {x.shape}"
            )
        n, _, h, w = x.shape
        cols = self._im2col(x)
        w_mat = self.params["w"].reshape(self.out_channels, -1)
        out = matmul(cols, w_mat.T) + self.params["b"]
        self._cols = cols
        self._x_shape = x.shape
        return out.reshape(n, h, w, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        n, c, h, w = self._x_shape
        dout_mat = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(-1, self.out_channels)
        self.grads["b"] += dout_mat.sum(axis=0)
        dw_mat = matmul(dout_mat.T, self._cols)
        self.grads["w"] += dw_mat.reshape(self.params["w"].shape)
        dcols = matmul(dout_mat, self.params["w"].reshape(self.out_channels, -1))
        dcols = dcols.reshape(n, h, w, c, 3, 3)
        dxp = np.zeros((n, c, h + 2, w + 2), dtype=dout.dtype)
        for dr in range(3):
            for dc in range(3):
                dxp[:, :, dr : dr + h, dc : dc + w] += dcols[:, :, :, :, dr, dc].transpose(
                    0, 3, 1, 2
                )
        return dxp[:, :, 1 : h + 1, 1 : w + 1]


class BatchNorm2d(Layer):
    """Per-channel batch normalization with biased variance.

    Train mode normalizes by batch statistics and nudges the running
    buffers; eval mode uses the running buffers and also supports a
    backward pass (the activation-gradient path only needs the fixed
    affine transform), which saliency mapping relies on.
    """

    def __init__(self, channels: int, dtype=np.float32):
        super().__init__()
        self.params = {
            "gamma": np.ones(channels, dtype=dtype),
            "beta": np.zeros(channels, dtype=dtype),
        }
        self.zero_grads()
        self.channels = channels
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def forward(self, x: np.ndarray, mode: str = "train") -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"expected (N, {self.channels}, H, W), got shape {x.shape}")
        n, c, h, w = x.shape
        if mode == "train":
            if n < 2:
                raise DegenerateBatchError(f"train-mode batch of {n}, need at least 2")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean += BN_MOMENTUM * (mean - self.running_mean)
            self.running_var += BN_MOMENTUM * (var - self.running_var)
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean[:, None, None]) * inv_std[:, None, None]
        self._cache = (xhat, inv_std, mode)
        return self.params["gamma"][:, None, None] * xhat + self.params["beta"][:, None, None]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xhat, inv_std, mode = self._cache
        self.grads["gamma"] += (dout * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] += dout.sum(axis=(0, 2, 3))
        dxhat = dout * self.params["gamma"][:, None, None]
        if mode != "train":
            return dxhat * inv_std[:, None, None]
        n, _, h, w = dout.shape
        m = n * h * w
        s1 = dxhat.sum(axis=(0, 2, 3))
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3))
        return (inv_std[:, None, None] / m) * (
            m * dxhat - s1[:, None, None] - xhat * s2[:, None, None]
        )


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x: np.ndarray, mode: str = "train") -> np.ndarray:
        # subgradient 0 at the kink
        self._mask = x > 0
        return np.where(self._mask, x, x.dtype.type(0.0))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dout, dout.dtype.type(0.0))


class MaxPool2x2(Layer):
    """2x2 max pooling, stride 2.  Ties route the gradient to the earliest
    position in row-major window order (0,0), (0,1), (1,0), (1,1)."""

    def __init__(self):
        super().__init__()
        self._idx = None
        self._x_shape = None

    @staticmethod
    def _windows(x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        return np.ascontiguousarray(
            x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        ).reshape(n, c, h // 2, w // 2, 4)

    def forward(self, x: np.ndarray, mode: str = "train") -> np.ndarray:
        if x.ndim != 4:
            raise ShapeError(f"expected a (N, C, H, W) batch, got shape {x.shape}")
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"pooling needs even spatial extents, got {h}x{w}")
        win = self._windows(x)
        idx = win.argmax(axis=-1)
        self._idx = idx
        self._x_shape = x.shape
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        n, c, h, w = self._x_shape
        dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
        np.put_along_axis(dwin, self._idx[..., None], dout[..., None], axis=-1)
        return (
            dwin.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )


class GlobalAvgPool(Layer):
    def __init__(self):
        super().__init__()
        self._spatial = None

    def forward(self, x: np.ndarray, mode: str = "train") -> np.ndarray:
        if x.ndim != 4:
            raise ShapeError(f"expected a (N, C, H, W) batch, got shape {x.shape}")
        self._spatial = x.shape[2:]
        return x.mean(axis=(2, 3))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        h, w = self._spatial
        scale = dout.dtype.type(1.0 / (h * w))
        return np.broadcast_to((dout * scale)[:, :, None, None], dout.shape + (h, w)).copy()


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        std = float(np.sqrt(1.0 / in_features))
        w = rng.normal(0.0, std, size=(in_features, out_features))
        self.params = {"w": w.astype(dtype), "b": np.zeros(out_features, dtype=dtype)}
        self.zero_grads()
        self.in_features = in_features
        self._x = None

    def forward(self, x: np.ndarray, mode: str = "train") -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"expected (N, {self.in_features}), got shape {x.shape}")
        self._x = x
        return matmul(x, self.params["w"]) + self.params["b"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.grads["w"] += matmul(self._x.T, dout)
        self.grads["b"] += dout.sum(axis=0)
        return matmul(dout, self.params["w"].T)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its logit gradient.

    Returns (loss, dlogits) where dlogits already carries the 1/N factor.
    Shifted by the row max before exponentiation, so large logits are safe.
    """
    if logits.ndim != 2:
        raise ShapeError(f"expected (N, K) logits, got shape {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"labels shape {labels.shape} does not match batch of {logits.shape[0]}"
        )
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise LabelError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_p = shifted - np.log(total)
    loss = float(-log_p[np.arange(n), labels].mean())
    dlogits = exp / total
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits.astype(logits.dtype)
