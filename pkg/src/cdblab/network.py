"""The experiment network: a stack of conv blocks plus a linear head.

Each block is conv(3x3) -> batchnorm -> relu -> maxpool(2x2), so block i
halves the spatial extent.  The activation leaving block i is tap "v{i+1}";
regularizer hooks attach to taps, and forward/backward can capture
activations and gradients at taps for saliency mapping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import substream
from .tensor import ShapeError, read_tensor, write_tensor
from .layers import (
    BatchNorm2d,
    Conv2d3x3,
    GlobalAvgPool,
    Linear,
    MaxPool2x2,
    ReLU,
)

_CKPT_MAGIC = "CDBCKPT 1"
MAX_BLOCKS = 5
DEFAULT_WIDTHS = (32, 64, 128, 256, 256)


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    widths: tuple[int, ...] = DEFAULT_WIDTHS
    num_classes: int = 10
    in_channels: int = 3

    def __post_init__(self):
        if not 1 <= len(self.widths) <= MAX_BLOCKS:
            raise ValueError(f"need 1..{MAX_BLOCKS} blocks, got {len(self.widths)}")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if any(a > b for a, b in zip(self.widths, self.widths[1:])):
            raise ValueError(f"widths must be nondecreasing, got {self.widths}")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")

    @property
    def num_blocks(self) -> int:
        return len(self.widths)

    @property
    def tap_names(self) -> tuple[str, ...]:
        return tuple(f"v{i + 1}" for i in range(self.num_blocks))


class Network:
    def __init__(self, spec: NetworkSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype).type
        self.blocks = []
        cin = spec.in_channels
        for i, width in enumerate(spec.widths):
            conv = Conv2d3x3(cin, width, substream(seed, "init", "conv", i), dtype=dtype)
            self.blocks.append(
                {"conv": conv, "bn": BatchNorm2d(width, dtype=dtype),
                 "relu": ReLU(), "pool": MaxPool2x2()}
            )
            cin = width
        self.gap = GlobalAvgPool()
        self.fc = Linear(spec.widths[-1], spec.num_classes,
                         substream(seed, "init", "fc"), dtype=dtype)
        self._tape = None

    # -- parameter plumbing ------------------------------------------------

    def _layer_items(self):
        for i, block in enumerate(self.blocks):
            yield f"block{i}.conv", block["conv"]
            yield f"block{i}.bn", block["bn"]
        yield "fc", self.fc

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, layer in self._layer_items():
            for k, v in layer.params.items():
                out[f"{prefix}.{k}"] = v
        return out

    def named_grads(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, layer in self._layer_items():
            for k, v in layer.grads.items():
                out[f"{prefix}.{k}"] = v
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for i, block in enumerate(self.blocks):
            out[f"block{i}.bn.running_mean"] = block["bn"].running_mean
            out[f"block{i}.bn.running_var"] = block["bn"].running_var
        return out

    def no_decay_names(self) -> set[str]:
        """Parameters excluded from weight decay: the batchnorm scale and
        shift vectors."""
        names = set()
        for i in range(len(self.blocks)):
            names.add(f"block{i}.bn.gamma")
            names.add(f"block{i}.bn.beta")
        return names

    def zero_grads(self):
        for _, layer in self._layer_items():
            layer.zero_grads()

    # -- forward / backward --------------------------------------------------

    def forward(
        self,
        x: np.ndarray,
        mode: str = "train",
        hook=None,
        key: tuple = (),
        capture=None,
    ) -> np.ndarray:
        """Run the stack.  ``hook`` is an optional regularizer object with
        ``insert_pos``, ``forward(f, mode, key)`` and ``backward(grad, ctx)``;
        it is applied right after the pool of every tap it names.  ``capture``
        is an optional dict that receives tap activations under their names
        (taken before the hook touches them)."""
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"expected (N, {self.spec.in_channels}, H, W) input, got shape {x.shape}"
            )
        if x.dtype.type is not self.dtype:
            raise ShapeError(
                f"input dtype {x.dtype} does not match network dtype "
                f"{np.dtype(self.dtype)}"
            )
        tape = []
        act = x
        for i, block in enumerate(self.blocks):
            for name in ("conv", "bn", "relu", "pool"):
                layer = block[name]
                act = layer.forward(act, mode)
                tape.append(("layer", layer))
            tap = f"v{i + 1}"
            tape.append(("tap", tap))
            if capture is not None:
                capture[tap] = act
            if hook is not None and tap in hook.insert_pos:
                act, ctx = hook.forward(act, mode, key=(*key, i))
                tape.append(("hook", hook, ctx))
        act = self.gap.forward(act, mode)
        tape.append(("layer", self.gap))
        act = self.fc.forward(act, mode)
        tape.append(("layer", self.fc))
        self._tape = tape
        return act

    def backward(self, dlogits: np.ndarray, capture=None) -> np.ndarray:
        """Propagate back through the tape of the last forward.  ``capture``
        optionally receives tap gradients under the tap names.  Returns the
        gradient with respect to the network input."""
        if self._tape is None:
            raise RuntimeError("backward called before forward")
        grad = dlogits
        for entry in reversed(self._tape):
            if entry[0] == "layer":
                grad = entry[1].backward(grad)
            elif entry[0] == "hook":
                grad = entry[1].backward(grad, entry[2])
            else:
                if capture is not None:
                    capture[entry[1]] = grad
        return grad


# -- checkpoints -------------------------------------------------------------


def _state_tensors(net: Network) -> dict[str, np.ndarray]:
    return {**net.named_params(), **net.named_buffers()}


def save_checkpoint(path, net: Network) -> None:
    """Text manifest followed by one named tensor per line: the name in
    utf-8, a newline, then the tensor blob."""
    tensors = _state_tensors(net)
    with open(path, "wb") as fh:
        header = [
            _CKPT_MAGIC,
            "widths=" + ",".join(str(w) for w in net.spec.widths),
            f"num_classes={net.spec.num_classes}",
            f"in_channels={net.spec.in_channels}",
            f"tensors={len(tensors)}",
        ]
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        for name, arr in tensors.items():
            fh.write(name.encode("utf-8") + b"\n")
            write_tensor(fh, arr)


def _read_line(fh) -> str:
    buf = bytearray()
    while True:
        ch = fh.read(1)
        if not ch:
            raise CheckpointError("truncated checkpoint: unterminated header line")
        if ch == b"\n":
            return buf.decode("utf-8")
        buf.extend(ch)


def load_checkpoint(path) -> tuple[NetworkSpec, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if _read_line(fh) != _CKPT_MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        fields = {}
        for _ in range(4):
            k, _, v = _read_line(fh).partition("=")
            fields[k] = v
        try:
            spec = NetworkSpec(
                widths=tuple(int(w) for w in fields["widths"].split(",")),
                num_classes=int(fields["num_classes"]),
                in_channels=int(fields["in_channels"]),
            )
            count = int(fields["tensors"])
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"malformed checkpoint header: {exc}") from exc
        tensors = {}
        for _ in range(count):
            name = _read_line(fh)
            tensors[name] = read_tensor(fh)
    return spec, tensors


def restore_network(path) -> Network:
    spec, tensors = load_checkpoint(path)
    try:
        dtype = tensors["fc.w"].dtype
    except KeyError:
        raise CheckpointError("checkpoint is missing the classifier weights")
    net = Network(spec, seed=0, dtype=dtype)
    want = _state_tensors(net)
    if set(want) != set(tensors):
        missing = sorted(set(want) - set(tensors))
        extra = sorted(set(tensors) - set(want))
        raise CheckpointError(f"state mismatch: missing {missing}, unexpected {extra}")
    for name, target in want.items():
        src = tensors[name]
        if src.shape != target.shape:
            raise CheckpointError(
                f"tensor {name} has shape {src.shape}, expected {target.shape}"
            )
        target[...] = src
    return net
