"""Training, evaluation, and the ablation grid runner.

Every source of randomness is a named substream of the run seed, keyed by
what it is for and when it happens (epoch, step, sample index), so eval
passes never perturb the training trajectory and runs replay exactly.
"""

from __future__ import annotations

import csv
import io
import os
import time
from dataclasses import dataclass

import numpy as np

from .baselines import BaselineKind, BaselineRegularizer, cutout_apply
from .cdb import CdbRegularizer
from .config import GridSpec, TrainConfig, build_train_config, grid_cells
from .data import Dataset, augment, generate_synthetic, load_cifar
from .layers import softmax_cross_entropy
from .network import Network, restore_network, save_checkpoint
from .optim import SgdState, cosine_lr, sgd_step
from .rng import substream
from .tensor import NumericError

LOG_HEADER = ("epoch", "lr", "train_loss", "train_acc", "test_acc", "seconds")
CHECKPOINT_NAME = "model.ckpt"
LOG_NAME = "log.csv"


class DivergedError(RuntimeError):
    def __init__(self, epoch: int, step: int):
        super().__init__(f"loss became non-finite at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_acc: float
    seconds: float


@dataclass
class RunRecord:
    epochs: list[EpochStats]
    checkpoint_path: str | None
    network: Network | None = None

    @property
    def final_test_acc(self) -> float:
        if not self.epochs:
            raise ValueError("run has no completed epochs")
        return self.epochs[-1].test_acc

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for row in self.epochs:
            writer.writerow([row.epoch, repr(row.lr), repr(row.train_loss),
                             repr(row.train_acc), repr(row.test_acc),
                             repr(row.seconds)])
        return buf.getvalue()


def load_datasets(cfg: TrainConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "synth":
        train, test = generate_synthetic(cfg.synth)
    else:
        train, test = load_cifar(cfg.data_dir, cfg.dataset)
    if cfg.train_subset and cfg.train_subset < len(train):
        perm = substream(cfg.seed, "subset", "train").permutation(len(train))
        train = train.subset(np.sort(perm[: cfg.train_subset]))
    if cfg.test_subset and cfg.test_subset < len(test):
        perm = substream(cfg.seed, "subset", "test").permutation(len(test))
        test = test.subset(np.sort(perm[: cfg.test_subset]))
    return train, test


def _make_hook(cfg: TrainConfig):
    """Feature-map hook for the configured regularizer.  Cutout is not a
    hook: it edits input images during batch assembly."""
    if cfg.cdb is not None:
        return CdbRegularizer(cfg.cdb)
    if cfg.baseline is not None and cfg.baseline.kind is not BaselineKind.CUTOUT:
        return BaselineRegularizer(cfg.baseline)
    return None


def _assemble_batch(cfg: TrainConfig, train: Dataset, indices, epoch: int):
    if not cfg.augment and (cfg.baseline is None
                            or cfg.baseline.kind is not BaselineKind.CUTOUT):
        return train.images[indices], train.labels[indices]
    images = np.empty_like(train.images[indices])
    for j, di in enumerate(int(i) for i in indices):
        img = train.images[di]
        if cfg.augment:
            img = augment(img, substream(cfg.seed, "aug", epoch, di), flip=cfg.flip)
        if cfg.baseline is not None and cfg.baseline.kind is BaselineKind.CUTOUT:
            img = cutout_apply(img, cfg.baseline.block_size,
                               substream(cfg.seed, "cutout", epoch, di))
        images[j] = img
    return images, train.labels[indices]


def _batch_indices(n: int, batch_size: int, perm: np.ndarray):
    """Full batches only; a dataset smaller than one batch trains as a
    single short batch."""
    if n < batch_size:
        return [perm]
    return [perm[i : i + batch_size] for i in range(0, n - batch_size + 1, batch_size)]


def accuracy(net: Network, dataset: Dataset, batch_size: int = 256) -> float:
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.images[start : start + batch_size]
        y = dataset.labels[start : start + batch_size]
        logits = net.forward(x, mode="eval")
        correct += int((logits.argmax(axis=1) == y).sum())
    return correct / len(dataset)


def train(cfg: TrainConfig) -> RunRecord:
    train_set, test_set = load_datasets(cfg)
    net = Network(cfg.net, seed=cfg.seed)
    hook = _make_hook(cfg)
    params = net.named_params()
    state = SgdState.create(params, cfg.optim, no_decay=net.no_decay_names())

    rows: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        started = time.monotonic()
        lr = cosine_lr(epoch, cfg.epochs, cfg.optim.lr0)
        perm = substream(cfg.seed, "shuffle", epoch).permutation(len(train_set))
        loss_sum = 0.0
        correct = 0
        seen = 0
        step = 0
        try:
            for step, indices in enumerate(_batch_indices(len(train_set),
                                                          cfg.batch_size, perm)):
                x, y = _assemble_batch(cfg, train_set, indices, epoch)
                logits = net.forward(x, mode="train", hook=hook,
                                     key=(cfg.seed, "reg", epoch, step))
                loss, dlogits = softmax_cross_entropy(logits, y)
                if not np.isfinite(loss):
                    raise DivergedError(epoch, step)
                net.zero_grads()
                net.backward(dlogits)
                sgd_step(params, net.named_grads(), state, lr)
                loss_sum += loss * len(indices)
                correct += int((logits.argmax(axis=1) == y).sum())
                seen += len(indices)
            # batch norm can keep train-mode activations finite while the
            # parameters explode; the eval pass sees the raw scale first
            test_acc = accuracy(net, test_set)
        except NumericError as exc:
            raise DivergedError(epoch, step) from exc
        rows.append(EpochStats(
            epoch=epoch + 1, lr=lr,
            train_loss=loss_sum / seen, train_acc=correct / seen,
            test_acc=test_acc, seconds=time.monotonic() - started,
        ))

    record = RunRecord(rows, None, network=net)
    if cfg.out_dir is not None:
        os.makedirs(cfg.out_dir, exist_ok=True)
        ckpt = os.path.join(cfg.out_dir, CHECKPOINT_NAME)
        save_checkpoint(ckpt, net)
        with open(os.path.join(cfg.out_dir, LOG_NAME), "w", encoding="utf-8") as fh:
            fh.write(record.to_csv())
        record.checkpoint_path = ckpt
    return record


def evaluate(checkpoint_path, dataset: Dataset) -> float:
    return accuracy(restore_network(checkpoint_path), dataset)


# -- ablation grid ---------------------------------------------------------------


@dataclass
class CellResult:
    label: dict[str, str]
    seeds: tuple[int, ...]
    records: list[RunRecord]
    error: str | None = None

    @property
    def final_test_accs(self) -> list[float]:
        return [r.final_test_acc for r in self.records]


ABLATE_HEADER_PREFIX = ("cell",)
ABLATE_HEADER_SUFFIX = ("seeds", "status", "error",
                        "test_acc_mean", "test_acc_stddev",
                        "train_acc_mean", "train_loss_mean")


def ablate(grid: GridSpec, out_dir=None) -> tuple[list[CellResult], str]:
    """One training run per (cell, seed); per-cell failures are recorded and
    the remaining cells still run.  Returns the cell results and the merged
    CSV (also written to out_dir/ablation.csv when out_dir is given)."""
    results: list[CellResult] = []
    for label, raw in grid_cells(grid):
        records = []
        error = None
        try:
            for seed in grid.seeds:
                cell_dir = None
                if out_dir is not None:
                    slug = "_".join(f"{k.replace('.', '-')}={v.replace('&', '+')}"
                                    for k, v in label.items()) or "base"
                    cell_dir = os.path.join(out_dir, f"{slug}_seed{seed}")
                cfg = build_train_config(dict(raw), seed=seed, out_dir=cell_dir)
                records.append(train(cfg))
        except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
            error = f"{type(exc).__name__}: {exc}"
        results.append(CellResult(dict(label), grid.seeds, records, error))

    axis_keys = list(grid.axes)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ABLATE_HEADER_PREFIX + tuple(axis_keys) + ABLATE_HEADER_SUFFIX)
    for cell in results:
        name = "|".join(f"{k}={cell.label[k]}" for k in axis_keys) or "base"
        if cell.error is None and cell.records:
            accs = np.array([r.final_test_acc for r in cell.records])
            train_accs = np.array([r.epochs[-1].train_acc for r in cell.records])
            losses = np.array([r.epochs[-1].train_loss for r in cell.records])
            stats = [repr(float(accs.mean())), repr(float(accs.std())),
                     repr(float(train_accs.mean())), repr(float(losses.mean()))]
            status = "ok"
        else:
            stats = ["", "", "", ""]
            status = "error"
        writer.writerow([name] + [cell.label[k] for k in axis_keys]
                        + [",".join(str(s) for s in cell.seeds), status,
                           cell.error or ""] + stats)
    table = buf.getvalue()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "ablation.csv"), "w", encoding="utf-8") as fh:
            fh.write(table)
    return results, table
