#!/usr/bin/env python3
"""Train on a CIFAR-10 subset with and without the channel-drop hook.

Looks for the binary batches in --data-dir, then $CDBLAB_CIFAR10_DIR,
then /root/data/cifar-10-batches-bin.  Trains one baseline run and one
channel-drop run at the subset scale from configs/cifar10_cdb.cfg and
prints the final accuracies side by side.
"""

import argparse
import os
from pathlib import Path

from cdblab.config import build_train_config
from cdblab.engine import train

SUBSET = {
    "dataset": "c10",
    "data.train_subset": "5000", "data.test_subset": "2000",
    "net.widths": "8&16&32&32&32",
    "optim.epochs": "20", "optim.batch_size": "128", "optim.lr0": "0.1",
}


def locate_data(cli_value):
    candidates = [cli_value, os.environ.get("CDBLAB_CIFAR10_DIR"),
                  "/root/data/cifar-10-batches-bin"]
    for cand in candidates:
        if cand and Path(cand, "data_batch_1.bin").exists():
            return cand
    return None


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data-dir", default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/c10-subset")
    args = ap.parse_args(argv)

    data_dir = locate_data(args.data_dir)
    if data_dir is None:
        print("no CIFAR-10 binaries found; pass --data-dir or set "
              "CDBLAB_CIFAR10_DIR to a directory holding data_batch_*.bin")
        return 2

    finals = {}
    for arm, extra in (("baseline", {}), ("cdb", {"cdb.metric": "ma"})):
        raw = dict(SUBSET, **extra)
        raw["data.dir"] = data_dir
        cfg = build_train_config(raw, seed=args.seed,
                                 out_dir=str(Path(args.out) / arm))
        record = train(cfg)
        finals[arm] = record.final_test_acc
        print(f"{arm}: test accuracy {record.final_test_acc:.4f} "
              f"(log in {cfg.out_dir})")
    delta = finals["cdb"] - finals["baseline"]
    print(f"channel drop vs baseline: {delta:+.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
