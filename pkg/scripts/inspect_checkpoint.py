#!/usr/bin/env python3
"""Render every inspection view for one checkpoint and one test image.

Writes a class-activation heatmap (PGM plus sidecar), the channel
correlation matrix CSV for both metrics, and a drop-frequency report to
--out.  Defaults assume a synthetic-data checkpoint; pass the same
--synth-spec / --dataset flags you would give `cdb-lab eval`.
"""

import argparse
from pathlib import Path

from cdblab.cli import main as cli_main


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--image-index", type=int, default=0)
    ap.add_argument("--layer", default=None)
    ap.add_argument("--out", default="runs/inspection")
    ap.add_argument("--dataset", choices=("c10", "c100", "synth"),
                    default="synth")
    ap.add_argument("--data-dir", default=None)
    ap.add_argument("--synth-spec", default=None)
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    common = ["--checkpoint", args.checkpoint,
              "--image-index", str(args.image_index),
              "--dataset", args.dataset]
    if args.layer:
        common += ["--layer", args.layer]
    if args.data_dir:
        common += ["--data-dir", args.data_dir]
    if args.synth_spec:
        common += ["--synth-spec", args.synth_spec]

    jobs = [
        ("cam", ["--out", str(out / "cam.pgm")]),
        ("corr", ["--metric", "ma", "--out", str(out / "corr_ma.csv")]),
        ("corr", ["--metric", "bp", "--out", str(out / "corr_bp.csv")]),
        ("drops", ["--out", str(out / "drops.csv")]),
    ]
    for mode, extra in jobs:
        code = cli_main(["inspect", mode, *common, *extra])
        if code != 0:
            return code
    print(f"inspection views written under {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
