#!/usr/bin/env python3
"""Head-to-head regularizer comparison on the synthetic task.

Runs the regularizer-family grid (configs/grid_regularizers.cfg by
default): no regularizer, dropout, spatial dropout, cutout, dropblock,
and channel drop.  Prints the merged CSV and a ranking by mean test
accuracy with the spread across seeds.
"""

import argparse
import statistics
from pathlib import Path

from cdblab.config import parse_grid
from cdblab.engine import ablate

REPO = Path(__file__).resolve().parent.parent


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--grid",
                    default=str(REPO / "configs" / "grid_regularizers.cfg"))
    ap.add_argument("--out", default="runs/regularizers")
    args = ap.parse_args(argv)

    grid = parse_grid(Path(args.grid).read_text(encoding="utf-8"))
    results, table = ablate(grid, out_dir=args.out)
    print(table)

    rows = []
    for cell in results:
        name = cell.label.get("regularizer", "?")
        if cell.error is not None:
            print(f"  {name}: ERROR {cell.error}")
            continue
        accs = cell.final_test_accs
        spread = statistics.pstdev(accs) if len(accs) > 1 else 0.0
        rows.append((statistics.mean(accs), spread, name))
    rows.sort(key=lambda row: -row[0])
    print("ranked by mean test accuracy:")
    for mean, spread, name in rows:
        print(f"  {name:>16}  {mean:.4f} +/- {spread:.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
