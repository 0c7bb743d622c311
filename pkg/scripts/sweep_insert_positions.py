#!/usr/bin/env python3
"""Sweep the channel-drop hook over network taps and rank the results.

Runs the insert-position grid (configs/grid_insert_position.cfg by
default), writes the per-cell run artifacts plus ablation.csv under
--out, and prints the cells ranked by mean test accuracy.
"""

import argparse
from pathlib import Path

from cdblab.config import parse_grid
from cdblab.engine import ablate

REPO = Path(__file__).resolve().parent.parent


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--grid",
                    default=str(REPO / "configs" / "grid_insert_position.cfg"))
    ap.add_argument("--out", default="runs/insert-position")
    args = ap.parse_args(argv)

    grid = parse_grid(Path(args.grid).read_text(encoding="utf-8"))
    results, table = ablate(grid, out_dir=args.out)
    print(table)

    scored = [(float(sum(c.final_test_accs) / len(c.final_test_accs)), c)
              for c in results if c.error is None]
    scored.sort(key=lambda pair: -pair[0])
    print("ranked by mean test accuracy:")
    for mean, cell in scored:
        pos = cell.label.get("cdb.insert_pos", "?")
        print(f"  {pos:>8}  {mean:.4f}")
    for cell in results:
        if cell.error is not None:
            print(f"  {cell.label}: ERROR {cell.error}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
