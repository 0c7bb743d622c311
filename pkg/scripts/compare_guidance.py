#!/usr/bin/env python3
"""Random vs attention-guided anchor selection, paired by seed.

Runs the guidance grid (configs/grid_guidance.cfg by default) and prints
the per-seed pairing along with how often the random arm wins or ties.
"""

import argparse
from pathlib import Path

from cdblab.config import parse_grid
from cdblab.engine import ablate

REPO = Path(__file__).resolve().parent.parent


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--grid", default=str(REPO / "configs" / "grid_guidance.cfg"))
    ap.add_argument("--out", default="runs/guidance")
    args = ap.parse_args(argv)

    grid = parse_grid(Path(args.grid).read_text(encoding="utf-8"))
    results, table = ablate(grid, out_dir=args.out)
    print(table)

    arms = {c.label.get("cdb.guidance"): c for c in results}
    rand, att = arms.get("random"), arms.get("attention")
    if rand is None or att is None or rand.error or att.error:
        print("need both guidance arms to finish cleanly for the pairing")
        return 1
    wins = 0
    print("seed   random  attention")
    for seed, r_acc, a_acc in zip(grid.seeds, rand.final_test_accs,
                                  att.final_test_accs):
        mark = ">=" if r_acc >= a_acc else "< "
        wins += r_acc >= a_acc
        print(f"{seed:>4}   {r_acc:.4f} {mark} {a_acc:.4f}")
    print(f"random wins or ties on {wins}/{len(grid.seeds)} seeds")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
