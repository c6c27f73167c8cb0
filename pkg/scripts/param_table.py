#!/usr/bin/env python3
"""Print head parameter counts for the reference representation configs.

With the stock dimensions (4096-d units, 20 classes, hidden width 1000) this
reproduces the standard size table for STPP, BSP and k-part pooling heads.
"""

import argparse

from talkit.reprs import param_table


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dim", type=int, default=4096, help="per-unit feature dim")
    ap.add_argument("--classes", type=int, default=20)
    args = ap.parse_args()
    rows = param_table(args.dim, args.classes)
    width = max(len(label) for label, _ in rows)
    print(f"{'config'.ljust(width)}  params(M)")
    for label, count in rows:
        print(f"{label.ljust(width)}  {count / 1e6:9.2f}")


if __name__ == "__main__":
    main()
