#!/usr/bin/env python3
"""Regenerate the bundled 60-junction, 2-reservoir looped grid."""
import argparse
from pathlib import Path

from gsidl.graph import grid_network, save_network

DEFAULT = Path(__file__).resolve().parents[1] / "src" / "gsidl" / "data" / "grid60.json"


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", type=Path, default=DEFAULT)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    g = grid_network(rows=6, cols=10, seed=args.seed, n_reservoirs=2)
    save_network(g, args.out)
    print(f"{args.out}: {len(g.junctions)} junctions, {len(g.reservoirs)} reservoirs, {g.n_pipes} pipes")


if __name__ == "__main__":
    main()
