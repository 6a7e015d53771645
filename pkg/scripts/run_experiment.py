#!/usr/bin/env python3
"""Run the bundled-grid experiment and print the headline tables."""
import argparse
import logging
from pathlib import Path

from gsidl.experiment import ExperimentConfig, run_experiment

DEFAULT = Path(__file__).resolve().parent / "configs" / "bundled.json"


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("config", nargs="?", type=Path, default=DEFAULT)
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    cfg = ExperimentConfig.from_file(args.config)
    if args.out:
        cfg.output_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.workers = args.workers
    ev = run_experiment(cfg)

    print("single dictionary (test accuracy, mean over runs)")
    for r in ev["single_dictionary"]:
        print(f"  {r['virtual']:<28s} {100 * r['mean']:6.2f} +- {100 * r['std']:.2f}")
    print("training time")
    for r in ev["timing"]["training"]:
        print(f"  {r['n_virtual']:3d} virtual  {r['seconds']:.3f} s")
    print("multiple dictionaries")
    for r in ev["multi_dictionary"]:
        print(f"  {r['dictionaries']}  MD-DL {100 * r['MD-DL']['mean']:6.2f}  MD-GSI-DL {100 * r['MD-GSI-DL']['mean']:6.2f}")
    print(f"reports in {cfg.output_dir}")


if __name__ == "__main__":
    main()
