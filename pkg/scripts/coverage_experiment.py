"""Empirical coverage of the bonus-to-go confidence bounds as the dynamics-bonus factor is scaled down.

Usage:
    python scripts/coverage_experiment.py --trials 50 --scale 0 0.01 0.1 1
"""
import argparse
from dataclasses import replace

from polsbe.validation import check_backup_confidence, coverage_setup


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--scale", type=float, nargs="+", default=[0.0, 0.001, 0.01, 0.1, 1.0])
    args = ap.parse_args()
    model, adv, cfg, K, delta = coverage_setup()
    for scale in args.scale:
        run_cfg = replace(cfg, beta_p=cfg.beta_p * scale)
        res, counts = check_backup_confidence(model, adv, run_cfg, K, args.trials, delta)
        print(f"scale={scale:<7g} beta_p={run_cfg.beta_p:10.3f} violating trials={res.observed:.2f} "
              f"mean violations/trial={sum(counts) / len(counts):.1f} {'PASS' if res.passed else 'FAIL'}")


if __name__ == "__main__":
    main()
