"""Command line entry point: run, sweep, validate, gen-env, bench."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from .agent import ConfigError
from .harness import EnvironmentConfig, ExperimentConfig, SweepSpec, default_out_dir, run_experiment, run_sweep
from .linmdp import ModelValidationError, save_model

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seeds=(args.seed,))
    manifest = run_experiment(cfg, out_dir=args.out, jobs=args.jobs)
    for row in manifest["runs"]:
        print(f"seed={row['seed']:<4} {row['agent']:<26} regret={row['regret']:.4f}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    sweep = SweepSpec.load(args.config)
    if args.seed is not None:
        sweep = dataclasses.replace(sweep, base=dataclasses.replace(sweep.base, seeds=(args.seed,)))
    for row in run_sweep(sweep, out_dir=args.out, jobs=args.jobs):
        print(f"K={row['K']:<7} gamma={row['gamma']!s:<8} {row['agent']:<26} "
              f"mean={row['mean_regret']:.4f} std={row['std_regret']:.4f} n={row['n']}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    from .validation import report_json, run_suite

    results = run_suite(seed=args.seed or 0, quick=args.quick)
    for r in results:
        print(r.row())
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "validation.json").write_text(report_json(results) + "\n")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _cmd_gen_env(args) -> int:
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        doc = doc.get("environment", doc)
        env = EnvironmentConfig(**doc)
    else:
        env = EnvironmentConfig()
    if args.seed is not None:
        env = dataclasses.replace(env, seed=args.seed)
    model = env.build()
    out = Path(args.out or default_out_dir())
    path = out if out.suffix == ".json" else out / "environment.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, path)
    print(path)
    return EXIT_OK


def _cmd_bench(args) -> int:
    from .mgr import MgrParams, mgr_batch
    from .olspe import TransitionDataset, olspe

    rng = np.random.default_rng(args.seed or 0)
    for d in (4, 12, 32):
        params = MgrParams(M=8, N=16, gamma=0.15)
        x = rng.normal(size=(3, params.num_samples, d))
        x /= np.linalg.norm(x, axis=-1, keepdims=True)
        t0 = time.perf_counter()
        for _ in range(20):
            mgr_batch(x, params)
        t_mgr = (time.perf_counter() - t0) / 20
        S, A, H, n = 8, 4, 3, 256
        phi = rng.random((S, A, d))
        phi /= np.linalg.norm(phi, axis=-1, keepdims=True)
        ds = TransitionDataset.from_rollouts(rng.integers(0, S, (n, H)), rng.integers(0, A, (n, H)))
        probs = np.full((H, S, A), 1 / A)
        t0 = time.perf_counter()
        for _ in range(20):
            olspe(phi, ds, np.zeros((H, S, A)), 1.0, 1.0, 0.15, probs)
        t_ols = (time.perf_counter() - t0) / 20
        print(f"d={d:<3} mgr(H=3, M=8, N=16) {t_mgr * 1e3:8.3f} ms   olspe(n={n}, H=3) {t_ols * 1e3:8.3f} ms")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polsbe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, needs_config in (("run", _cmd_run, True), ("sweep", _cmd_sweep, True),
                                   ("validate", _cmd_validate, False), ("gen-env", _cmd_gen_env, False),
                                   ("bench", _cmd_bench, False)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=needs_config, help="JSON config path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory (default $POLSBE_OUT or ./results)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        if name == "validate":
            p.add_argument("--quick", action="store_true", help="reduced instance and replicate counts")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ModelValidationError, FileNotFoundError, TypeError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
