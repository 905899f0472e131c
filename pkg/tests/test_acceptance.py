"""Acceptance criteria, each at its stated tolerance; one PASS/FAIL line per criterion."""
import filecmp
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from polsbe.agent import (AgentConfig, dataset_freshness_violations, dataset_independence_violations, run_polsbe,
                          run_polsbe_simulator)
from polsbe.baselines import known_dynamics_omd_baseline, uniform_baseline
from polsbe.envgen import AdversarySpec, GeneratorSpec, make_adversary, random_linmdp
from polsbe.harness import ExperimentConfig, run_experiment
from polsbe.mgr import FiniteFeatureDistribution, MgrParams, mgr_bias_check, mgr_second_moment_check
from polsbe.validation import (binomial_slack, check_backup_confidence, check_mgr_suite, coverage_setup,
                               decomposition_suite, identity_suite)


@pytest.fixture
def report(capsys):
    def emit(number, passed, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number}: {'PASS' if passed else 'FAIL'}  {detail}")
    return emit


def test_1_exact_identities(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    results = identity_suite(500, rng) + decomposition_suite(500, rng)
    elapsed = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    names = {r.name for r in results}
    expected = {"bellman_consistency", "extended_value_difference", "occupancy_value_duality",
                "regret_decomposition_sum", "elliptical_potential", "omd", "blocking_omd"}
    ok = not failed and expected <= names and all("worst of 500" in r.detail for r in results) and elapsed < 120
    report(1, ok, f"{len(results)} identities x 500 instances, failures={failed}, {elapsed:.1f}s")
    assert ok


def test_2_mgr_guarantees(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    norm = check_mgr_suite(rng, replicates_bias=10, replicates_moment=2, norm_draws=10_000)[0]
    two = FiniteFeatureDistribution.of([[1.0, 0.0], [0.6, 0.8]], [0.7, 0.3])
    bias = mgr_bias_check(two, 0.25, 48, 2000, rng, eps=0.01, z=3.0)
    one = FiniteFeatureDistribution.of([[0.2], [1.0]])
    moment = mgr_second_moment_check(one, MgrParams(M=5164, N=22, gamma=0.3), 0.25, 200, rng, z=3.0)
    elapsed = time.perf_counter() - t0
    ok = norm.passed and bias.passed and moment.passed and elapsed < 300
    report(2, ok, f"norm gamma*max||S||={norm.observed:.4f}<=1 over 10^4 draws; bias {bias.deviation:.4f}<=0.01+"
                  f"{bias.ci:.4f}; second moment {moment.deviation:.4f}<=0+{moment.ci:.2e}; {elapsed:.1f}s")
    assert ok


def test_3_olspe_coverage(report):
    t0 = time.perf_counter()
    model, adv, cfg, K, delta = coverage_setup(0)
    trials = 50
    res, _ = check_backup_confidence(model, adv, cfg, K, trials, delta, seed=0)
    _, counts = check_backup_confidence(model, adv, replace(cfg, beta_p=0.0), K, trials, delta, seed=0)
    neg = sum(c > 0 for c in counts) / trials
    elapsed = time.perf_counter() - t0
    ok = res.passed and neg >= 0.9 and elapsed < 600
    report(3, ok, f"violating trials {res.observed:.3f}<=0.05+{binomial_slack(delta, trials):.3f} "
                  f"({res.detail}); beta_p=0 violates in {neg:.0%} of trials; {elapsed:.1f}s")
    assert ok


def oscillating(seed):
    model = random_linmdp(GeneratorSpec("tabular_onehot", 4, 3, 3, seed=0))
    H, d = model.horizon, model.feature_dim
    gamma = 0.15
    beta = 0.1 * 2 * H * math.sqrt(d * gamma)
    cfg = AgentConfig(eta=gamma / (2 * H), gamma=gamma, beta=beta, beta_p=beta, M=8, N=16, tau=32)
    return model, AdversarySpec("sinusoid", seed=seed, period=256, amplitude=0.5), cfg


def test_4_regret_behavior(report):
    t0 = time.perf_counter()
    seeds = range(10)
    reg = {K: {"polsbe": [], "uniform": [], "omd": []} for K in (2048, 8192)}
    for K in reg:
        for s in seeds:
            model, spec, cfg = oscillating(s)
            reg[K]["polsbe"].append(run_polsbe(model, make_adversary(spec, model), K, cfg, seed=s).regret)
            reg[K]["uniform"].append(uniform_baseline(model, make_adversary(spec, model), K).regret)
            reg[K]["omd"].append(known_dynamics_omd_baseline(model, make_adversary(spec, model), K, cfg.eta).regret)
    elapsed = time.perf_counter() - t0
    big = reg[8192]
    ratio = np.mean(big["polsbe"]) / np.mean(big["uniform"])
    a = ratio <= 0.8
    b = np.mean(big["polsbe"]) / 8192 < np.mean(reg[2048]["polsbe"]) / 2048
    wins = sum(o < p for o, p in zip(big["omd"], big["polsbe"]))
    c = wins >= 8
    ok = a and b and c and elapsed < 1800
    report(4, ok, f"(a) polsbe/uniform={ratio:.3f}<=0.8 {a}; (b) Reg/K {np.mean(reg[2048]['polsbe']) / 2048:.3f}->"
                  f"{np.mean(big['polsbe']) / 8192:.3f} {b}; (c) omd wins {wins}/10 {c}; {elapsed:.1f}s")
    assert ok


def test_5_simulator_variant(report):
    t0 = time.perf_counter()
    K, wins, fresh, indep = 2048, 0, True, True
    for s in range(10):
        model, spec, cfg = oscillating(s)
        blk = run_polsbe(model, make_adversary(spec, model), K, cfg, seed=s)
        sim = run_polsbe_simulator(model, make_adversary(spec, model), K, replace(cfg, variant="simulator", tau=256),
                                   seed=s)
        wins += sim.regret <= blk.regret
        fresh &= not dataset_freshness_violations(sim.datasets)
        indep &= not dataset_independence_violations(blk.datasets)
    elapsed = time.perf_counter() - t0
    ok = wins >= 8 and fresh and indep
    report(5, ok, f"simulator <= blocking in {wins}/10 seeds; freshness {fresh}; independence {indep}; "
                  f"{elapsed:.1f}s")
    assert ok


def test_6_determinism(report, tmp_path):
    cfg = ExperimentConfig.from_dict({
        "environment": {"kind": "tabular_onehot", "S": 4, "A": 3, "H": 3, "seed": 0},
        "adversary": {"kind": "sinusoid", "period": 64, "amplitude": 0.5},
        "agent": {"gamma": 0.15, "beta_scale": 0.1, "M": 8, "N": 16, "tau": 32},
        "K": 512, "seeds": [0, 1, 2, 3], "baselines": ["uniform", "known_dynamics_omd"], "diagnostics": True,
    })
    run_experiment(cfg, out_dir=tmp_path / "serial", jobs=1)
    run_experiment(cfg, out_dir=tmp_path / "parallel", jobs=4)
    run_experiment(cfg, out_dir=tmp_path / "again", jobs=1)
    files = sorted(p.name for p in (tmp_path / "serial").iterdir())
    same = all(filecmp.cmp(tmp_path / "serial" / f, tmp_path / other / f, shallow=False)
               for f in files for other in ("parallel", "again"))
    ok = same and len(files) == 13
    report(6, ok, f"{len(files)} files byte-identical across 1 and 4 workers and reruns: {same}")
    assert ok
