"""Executable checks of the identities and bounds the algorithm's analysis relies on.

Exact checks compare an observed residual or quantity to a bound. Statistical
checks carry a Monte-Carlo confidence half-width ``ci`` and pass iff
``observed <= bound + ci``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .agent import AgentConfig, RegretReport, run_polsbe
from .envgen import AdversarySpec, GeneratorSpec, make_adversary, normalize_costs, random_linmdp
from .linmdp import (DP_TOL, LinearMdpModel, SoftmaxPolicy, occupancy, policy_probs, q_vectors,
                     value_dp)
from .mgr import (FiniteFeatureDistribution, MgrParams, mgr_batch, mgr_bias_check,
                  mgr_second_moment_check, mgr_theory_params)
from .olspe import build_gram, dynamics_bonus

IDENTITY_TOL = 1e-8


@dataclass
class CheckResult:
    name: str
    kind: str  # "exact" or "statistical"
    observed: float
    bound: float
    passed: bool
    ci: float | None = None
    detail: str = ""

    def row(self) -> str:
        ci = "" if self.ci is None else f" +/- {self.ci:.3g}"
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<42} {self.observed:.6g} <= {self.bound:.6g}{ci}  {self.detail}"


def _exact(name, observed, bound, detail="", tol=0.0):
    """``tol`` absorbs floating-point rounding only; the reported bound is the analytic one."""
    return CheckResult(name, "exact", float(observed), float(bound), bool(observed <= bound + tol), None, detail)


def _stat(name, observed, bound, ci, detail=""):
    return CheckResult(name, "statistical", float(observed), float(bound), bool(observed <= bound + ci),
                       float(ci), detail)


def random_policy(model: LinearMdpModel, rng, temperature=2.0) -> np.ndarray:
    logits = rng.normal(size=(model.horizon, model.num_states, model.num_actions)) * temperature
    return SoftmaxPolicy(logits, 1.0).probs


def random_instance(rng, max_states=4, max_actions=3, max_horizon=4, kind=None) -> LinearMdpModel:
    S = int(rng.integers(1, max_states + 1))
    A = int(rng.integers(1, max_actions + 1))
    H = int(rng.integers(1, max_horizon + 1))
    kind = kind or ("tabular_onehot" if rng.random() < 0.5 else "simplex_mixture")
    d = int(rng.integers(1, 5))
    return random_linmdp(GeneratorSpec(kind, S, A, H, d=d if kind == "simplex_mixture" else None), rng)


# ---------------------------------------------------------------- exact identities

def check_bellman(model, policy, loss) -> CheckResult:
    probs = policy_probs(policy)
    t = value_dp(model, probs, loss)
    P = model.transitions
    res = 0.0
    for h in range(model.horizon):
        nxt = P[h] @ t.V[h + 1] if h < model.horizon - 1 else 0.0
        res = max(res, np.abs(t.Q[h] - loss[h] - nxt).max(), np.abs(t.V[h] - (probs[h] * t.Q[h]).sum(-1)).max())
    return _exact("bellman_consistency", res, DP_TOL)


def check_duality(model, policy, loss) -> CheckResult:
    V = value_dp(model, policy, loss).V[0, model.s1]
    occ = occupancy(model, policy).d
    return _exact("occupancy_value_duality", abs(np.sum(occ * loss) - V), DP_TOL * max(1.0, abs(V)))


def check_q_vector(model, policy, costs) -> CheckResult:
    """phi^T q_h reproduces Q_h, and ||q_h|| <= H sqrt(d)."""
    q = q_vectors(model, policy, costs)
    Q = value_dp(model, policy, model.losses(costs)).Q
    res = np.abs(np.einsum("sad,hd->hsa", model.phi, q) - Q).max()
    norm_excess = np.linalg.norm(q, axis=-1).max() - model.horizon * math.sqrt(model.feature_dim)
    return _exact("q_vector", max(res, norm_excess), 1e-9)


def extended_value_difference_residual(model, pi, pi_prime, q_hat, loss) -> float:
    pi, pi_prime = policy_probs(pi), policy_probs(pi_prime)
    H = model.horizon
    v_hat = (pi * q_hat).sum(-1)  # (H, S)
    v_prime = value_dp(model, pi_prime, loss).V[0, model.s1]
    occ = occupancy(model, pi_prime).d
    occ_s = occ.sum(-1)
    P = model.transitions
    first = np.einsum("hs,hsa->", occ_s, q_hat * (pi - pi_prime))
    second = 0.0
    for h in range(H):
        nxt = P[h] @ v_hat[h + 1] if h < H - 1 else 0.0
        second += np.sum(occ[h] * (q_hat[h] - loss[h] - nxt))
    return abs((v_hat[0, model.s1] - v_prime) - (first + second))


def check_extended_value_difference(model, pi, pi_prime, q_hat=None, loss=None, rng=None) -> CheckResult:
    rng = np.random.default_rng(0) if rng is None else rng
    shape = (model.horizon, model.num_states, model.num_actions)
    q_hat = rng.normal(size=shape) if q_hat is None else q_hat
    loss = rng.uniform(-1, 1, size=shape) if loss is None else loss
    res = extended_value_difference_residual(model, pi, pi_prime, q_hat, loss)
    return _exact("extended_value_difference", res, IDENTITY_TOL)


def check_decomposition(model, report: RegretReport) -> CheckResult:
    """bias1 + bias2 + omd + exploration equals the exact per-episode regret."""
    diag = report.diagnostics
    total = diag["bias1"] + diag["bias2"] + diag["omd"] + diag["exploration"]
    res = np.abs(total - report.per_episode).max()
    return _exact("regret_decomposition_sum", res, IDENTITY_TOL)


def elliptical_potential(samples, lam: float = 1.0) -> float:
    samples = np.asarray(samples, dtype=float)
    d = samples.shape[-1] if samples.ndim == 2 else 1
    gram = lam * np.eye(d)
    total = 0.0
    for phi in samples:
        total += phi @ np.linalg.solve(gram, phi)
        gram += np.outer(phi, phi)
    return float(total)


def check_elliptical_potential(samples, lam: float = 1.0, d: int | None = None) -> CheckResult:
    samples = np.asarray(samples, dtype=float)
    if lam < 1:
        raise ValueError("lambda >= 1 required")
    n = len(samples)
    d = samples.shape[-1] if d is None else d
    bound = 2 * d * math.log(1 + n / (d * lam))
    return _exact("elliptical_potential", elliptical_potential(samples.reshape(n, d), lam), bound, tol=1e-12 * bound)


def exp_weights_iterates(losses, eta, tau: int = 1) -> np.ndarray:
    """Iterates x_k of (blocked) exponential weights from uniform; block loss (1/tau) sum g_k."""
    losses = np.asarray(losses, dtype=float)
    K, n = losses.shape
    xs = np.empty((K, n))
    cum = np.zeros(n)
    for start in range(0, K, tau):
        z = -eta * cum
        x = np.exp(z - z.max())
        xs[start:start + tau] = x / x.sum()
        cum += losses[start:start + tau].sum(0) / tau
    return xs


def check_omd(losses, eta: float) -> CheckResult:
    """Exponential weights regret against the best single action versus log(n)/eta + eta sum x g^2."""
    xs, regret, second, n, _ = _exp_weights_regret(losses, eta, 1)
    bound = math.log(n) / eta + second
    return _exact("omd", regret, bound, tol=1e-9 * max(1.0, abs(bound)))


def check_blocking_omd(losses, eta: float, tau: int) -> CheckResult:
    """Blocked update regret versus tau log(n)/eta + tau max|g| + eta sum x g^2."""
    xs, regret, second, n, gmax = _exp_weights_regret(losses, eta, tau)
    bound = tau * math.log(n) / eta + tau * gmax + second
    return _exact("blocking_omd", regret, bound, tol=1e-9 * max(1.0, abs(bound)))


def _exp_weights_regret(losses, eta, tau):
    losses = np.asarray(losses, dtype=float)
    if (eta * losses < -1 - 1e-12).any():
        raise ValueError("eta * g >= -1 violated")
    n = losses.shape[1]
    xs = exp_weights_iterates(losses, eta, tau)
    regret = np.sum(xs * losses) - losses.sum(0).min()
    second = eta * np.sum(xs * losses**2)
    gmax = float(np.abs(losses).max()) if losses.size else 0.0
    return xs, regret, second, n, gmax


def check_clipping(bonus_fn, beta: float, gamma: float, raw=None) -> CheckResult:
    """B stays in [0, cap_h]; with ``raw`` (the unclipped backup) B must equal its clip."""
    H = bonus_fn.B.shape[0]
    caps = 2 * beta * (H - np.arange(H)) / math.sqrt(gamma)
    excess = max(-bonus_fn.B.min(), (bonus_fn.B - caps[:, None, None]).max())
    if raw is not None:
        expected = np.minimum(np.maximum(raw, 0.0), caps[:, None, None])
        excess = max(excess, np.abs(bonus_fn.B - expected).max())
    return _exact("bonus_clipping", excess, 0.0, tol=1e-9 * max(1.0, float(caps.max())))


def unclipped_backup(unit, phi) -> np.ndarray:
    return unit.bonus + np.einsum("sad,hd->hsa", phi, unit.backup.weights) + unit.backup.dynamics_bonus


def check_w_consistency(bonus_fn, probs) -> CheckResult:
    res = np.abs(bonus_fn.W[:-1] - (probs * bonus_fn.B).sum(-1)).max()
    return _exact("bonus_value_consistency", res, 0.0)


# ---------------------------------------------------------------- MGR

def check_mgr_suite(rng=None, replicates_bias=2000, replicates_moment=200, norm_draws=10_000) -> list[CheckResult]:
    rng = np.random.default_rng(0) if rng is None else rng
    out = []
    # almost-sure norm bound on random inputs
    worst = -np.inf
    for _ in range(norm_draws // 100):
        d = int(rng.integers(1, 4))
        gamma = float(rng.uniform(0.05, 0.49))
        p = MgrParams(M=int(rng.integers(1, 4)), N=int(rng.integers(1, 20)), gamma=gamma)
        raw = rng.normal(size=(100, p.num_samples, d))
        norms = np.linalg.norm(raw, axis=-1, keepdims=True)
        scale = np.where(rng.random((100, p.num_samples, 1)) < 0.5, 1.0, rng.random((100, p.num_samples, 1)))
        est = mgr_batch(raw / np.maximum(norms, 1e-12) * scale, p)
        worst = max(worst, (np.linalg.norm(est, 2, axis=(1, 2)) * gamma).max())
    out.append(_exact("mgr_norm_bound (gamma*||S||)", worst, 1.0, f"{norm_draws} draws", tol=1e-12))
    for d, gamma in ((1, 0.25), (1, 0.3), (2, 0.25), (2, 0.3)):
        dist = _two_point(d)
        eps = 0.01
        p = mgr_theory_params(d, gamma, 0.25, eps)
        rep = mgr_bias_check(dist, gamma, p.N, replicates_bias, rng, eps=eps)
        out.append(_stat(f"mgr_bias d={d} gamma={gamma} N={p.N}", rep.deviation, eps, rep.ci))
        p = mgr_theory_params(d, gamma, 0.25, 0.25 / 6)
        rep = mgr_second_moment_check(dist, p, 0.25, replicates_moment, rng)
        out.append(_stat(f"mgr_second_moment d={d} gamma={gamma} M={p.M}", rep.deviation, 0.0, rep.ci))
    return out


def _two_point(d):
    if d == 1:
        return FiniteFeatureDistribution.of([[0.2], [1.0]])
    pts = np.zeros((2, d))
    pts[0, 0] = 1.0
    pts[1, :2] = [0.6, 0.8]
    return FiniteFeatureDistribution.of(pts, [0.7, 0.3])


# ---------------------------------------------------------------- bonus terms

def _state_action_dist(model, probs, h):
    occ = occupancy(model, probs).d[h].ravel()
    pts = model.phi.reshape(-1, model.feature_dim)
    return occ, pts


def exact_mgr_mean(sigma: np.ndarray, N: int, c: float = 0.5) -> np.ndarray:
    """E[MGR output] = c sum_{n=0}^N (I - c Sigma)^n."""
    d = len(sigma)
    step = np.eye(d) - c * sigma
    term = np.eye(d)
    total = np.eye(d)
    for _ in range(N):
        term = term @ step
        total += term
    return c * total


def check_bonus_expectations(model, policy, beta: float, beta_p: float, params: MgrParams,
                             dataset_size: int, replicates: int, rng=None, z: float = 3.0):
    """Monte-Carlo means of E_{d_h}[b_h] and E_{d_h}[b^P_h] against their bounds, worst step h.

    The Q-bonus bound uses the exact MGR bias of ``params`` for the step's
    covariance as epsilon.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    probs = policy_probs(policy)
    d = model.feature_dim
    q_res, p_res = [], []
    for h in range(model.horizon):
        occ, pts = _state_action_dist(model, probs, h)
        sigma = np.einsum("m,mi,mj->ij", occ, pts, pts) + params.gamma * np.eye(d)
        eps = np.linalg.norm(exact_mgr_mean(sigma, params.N) - np.linalg.inv(sigma), 2)
        qb, pb = [], []
        for _ in range(replicates):
            idx = rng.choice(len(pts), size=params.num_samples, p=occ)
            sp = mgr_batch(pts[idx][None], params)[0]
            norms = np.sqrt(np.maximum(np.einsum("mi,ij,mj->m", pts, sp, pts), 0.0)).reshape(model.num_states, -1)
            b = beta * (norms + (probs[h] * norms).sum(-1, keepdims=True))
            qb.append(np.sum(occ * b.ravel()))
            idx = rng.choice(len(pts), size=dataset_size, p=occ)
            gram = build_gram(pts[idx])
            pb.append(np.sum(occ * dynamics_bonus(gram, beta_p, pts)))
        q_res.append((np.mean(qb), 2 * beta * (math.sqrt(d) + math.sqrt(eps)), _se(qb)))
        n = dataset_size
        p_res.append((np.mean(pb), 10 * beta_p * math.sqrt(d) * math.log(2 * n) / math.sqrt(n), _se(pb)))
    worst_q = max(q_res, key=lambda r: r[0] - r[1])
    worst_p = max(p_res, key=lambda r: r[0] - r[1])
    return (_stat("q_bonus_expectation", worst_q[0], worst_q[1], z * worst_q[2]),
            _stat("dynamics_bonus_expectation", worst_p[0], worst_p[1], z * worst_p[2]))


def _se(xs):
    xs = np.asarray(xs, dtype=float)
    return float(xs.std(ddof=1) / math.sqrt(len(xs))) if len(xs) > 1 else 0.0


# ---------------------------------------------------------------- confidence and exploration

def confidence_violations(model, unit, tol: float = 1e-9):
    """Entries violating b + P W <= B <= b + P W + 2 b^P for one estimation, with exact P."""
    H = model.horizon
    P = model.transitions
    B, W = unit.bonus_fn.B, unit.bonus_fn.W
    count = 0
    for h in range(H):
        pw = P[h] @ W[h + 1] if h < H - 1 else 0.0
        lower = unit.bonus[h] + pw
        upper = lower + 2 * unit.backup.dynamics_bonus[h]
        count += int(((B[h] < lower - tol) | (B[h] > upper + tol)).sum())
    return count


def binomial_slack(p: float, n: int, z: float = 1.645) -> float:
    return z * math.sqrt(max(p * (1 - p), 1.0 / n) / n) if p > 0 else z / n


def check_backup_confidence(model, adversary_spec: AdversarySpec, config: AgentConfig, K: int, trials: int,
                            delta: float, seed: int = 0):
    """Fraction of seeded runs with any confidence-bound violation, against delta.

    Returns the CheckResult and the per-trial list of violation counts.
    """
    counts, entries = [], 0
    for t in range(trials):
        adv = make_adversary(replace(adversary_spec, seed=adversary_spec.seed + t), model)
        report = run_polsbe(model, adv, K, config, seed=seed + t, keep_artifacts=True)
        units = report.artifacts.units
        counts.append(sum(confidence_violations(model, u) for u in units))
        entries += len(units) * model.horizon * model.num_states * model.num_actions
    failed = sum(c > 0 for c in counts)
    rate = failed / trials
    detail = f"C1={config.c1} beta_p={config.beta_p:.4g} entry-rate={sum(counts) / entries:.3g}"
    return _stat("backup_confidence", rate, delta, binomial_slack(delta, trials), detail), counts


def exploration_terms(model, report: RegretReport):
    """Exploration term and its bound 2 sum E_{d^k}[b^P + b] - sum E_{d*}[b], exact occupancies."""
    arts = report.artifacts
    dstar = occupancy(model, report.pi_star)
    dstar_s = dstar.states
    lhs = rhs = 0.0
    occ_cache = {}
    for k in range(len(report.values_pik)):
        unit = arts.unit(k)
        key = id(unit)
        if key not in occ_cache:
            occ_cache[key] = occupancy(model, unit.probs).d
        dk = occ_cache[key]
        Bt = unit.bonus_fn.B
        lhs += np.einsum("hs,hsa,hsa->", dstar_s, Bt, unit.probs - report.pi_star)
        rhs += 2 * np.sum(dk * (unit.backup.dynamics_bonus + unit.bonus)) - np.sum(dstar.d * unit.bonus)
    return float(lhs), float(rhs)


def check_exploration_bound(model, report: RegretReport) -> CheckResult:
    """Exact assertion, conditional on the confidence bounds holding for every estimation."""
    covered = all(confidence_violations(model, u) == 0 for u in report.artifacts.units)
    lhs, rhs = exploration_terms(model, report)
    if not covered:
        return CheckResult("exploration_bound", "exact", lhs, rhs, True, None, "vacuous: confidence event failed")
    return _exact("exploration_bound", lhs, rhs, tol=1e-9 * max(1.0, abs(rhs)))


# ---------------------------------------------------------------- suite

def identity_suite(n_instances: int, rng) -> list[CheckResult]:
    """Worst case over random instances for each exact identity."""
    groups = {}
    for i in range(n_instances):
        model = random_instance(rng)
        shape = (model.horizon, model.num_states, model.num_actions)
        pi, pi2 = random_policy(model, rng), random_policy(model, rng)
        loss = rng.uniform(-1, 1, size=shape)
        costs = rng.uniform(-1, 1, size=(model.horizon, model.feature_dim))
        costs = normalize_costs(model.phi, costs)
        results = [check_bellman(model, pi, loss), check_duality(model, pi, loss),
                   check_q_vector(model, pi, costs),
                   check_extended_value_difference(model, pi, pi2, rng.normal(size=shape) * 3, loss)]
        n = int(rng.integers(0, 200))
        d = int(rng.integers(1, 6))
        raw = rng.normal(size=(n, d))
        raw /= np.maximum(np.linalg.norm(raw, axis=-1, keepdims=True), 1.0) if rng.random() < 0.5 else \
            np.maximum(np.linalg.norm(raw, axis=-1, keepdims=True), 1e-12)
        results.append(check_elliptical_potential(raw, float(rng.uniform(1, 3)), d=d))
        K, m = int(rng.integers(1, 300)), int(rng.integers(2, 6))
        eta = float(rng.uniform(0.01, 1.0))
        g = rng.uniform(-1 / eta, 3, size=(K, m)) if rng.random() < 0.3 else rng.uniform(0, 1, size=(K, m))
        results.append(check_omd(g, eta))
        results.append(check_blocking_omd(g, eta, int(rng.integers(1, 20))))
        for r in results:
            _track(groups, r)
    return _summarize(groups)


def _track(groups, r):
    worst, total, fails = groups.get(r.name, (r, 0, 0))
    if r.observed - r.bound > worst.observed - worst.bound:
        worst = r
    groups[r.name] = (worst, total + 1, fails + int(not r.passed))


def _summarize(groups):
    return [replace(w, passed=fails == 0, detail=f"worst of {total}, {fails} failures")
            for w, total, fails in groups.values()]


def decomposition_suite(n_runs: int, rng) -> list[CheckResult]:
    groups = {}
    for i in range(n_runs):
        model = random_instance(rng, max_horizon=3)
        spec = AdversarySpec(kind=["sinusoid", "switching", "adaptive_occupancy"][i % 3], seed=i, period=16,
                             switch_episodes=(5,))
        adv = make_adversary(spec, model)
        cfg = AgentConfig(eta=0.05, gamma=0.2, beta=0.1, beta_p=0.1, M=2, N=4, tau=int(rng.integers(1, 4)))
        report = run_polsbe(model, adv, int(rng.integers(1, 24)), cfg, seed=i, diagnostics=True)
        _track(groups, check_decomposition(model, report))
    return _summarize(groups)


def coverage_setup(seed: int = 0):
    """Tabular S=4, A=2, H=3 instance and configuration used for confidence coverage checks."""
    model = random_linmdp(GeneratorSpec("tabular_onehot", 4, 2, 3, seed=seed))
    H, d = model.horizon, model.feature_dim
    K, gamma, delta = 256, 0.25, 0.05
    beta = 2 * H * math.sqrt(gamma * d)
    beta_p = 1.0 * H**2 * d**1.5 * math.log(d * beta * K * H / delta)
    cfg = AgentConfig(eta=gamma / (2 * H), gamma=gamma, beta=beta, beta_p=beta_p, M=8, N=16, tau=32)
    return model, AdversarySpec("sinusoid", seed=seed, period=64, amplitude=0.5), cfg, K, delta


def run_suite(seed: int = 0, quick: bool = False) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    n = 50 if quick else 500
    out = identity_suite(n, rng)
    out += decomposition_suite(n // 5 if quick else n, rng)
    out += check_mgr_suite(rng, replicates_bias=500 if quick else 2000, replicates_moment=50 if quick else 200,
                           norm_draws=1000 if quick else 10_000)
    model, adv_spec, cfg, K, delta = coverage_setup(seed)
    trials = 10 if quick else 50
    res, _ = check_backup_confidence(model, adv_spec, cfg, K, trials, delta, seed)
    out.append(res)
    _, counts = check_backup_confidence(model, adv_spec, replace(cfg, beta_p=0.0), K, trials, delta, seed)
    clean = sum(c == 0 for c in counts) / trials
    out.append(_exact("backup_confidence_negative_control", clean, 0.1,
                      "fraction of beta_p=0 trials without violations"))
    report = run_polsbe(model, make_adversary(adv_spec, model), K, cfg, seed=seed, keep_artifacts=True)
    out.append(check_exploration_bound(model, report))
    groups = {}
    for u in report.artifacts.units:
        _track(groups, check_clipping(u.bonus_fn, cfg.beta, cfg.gamma, unclipped_backup(u, model.phi)))
        _track(groups, check_w_consistency(u.bonus_fn, u.probs))
    out += _summarize(groups)
    probs = SoftmaxPolicy(np.random.default_rng(seed).normal(size=(3, 4, 2)), 1.0).probs
    out.extend(check_bonus_expectations(model, probs, cfg.beta, cfg.beta_p, cfg.mgr_params(model.feature_dim),
                                        dataset_size=64, replicates=20 if quick else 100, rng=rng))
    return out


def report_json(results) -> str:
    return json.dumps([asdict(r) for r in results], indent=2)
