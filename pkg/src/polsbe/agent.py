"""Policy optimization with least-squares bonus exploration (blocking and simulator variants)."""
from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .linmdp import (LinearMdpModel, SoftmaxPolicy, Trajectory, best_in_hindsight, episode_losses,
                     occupancy, policy_values, rollout_batch, value_dp)
from .mgr import MgrParams, mgr_batch, mgr_theory_params
from .olspe import BackupArtifacts, BonusValueFn, TransitionDataset, olspe

_PURPOSES = {"rollout": 1, "mgr": 2, "play": 3, "sim": 4, "adversary": 5}


def substream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    """Independent generator named by (seed, purpose, index...); order of use is irrelevant."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_PURPOSES[purpose], *index))
    return np.random.default_rng(ss)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AgentConfig:
    eta: float
    gamma: float
    beta: float
    beta_p: float
    epsilon: float = 0.01
    sigma: float = 0.25
    mode: str = "practical"  # "theory" derives (M, N, tau) from the MGR formulas
    M: int | None = None
    N: int | None = None
    tau: int | None = None
    variant: str = "blocking"  # or "simulator"
    c1: float = 1.0

    def __post_init__(self):
        if self.mode not in ("theory", "practical"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.variant not in ("blocking", "simulator"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        for name in ("eta", "gamma", "beta"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.beta_p >= 0:
            raise ConfigError(f"beta_p must be non-negative, got {self.beta_p}")
        if self.mode == "theory":
            if not self.sigma <= 0.25:
                raise ConfigError(f"theory mode needs sigma <= 1/4, got {self.sigma}")
            if not self.epsilon <= self.sigma / 6:
                raise ConfigError(f"theory mode needs epsilon <= sigma/6, got {self.epsilon}")
            if not self.gamma < 0.5:
                raise ConfigError(f"theory mode needs gamma < 1/2, got {self.gamma}")
        else:
            for name in ("M", "N", "tau"):
                v = getattr(self, name)
                if v is None or v < 1:
                    raise ConfigError(f"practical mode needs {name} >= 1, got {v}")

    def check_horizon(self, horizon: int) -> None:
        if self.mode == "theory" and self.eta > self.gamma / (2 * horizon) * (1 + 1e-12):
            raise ConfigError(f"theory mode needs eta <= gamma/(2H) = {self.gamma / (2 * horizon)}, got {self.eta}")

    def sizes(self, d: int) -> tuple[int, int, int]:
        """(M, N, tau) for feature dimension d."""
        if self.mode == "practical":
            return self.M, self.N, self.tau
        p = mgr_theory_params(d, self.gamma, self.sigma, self.epsilon)
        tau = p.M * p.N if self.variant == "blocking" else d * d * p.M * p.N
        return p.M, p.N, tau

    def mgr_params(self, d: int) -> MgrParams:
        M, N, _ = self.sizes(d)
        return MgrParams(M=M, N=N, gamma=self.gamma, guarantee=self.gamma < 0.5)

    def voided_guarantees(self, d: int, horizon: int) -> list[str]:
        if self.mode == "theory":
            return []
        out = ["practical (M, N, tau): MGR bias/variance targets not certified"]
        M, N, tau = self.sizes(d)
        if self.tau < M * N:
            out.append(f"tau={tau} < M*N={M * N}: MGR inputs resampled from the dataset")
        if self.eta > self.gamma / (2 * horizon):
            out.append("eta > gamma/(2H)")
        if self.gamma >= 0.5:
            out.append("gamma >= 1/2")
        return out


def beta_p_formula(c1: float, H: int, d: int, beta: float, K: int) -> float:
    return 10 * c1 * H**2 * d**1.5 * math.log(28 * c1 * d * beta * K * H)


def _warn_small_k(K, d):
    threshold = (d * math.log(max(d, 2))) ** 2
    if K < threshold:
        warnings.warn(f"K={K} below the heuristic (d log d)^2 = {threshold:.0f} regime", stacklevel=3)


def theorem1_config(K: int, d: int, H: int, c1: float = 1.0) -> AgentConfig:
    """Blocking-variant settings: gamma = K^(-2/7), eta = gamma/(2H), beta = 2H sqrt(d gamma)."""
    if K < 1:
        raise ConfigError("K >= 1 required")
    gamma = K ** (-2 / 7)
    if not gamma < 0.5:
        raise ConfigError(f"gamma = K^(-2/7) = {gamma:.4g} >= 1/2: K={K} too small for theory mode")
    _warn_small_k(K, d)
    beta = 2 * H * math.sqrt(d * gamma)
    return AgentConfig(eta=gamma / (2 * H), gamma=gamma, beta=beta, beta_p=beta_p_formula(c1, H, d, beta, K),
                       epsilon=1 / K, sigma=0.25, mode="theory", variant="blocking", c1=c1)


def theorem2_config(K: int, d: int, H: int, c1: float = 1.0) -> AgentConfig:
    """Simulator-variant settings: gamma = 2/(dK)^(2/3), tau = d^2 M N."""
    if K < 1:
        raise ConfigError("K >= 1 required")
    gamma = 2 / (d * K) ** (2 / 3)
    if not gamma < 0.5:
        raise ConfigError(f"gamma = 2/(dK)^(2/3) = {gamma:.4g} >= 1/2: K={K} too small for theory mode")
    _warn_small_k(K, d)
    beta = 2 * H * math.sqrt(d * gamma)
    return AgentConfig(eta=gamma / (2 * H), gamma=gamma, beta=beta, beta_p=beta_p_formula(c1, H, d, beta, K),
                       epsilon=1 / K, sigma=0.25, mode="theory", variant="simulator", c1=c1)


# ---------------------------------------------------------------- blocks

@dataclass(frozen=True)
class Block:
    index: int
    first: np.ndarray
    second: np.ndarray
    partial: bool = False

    @property
    def episodes(self) -> np.ndarray:
        return np.concatenate([self.first, self.second])

    def estimation_units(self):
        """(episodes estimated, dataset episodes) pairs; datasets never contain their own episodes."""
        if len(self.second):
            return [(self.first, self.second), (self.second, self.first)]
        # opposite half empty: leave-one-out within the half (bias-unsafe)
        return [(np.array([k]), np.setdiff1d(self.first, [k])) for k in self.first]


@dataclass(frozen=True)
class BlockSchedule:
    tau: int
    K: int
    blocks: list

    @property
    def has_partial(self) -> bool:
        return any(b.partial for b in self.blocks)


def make_blocks(K: int, tau: int) -> BlockSchedule:
    """Consecutive disjoint blocks of 2*tau episodes (0-indexed) split into two halves."""
    if tau < 1:
        raise ConfigError("tau >= 1 required")
    blocks = []
    for j, start in enumerate(range(0, K, 2 * tau)):
        size = min(2 * tau, K - start)
        half = tau if size == 2 * tau else math.ceil(size / 2)
        eps = np.arange(start, start + size)
        blocks.append(Block(j, eps[:half], eps[half:], partial=size < 2 * tau))
    return BlockSchedule(tau, K, blocks)


# ---------------------------------------------------------------- estimates

def q_hat(sigma_plus: np.ndarray, phi: np.ndarray, trajectory: Trajectory, h: int):
    """q_hat_h = Sigma+ phi(s_h, a_h) * sum_{t >= h} l_t and its table phi(s, a)^T q_hat_h."""
    suffix = float(np.sum(trajectory.losses[h:]))
    vec = sigma_plus @ phi[trajectory.states[h], trajectory.actions[h]] * suffix
    return vec, phi @ vec


def q_bonus(sigma_plus: np.ndarray, phi: np.ndarray, probs_h: np.ndarray, beta: float) -> np.ndarray:
    """beta * (||phi(s,a)||_Sigma+ + <pi_h(.|s), ||phi(s,.)||_Sigma+>) over all (s, a)."""
    norms = np.sqrt(np.maximum(np.einsum("sai,ij,saj->sa", phi, sigma_plus, phi), 0.0))
    return beta * (norms + (probs_h * norms).sum(-1, keepdims=True))


def block_loss(q_tables, b_tables, tau: int) -> np.ndarray:
    """(1/tau) sum over the block of (Q_hat - B_tilde)."""
    return (np.sum(q_tables, axis=0) - np.sum(b_tables, axis=0)) / tau


def policy_update_blocking(policy: SoftmaxPolicy, block_losses) -> SoftmaxPolicy:
    """Exponential weights on the accumulated block losses."""
    return policy.updated(np.sum(block_losses, axis=0))


# ---------------------------------------------------------------- run records

@dataclass
class EstimationUnit:
    """Everything estimated from one dataset; shared by the episodes listed."""

    episodes: np.ndarray
    dataset_episodes: np.ndarray
    probs: np.ndarray
    sigma_plus: np.ndarray  # (H, d, d)
    bonus: np.ndarray  # (H, S, A)
    bonus_fn: BonusValueFn
    backup: BackupArtifacts


@dataclass
class RunArtifacts:
    phi: np.ndarray
    q_vecs: np.ndarray  # (K, H, d)
    unit_of: np.ndarray  # (K,)
    units: list = field(default_factory=list)

    def probs(self, k):
        return self.units[self.unit_of[k]].probs

    def q_table(self, k):
        return np.einsum("sad,hd->hsa", self.phi, self.q_vecs[k])

    def b_tilde(self, k):
        return self.units[self.unit_of[k]].bonus_fn.B

    def unit(self, k) -> EstimationUnit:
        return self.units[self.unit_of[k]]


@dataclass
class RegretReport:
    name: str
    values_pik: np.ndarray
    values_pistar: np.ndarray
    samples: int = 0
    flags: list = field(default_factory=list)
    diagnostics: dict | None = None
    artifacts: RunArtifacts | None = None
    costs: np.ndarray | None = None
    pi_star: np.ndarray | None = None
    datasets: list | None = None  # (episodes, dataset episode/rollout ids) per estimation
    elapsed: float = 0.0

    @property
    def per_episode(self) -> np.ndarray:
        return self.values_pik - self.values_pistar

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.per_episode)

    @property
    def regret(self) -> float:
        return float(self.cum_regret[-1]) if len(self.values_pik) else 0.0

    def to_csv(self, path) -> None:
        cols = ["k", "value_pik", "value_pistar", "cum_regret"]
        diag = self.diagnostics or {}
        terms = [t for t in ("bias1", "bias2", "omd", "exploration") if t in diag]
        cum = self.cum_regret
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols + terms)
            for k in range(len(cum)):
                row = [k + 1, self.values_pik[k], self.values_pistar[k], cum[k]] + [diag[t][k] for t in terms]
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


def finish_report(name, model, costs, values, t0, **kw) -> RegretReport:
    pi_star, _ = best_in_hindsight(model, costs)
    star = policy_values(model, pi_star, costs)
    return RegretReport(name, values, star, costs=costs, pi_star=pi_star, elapsed=time.perf_counter() - t0, **kw)


# ---------------------------------------------------------------- the agent

def _estimate(model, config, params, probs, states, actions, data_ids, rng):
    phi = model.phi
    H = model.horizon
    n = len(data_ids)
    MN = params.num_samples
    feats = phi[states, actions]  # (n, H, d)
    if n >= MN:
        samples = feats[:MN].transpose(1, 0, 2)
    elif n > 0:
        idx = rng.integers(0, n, size=(H, MN))
        samples = feats[idx, np.arange(H)[:, None]]
    else:
        samples = np.zeros((H, MN, phi.shape[-1]))
    sigma_plus = mgr_batch(samples, params)
    bonus = np.stack([q_bonus(sigma_plus[h], phi, probs[h], config.beta) for h in range(H)])
    ds = TransitionDataset.from_rollouts(states, actions, episodes=data_ids)
    bonus_fn, backup = olspe(phi, ds, bonus, config.beta_p, config.beta, config.gamma, probs)
    return sigma_plus, bonus, bonus_fn, backup


def _q_vecs(sigma_plus, phi, states, actions, losses):
    """Per-episode q_hat vectors (n, H, d) from the episodes' own trajectories."""
    suffix = np.cumsum(losses[:, ::-1], axis=1)[:, ::-1]
    feats = phi[states, actions]
    return np.einsum("hij,khj,kh->khi", sigma_plus, feats, suffix)


def run_polsbe(model: LinearMdpModel, adversary, K: int, config: AgentConfig, seed: int = 0,
               diagnostics: bool = False, keep_artifacts: bool = False) -> RegretReport:
    """Blocking variant: one policy per block of 2*tau episodes, halves estimate each other."""
    if config.variant != "blocking":
        raise ConfigError("run_polsbe runs the blocking variant")
    t0 = time.perf_counter()
    H, S, A, d = model.horizon, model.num_states, model.num_actions, model.feature_dim
    config.check_horizon(H)
    _, _, tau = config.sizes(d)
    params = config.mgr_params(d)
    schedule = make_blocks(K, tau)
    phi = model.phi
    policy = SoftmaxPolicy.uniform(H, S, A, config.eta)
    costs = np.empty((K, H, d))
    values = np.empty(K)
    q_vecs = np.zeros((K, H, d))
    unit_of = np.full(K, -1)
    units = []
    datasets = []
    history = []
    flags = config.voided_guarantees(d, H)
    if schedule.has_partial:
        flags.append("partial final block: leave-one-out datasets are bias-unsafe" if
                     any(b.partial and not len(b.second) for b in schedule.blocks) else "partial final block")
    for block in schedule.blocks:
        probs = policy.probs
        eps = block.episodes
        for k in eps:
            history.append(probs)
            costs[k] = adversary.next_costs(int(k), history)
        states, actions = rollout_batch(model, probs, len(eps), substream(seed, "rollout", block.index))
        losses = episode_losses(model, states, actions, costs[eps])
        values[eps] = policy_values(model, probs, costs[eps])
        local = {int(k): i for i, k in enumerate(eps)}
        total = np.zeros((H, S, A))
        for u, (est_eps, data_eps) in enumerate(block.estimation_units()):
            assert not np.isin(est_eps, data_eps).any(), "dataset contains an estimated episode"
            di = [local[int(k)] for k in data_eps]
            ei = [local[int(k)] for k in est_eps]
            rng = substream(seed, "mgr", block.index, u)
            sigma_plus, bonus, bonus_fn, backup = _estimate(model, config, params, probs, states[di],
                                                            actions[di], np.asarray(data_eps), rng)
            qv = _q_vecs(sigma_plus, phi, states[ei], actions[ei], losses[ei])
            q_vecs[est_eps] = qv
            unit_of[est_eps] = len(units)
            datasets.append((est_eps, np.asarray(data_eps)))
            units.append(EstimationUnit(est_eps, np.asarray(data_eps), probs, sigma_plus, bonus, bonus_fn, backup)
                         if (keep_artifacts or diagnostics) else None)
            total += np.einsum("sad,hd->hsa", phi, qv.sum(0)) - len(est_eps) * bonus_fn.B
        policy = policy.updated(total / tau)
    arts = RunArtifacts(phi, q_vecs, unit_of, units) if (keep_artifacts or diagnostics) else None
    report = finish_report("polsbe", model, costs, values, t0, samples=K * H, flags=flags,
                           artifacts=arts if keep_artifacts else None, datasets=datasets)
    if diagnostics:
        report.diagnostics = regret_decomposition_diagnostic(model, costs, arts, report.pi_star)
    return report


def run_polsbe_simulator(model: LinearMdpModel, adversary, K: int, config: AgentConfig, seed: int = 0,
                         diagnostics: bool = False, keep_artifacts: bool = False) -> RegretReport:
    """Simulator variant: tau fresh simulator rollouts of pi^k per episode, per-episode updates."""
    if config.variant != "simulator":
        raise ConfigError("run_polsbe_simulator runs the simulator variant")
    t0 = time.perf_counter()
    H, S, A, d = model.horizon, model.num_states, model.num_actions, model.feature_dim
    config.check_horizon(H)
    _, _, tau = config.sizes(d)
    if tau < 1:
        raise ConfigError("simulator mode needs tau >= 1")
    params = config.mgr_params(d)
    phi = model.phi
    policy = SoftmaxPolicy.uniform(H, S, A, config.eta)
    costs = np.empty((K, H, d))
    values = np.empty(K)
    q_vecs = np.zeros((K, H, d))
    unit_of = np.full(K, -1)
    units = []
    datasets = []
    history = []
    flags = config.voided_guarantees(d, H)
    next_id = 0
    for k in range(K):
        probs = policy.probs
        history.append(probs)
        costs[k] = adversary.next_costs(k, history)
        values[k] = policy_values(model, probs, costs[k:k + 1])[0]
        s, a = rollout_batch(model, probs, 1, substream(seed, "play", k))
        losses = episode_losses(model, s, a, costs[k][None])
        ss, sa = rollout_batch(model, probs, tau, substream(seed, "sim", k))
        # simulator rollouts get fresh global ids, never shared between episodes
        data_ids = np.arange(next_id, next_id + tau)
        next_id += tau
        sigma_plus, bonus, bonus_fn, backup = _estimate(model, config, params, probs, ss, sa, data_ids,
                                                        substream(seed, "mgr", k))
        qv = _q_vecs(sigma_plus, phi, s, a, losses)
        q_vecs[k] = qv[0]
        unit_of[k] = len(units)
        datasets.append((np.array([k]), data_ids))
        units.append(EstimationUnit(np.array([k]), data_ids, probs, sigma_plus, bonus, bonus_fn, backup)
                     if (keep_artifacts or diagnostics) else None)
        policy = policy.updated(np.einsum("sad,hd->hsa", phi, qv[0]) - bonus_fn.B)
    arts = RunArtifacts(phi, q_vecs, unit_of, units) if (keep_artifacts or diagnostics) else None
    report = finish_report("polsbe_simulator", model, costs, values, t0, samples=K * H * (tau + 1), flags=flags,
                           artifacts=arts if keep_artifacts else None, datasets=datasets)
    if diagnostics:
        report.diagnostics = regret_decomposition_diagnostic(model, costs, arts, report.pi_star)
    return report


def dataset_independence_violations(datasets) -> list[str]:
    """Blocking-variant estimations whose dataset contains one of the estimated episodes."""
    return [f"estimation {i}: dataset contains episode {sorted(set(map(int, eps)) & set(map(int, ids)))}"
            for i, (eps, ids) in enumerate(datasets) if np.isin(eps, ids).any()]


def dataset_freshness_violations(datasets) -> list[str]:
    """Simulator datasets that reuse a rollout id already used for an earlier episode."""
    out = []
    seen = set()
    for i, (_, ids) in enumerate(datasets):
        ids = set(map(int, ids))
        if ids & seen:
            out.append(f"estimation {i}: reuses {len(ids & seen)} rollouts")
        seen |= ids
    return out


def regret_decomposition_diagnostic(model: LinearMdpModel, costs, artifacts: RunArtifacts, pi_star) -> dict:
    """Per-episode bias1, bias2, omd and exploration terms under the benchmark's state occupancy."""
    if artifacts is None or not artifacts.units or artifacts.units[0] is None:
        raise ValueError("decomposition needs stored per-episode artifacts")
    costs = np.asarray(costs, dtype=float)
    K = len(costs)
    dstar = occupancy(model, pi_star).states  # (H, S)
    losses = model.losses(costs)
    out = {t: np.empty(K) for t in ("bias1", "bias2", "omd", "exploration")}
    for k in range(K):
        pk = artifacts.probs(k)
        Q = value_dp(model, pk, losses[k]).Q
        Qh = artifacts.q_table(k)
        Bt = artifacts.b_tilde(k)
        out["bias1"][k] = np.einsum("hs,hsa,hsa->", dstar, Q - Qh, pk)
        out["bias2"][k] = np.einsum("hs,hsa,hsa->", dstar, Qh - Q, pi_star)
        out["omd"][k] = np.einsum("hs,hsa,hsa->", dstar, Qh - Bt, pk - pi_star)
        out["exploration"][k] = np.einsum("hs,hsa,hsa->", dstar, Bt, pk - pi_star)
    return out
