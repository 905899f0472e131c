"""Exact finite-state linear MDP engine.

Steps are 0-indexed throughout: ``h = 0 .. H-1``. Transition factors exist
for ``h = 0 .. H-2`` only (there is no successor at the last step).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from itertools import product
from pathlib import Path

import numpy as np

MODEL_TOL = 1e-9
DP_TOL = 1e-10


class ModelValidationError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = "\n".join(f"  {v}" for v in self.violations)
        super().__init__(f"invalid linear MDP:\n{lines}")


@dataclass(frozen=True)
class Violation:
    kind: str
    location: tuple
    magnitude: float

    def __str__(self):
        return f"{self.kind} at {self.location}: {self.magnitude:.3e}"


@dataclass(frozen=True, eq=False)
class LinearMdpModel:
    """Features ``phi[s, a]`` (S, A, d) and factors ``psi[h, s']`` (H-1, S, d)."""

    phi: np.ndarray
    psi: np.ndarray
    horizon: int
    s1: int = 0

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        psi = np.asarray(self.psi, dtype=float)
        if phi.ndim != 3:
            raise ValueError(f"phi must have shape (S, A, d), got {phi.shape}")
        S, _, d = phi.shape
        if psi.size == 0:
            psi = psi.reshape(0, S, d)
        if psi.shape != (self.horizon - 1, S, d):
            raise ValueError(f"psi must have shape {(self.horizon - 1, S, d)}, got {psi.shape}")
        if not 0 <= self.s1 < S:
            raise ValueError(f"initial state {self.s1} out of range")
        phi.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)

    @property
    def num_states(self) -> int:
        return self.phi.shape[0]

    @property
    def num_actions(self) -> int:
        return self.phi.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.phi.shape[2]

    @cached_property
    def transitions(self) -> np.ndarray:
        """P[h, s, a, s'] for h < H-1."""
        P = np.einsum("sad,htd->hsat", self.phi, self.psi)
        P.setflags(write=False)
        return P

    def losses(self, costs) -> np.ndarray:
        """Loss tables l_h(s, a) = phi(s, a)^T c_h for costs of shape (..., H, d)."""
        return np.einsum("sad,...hd->...hsa", self.phi, np.asarray(costs, dtype=float))


def transition_distribution(model: LinearMdpModel, h: int, s: int, a: int) -> np.ndarray:
    if not 0 <= h < model.horizon - 1:
        raise IndexError(f"step {h} has no transition (horizon {model.horizon})")
    return model.psi[h] @ model.phi[s, a]


def validate_model(model: LinearMdpModel, tol: float = MODEL_TOL, num_sign_samples: int = 64,
                   seed: int = 0) -> list[Violation]:
    """List every violated linear-MDP constraint; empty when the model is valid.

    The bound on ``sum_s' psi_h(s') f(s')`` is checked for ``f = 1`` and a
    seeded sample of sign vectors, not all 2^S of them.
    """
    out = []
    S, A, d = model.phi.shape
    norms = np.linalg.norm(model.phi, axis=-1)
    for s, a in zip(*np.nonzero(norms > 1 + tol)):
        out.append(Violation("feature_norm", (int(s), int(a)), float(norms[s, a])))
    P = model.transitions
    for h, s, a, t in zip(*np.nonzero(P < -tol)):
        out.append(Violation("negative_probability", (int(h), int(s), int(a), int(t)), float(P[h, s, a, t])))
    rows = P.sum(-1)
    for h, s, a in zip(*np.nonzero(np.abs(rows - 1) > tol)):
        out.append(Violation("row_sum", (int(h), int(s), int(a)), float(rows[h, s, a])))
    rng = np.random.default_rng(seed)
    fs = np.vstack([np.ones(S), rng.choice([-1.0, 1.0], size=(num_sign_samples, S))])
    bound = np.sqrt(d)
    for h in range(model.horizon - 1):
        mags = np.linalg.norm(fs @ model.psi[h], axis=-1)
        worst = int(np.argmax(mags))
        if mags[worst] > bound + tol:
            out.append(Violation("psi_norm", (h, worst), float(mags[worst])))
    return out


def check_model(model: LinearMdpModel) -> LinearMdpModel:
    violations = validate_model(model)
    if violations:
        raise ModelValidationError(violations)
    return model


# ---------------------------------------------------------------- policies

@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """pi_h(a|s) proportional to exp(-eta * L_h(s, a)) over accumulated losses L."""

    logits: np.ndarray
    eta: float

    @classmethod
    def uniform(cls, horizon, num_states, num_actions, eta=1.0):
        return cls(np.zeros((horizon, num_states, num_actions)), eta)

    @cached_property
    def probs(self) -> np.ndarray:
        z = -self.eta * np.asarray(self.logits, dtype=float)
        z = z - z.max(axis=-1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=-1, keepdims=True)
        return p

    def updated(self, losses) -> "SoftmaxPolicy":
        return SoftmaxPolicy(self.logits + losses, self.eta)


def policy_probs(policy) -> np.ndarray:
    """Probability table (H, S, A) from a policy object or array."""
    if hasattr(policy, "probs"):
        return policy.probs
    return np.asarray(policy, dtype=float)


def uniform_probs(model: LinearMdpModel) -> np.ndarray:
    H, S, A = model.horizon, model.num_states, model.num_actions
    return np.full((H, S, A), 1.0 / A)


def deterministic_probs(actions, num_actions) -> np.ndarray:
    actions = np.asarray(actions)
    return np.eye(num_actions)[actions]


# ---------------------------------------------------------------- rollouts

@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    losses: np.ndarray

    def __len__(self):
        return len(self.states)

    @property
    def records(self):
        return [(h, int(s), int(a), float(l))
                for h, (s, a, l) in enumerate(zip(self.states, self.actions, self.losses))]

    def suffix_losses(self) -> np.ndarray:
        return np.cumsum(self.losses[::-1])[::-1]


def _sample_rows(probs, u):
    # inverse-CDF draw for each row of probs
    cdf = np.cumsum(probs, axis=-1)
    idx = (u[:, None] > cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def rollout_batch(model: LinearMdpModel, policy, n: int, rng: np.random.Generator):
    """n independent episodes of a fixed policy; returns states, actions of shape (n, H)."""
    probs = policy_probs(policy)
    H = model.horizon
    states = np.empty((n, H), dtype=np.int64)
    actions = np.empty((n, H), dtype=np.int64)
    s = np.full(n, model.s1, dtype=np.int64)
    P = model.transitions
    for h in range(H):
        states[:, h] = s
        a = _sample_rows(probs[h, s], rng.random(n))
        actions[:, h] = a
        if h < H - 1:
            s = _sample_rows(P[h, s, a], rng.random(n))
    return states, actions


def episode_losses(model: LinearMdpModel, states, actions, costs) -> np.ndarray:
    """Scalar losses phi(s_h, a_h)^T c_h; costs (H, d) or per-episode (n, H, d)."""
    feats = model.phi[states, actions]
    return np.einsum("...hd,...hd->...h", feats, np.broadcast_to(costs, feats.shape))


def rollout(model: LinearMdpModel, policy, episode_costs, rng: np.random.Generator) -> Trajectory:
    states, actions = rollout_batch(model, policy, 1, rng)
    losses = episode_losses(model, states[0], actions[0], np.asarray(episode_costs, dtype=float))
    return Trajectory(states[0], actions[0], losses)


# ---------------------------------------------------------------- dynamic programming

@dataclass(frozen=True)
class ValueTables:
    V: np.ndarray  # (H+1, S), V[H] = 0
    Q: np.ndarray  # (H, S, A)


@dataclass(frozen=True)
class OccupancyTable:
    d: np.ndarray  # (H, S, A)

    @property
    def states(self) -> np.ndarray:
        return self.d.sum(-1)


def value_dp(model: LinearMdpModel, policy, loss) -> ValueTables:
    """Backward induction of V and Q for an arbitrary loss table (H, S, A)."""
    probs = policy_probs(policy)
    loss = np.asarray(loss, dtype=float)
    H, S = model.horizon, model.num_states
    V = np.zeros((H + 1, S))
    Q = np.empty_like(loss)
    P = model.transitions
    for h in range(H - 1, -1, -1):
        Q[h] = loss[h]
        if h < H - 1:
            Q[h] += P[h] @ V[h + 1]
        V[h] = (probs[h] * Q[h]).sum(-1)
    return ValueTables(V, Q)


def occupancy(model: LinearMdpModel, policy) -> OccupancyTable:
    probs = policy_probs(policy)
    H, S = model.horizon, model.num_states
    d = np.empty((H, S, model.num_actions))
    mu = np.zeros(S)
    mu[model.s1] = 1.0
    P = model.transitions
    for h in range(H):
        d[h] = mu[:, None] * probs[h]
        if h < H - 1:
            mu = np.einsum("sa,sat->t", d[h], P[h])
    return OccupancyTable(d)


def policy_values(model: LinearMdpModel, policy, costs) -> np.ndarray:
    """V_1(s1) for each episode's cost vectors (K, H, d); exact via occupancy duality."""
    occ = occupancy(model, policy).d
    feat_occ = np.einsum("hsa,sad->hd", occ, model.phi)
    return np.einsum("hd,khd->k", feat_occ, np.asarray(costs, dtype=float).reshape(-1, model.horizon, model.feature_dim))


def q_vectors(model: LinearMdpModel, policy, episode_costs) -> np.ndarray:
    """Low-dimensional Q representation q_h = c_h + sum_s' psi_h(s') V_{h+1}(s'), shape (H, d)."""
    costs = np.asarray(episode_costs, dtype=float)
    V = value_dp(model, policy, model.losses(costs)).V
    q = costs.copy()
    for h in range(model.horizon - 1):
        q[h] += model.psi[h].T @ V[h + 1]
    return q


def q_vector(model: LinearMdpModel, policy, episode_costs, h: int) -> np.ndarray:
    return q_vectors(model, policy, episode_costs)[h]


def optimal_policy(model: LinearMdpModel, loss):
    """Deterministic loss-minimizing policy by backward induction; ties go to the lowest action."""
    loss = np.asarray(loss, dtype=float)
    H, S, A = loss.shape
    V = np.zeros((H + 1, S))
    actions = np.empty((H, S), dtype=np.int64)
    P = model.transitions
    for h in range(H - 1, -1, -1):
        Q = loss[h] + (P[h] @ V[h + 1] if h < H - 1 else 0.0)
        actions[h] = np.argmin(Q, axis=-1)
        V[h] = Q[np.arange(S), actions[h]]
    return deterministic_probs(actions, A), V


def best_in_hindsight(model: LinearMdpModel, costs):
    """Best fixed policy for a (K, H, d) cost schedule and its total value sum_k V_1^k(s1).

    Dynamics are shared across episodes, so DP on the aggregated loss is exact.
    """
    costs = np.asarray(costs, dtype=float)
    total = model.losses(costs.sum(axis=0))
    probs, V = optimal_policy(model, total)
    return probs, float(V[0, model.s1])


def enumerate_deterministic_policies(model: LinearMdpModel):
    """All A^(S*H) deterministic policies as probability tables (tiny models only)."""
    H, S, A = model.horizon, model.num_states, model.num_actions
    for choice in product(range(A), repeat=S * H):
        yield deterministic_probs(np.reshape(choice, (H, S)), A)


# ---------------------------------------------------------------- serialization

def model_to_dict(model: LinearMdpModel) -> dict:
    S, A, d = model.phi.shape
    return {
        "S": S, "A": A, "H": model.horizon, "d": d, "s1": model.s1,
        "phi": model.phi.reshape(S * A, d).tolist(),
        "psi": model.psi.tolist(),
    }


def model_from_dict(doc: dict, validate: bool = True) -> LinearMdpModel:
    S, A, H, d = (int(doc[k]) for k in ("S", "A", "H", "d"))
    phi = np.asarray(doc["phi"], dtype=float).reshape(S, A, d)
    psi = np.asarray(doc["psi"], dtype=float).reshape(H - 1, S, d)
    model = LinearMdpModel(phi, psi, H, int(doc.get("s1", 0)))
    return check_model(model) if validate else model


def save_model(model: LinearMdpModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> LinearMdpModel:
    return model_from_dict(json.loads(Path(path).read_text()))
