"""Constructors for valid linear MDPs and adversarial cost sequences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linmdp import LinearMdpModel, check_model, occupancy, policy_probs

STOCHASTIC_TOL = 1e-9


def uniform_simplex(rng: np.random.Generator, size, dim: int) -> np.ndarray:
    """Uniform draws from the probability simplex via normalized exponentials."""
    e = rng.exponential(size=tuple(np.atleast_1d(size)) + (dim,))
    return e / e.sum(axis=-1, keepdims=True)


def tabular_embed(P, horizon: int | None = None, s1: int = 0) -> LinearMdpModel:
    """One-hot realization: d = S*A, phi(s, a) = e_(s,a), psi_h(s')_(s,a) = P_h(s'|s, a).

    ``P`` has shape (H-1, S, A, S). ``horizon`` is only needed when P is empty.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 4 or P.shape[1] != P.shape[3]:
        raise ValueError(f"transition tables must have shape (H-1, S, A, S), got {P.shape}")
    H = P.shape[0] + 1 if horizon is None else horizon
    if P.shape[0] != H - 1:
        raise ValueError(f"{P.shape[0]} transition tables for horizon {H}")
    if (P < -STOCHASTIC_TOL).any() or (np.abs(P.sum(-1) - 1) > STOCHASTIC_TOL).any():
        raise ValueError("transition tables are not row-stochastic")
    _, S, A, _ = P.shape
    phi = np.eye(S * A).reshape(S, A, S * A)
    psi = P.transpose(0, 3, 1, 2).reshape(H - 1, S, S * A)
    return LinearMdpModel(phi, psi, H, s1)


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str = "tabular_onehot"  # or "simplex_mixture"
    S: int = 4
    A: int = 3
    H: int = 3
    d: int | None = None  # ignored for tabular_onehot (d = S*A)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("tabular_onehot", "simplex_mixture"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.kind == "simplex_mixture" and (self.d is None or self.d < 1):
            raise ValueError("simplex_mixture needs d >= 1")
        if min(self.S, self.A, self.H) < 1:
            raise ValueError("S, A, H must be positive")


def random_linmdp(spec: GeneratorSpec, rng: np.random.Generator | None = None) -> LinearMdpModel:
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    S, A, H = spec.S, spec.A, spec.H
    if spec.kind == "tabular_onehot":
        P = uniform_simplex(rng, (H - 1, S, A), S)
        return check_model(tabular_embed(P, horizon=H))
    d = spec.d
    phi = uniform_simplex(rng, (S, A), d)
    mu = uniform_simplex(rng, (H - 1, d), S)  # mu[h, i] is a next-state distribution
    psi = mu.transpose(0, 2, 1)
    return check_model(LinearMdpModel(phi, psi, H))


# ---------------------------------------------------------------- adversaries

ADVERSARY_KINDS = ("zero", "fixed_schedule", "sinusoid", "switching", "adaptive_occupancy")


@dataclass(frozen=True)
class AdversarySpec:
    kind: str = "sinusoid"
    seed: int = 0
    period: float = 256.0
    amplitude: float = 1.0
    switch_episodes: tuple = ()
    strength: float = 1.0
    vectors: list | None = None  # fixed_schedule: (H, d) or (K, H, d)
    normalization: str = "max"  # "max": scale to unit grid max; "clip": shrink only

    def __post_init__(self):
        if self.kind not in ADVERSARY_KINDS:
            raise ValueError(f"unknown adversary kind {self.kind!r}")
        if self.normalization not in ("max", "clip"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.period <= 0:
            raise ValueError("period must be positive")


def normalize_costs(phi: np.ndarray, costs: np.ndarray, mode: str = "max") -> np.ndarray:
    """Rescale each c_h so max_{s,a} |phi^T c_h| <= 1, then clip ||c_h|| to sqrt(d)."""
    costs = np.array(costs, dtype=float)
    d = phi.shape[-1]
    grid = np.abs(np.einsum("sad,hd->hsa", phi, costs)).reshape(costs.shape[0], -1).max(-1)
    scale = np.ones_like(grid)
    nz = grid > 0
    if mode == "max":
        scale[nz] = 1.0 / grid[nz]
    else:
        big = grid > 1
        scale[big] = 1.0 / grid[big]
    costs *= scale[:, None]
    norms = np.linalg.norm(costs, axis=-1)
    over = norms > np.sqrt(d)
    costs[over] *= (np.sqrt(d) / norms[over])[:, None]
    return costs


class Adversary:
    """Chooses H cost vectors per episode from the episode index and submitted policies.

    Only policies are visible; trajectories never reach the adversary.
    """

    def __init__(self, spec: AdversarySpec, model: LinearMdpModel):
        self.spec = spec
        self.model = model
        self.phi = model.phi
        H, d = model.horizon, model.feature_dim
        rng = np.random.default_rng(spec.seed)
        # losses in [0, 1] keep the learning problem nontrivial for one-hot features
        self._base = rng.uniform(0.0, 1.0, size=(H, d))
        self._alt = rng.uniform(-1.0, 1.0, size=(H, d))
        self._other = rng.uniform(0.0, 1.0, size=(H, d))
        if spec.vectors is not None:
            self._fixed = np.asarray(spec.vectors, dtype=float)
            if self._fixed.shape[-2:] != (H, d):
                raise ValueError(f"fixed vectors must end in shape {(H, d)}, got {self._fixed.shape}")
        else:
            self._fixed = self._base

    @property
    def oblivious(self) -> bool:
        return self.spec.kind != "adaptive_occupancy"

    def raw_costs(self, k: int, policy_history) -> np.ndarray:
        spec = self.spec
        if spec.kind == "zero":
            return np.zeros_like(self._base)
        if spec.kind == "fixed_schedule":
            return self._fixed[k] if self._fixed.ndim == 3 else self._fixed
        if spec.kind == "sinusoid":
            return self._base + spec.amplitude * np.sin(2 * np.pi * k / spec.period) * self._alt
        if spec.kind == "switching":
            flips = sum(1 for e in spec.switch_episodes if k >= e)
            return self._other if flips % 2 else self._base
        if not policy_history:
            raise ValueError("adaptive adversary needs the submitted policy")
        occ = occupancy(self.model, policy_probs(policy_history[-1])).d
        return spec.strength * np.einsum("hsa,sad->hd", occ, self.phi)

    def next_costs(self, k: int, policy_history=()) -> np.ndarray:
        """Cost vectors (H, d) for episode k (0-indexed)."""
        return normalize_costs(self.phi, self.raw_costs(k, policy_history), self.spec.normalization)

    def schedule(self, K: int) -> np.ndarray:
        if not self.oblivious:
            raise ValueError("adaptive adversaries have no policy-free schedule")
        return np.stack([self.next_costs(k) for k in range(K)])


def make_adversary(spec: AdversarySpec, model: LinearMdpModel) -> Adversary:
    return Adversary(spec, model)


def check_cost_schedule(phi: np.ndarray, costs, tol: float = 1e-12) -> list[str]:
    """Violated cost-vector constraints for a (K, H, d) schedule."""
    costs = np.asarray(costs, dtype=float)
    out = []
    grid = np.abs(np.einsum("sad,khd->khsa", phi, costs))
    if grid.size and grid.max() > 1 + tol:
        out.append(f"loss magnitude {grid.max():.6g} > 1")
    norms = np.linalg.norm(costs, axis=-1)
    if norms.size and norms.max() > np.sqrt(phi.shape[-1]) + tol:
        out.append(f"cost norm {norms.max():.6g} > sqrt(d)")
    return out
