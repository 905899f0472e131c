"""Optimistic least-squares policy evaluation of the bonus-to-go in the bonus MDP."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

LAMBDA = 1.0


@dataclass(frozen=True)
class TransitionDataset:
    """Per-step transitions; ``next_states[h]`` is empty at the last step."""

    states: list
    actions: list
    next_states: list
    episodes: np.ndarray  # source episode ids, for independence checks

    @classmethod
    def from_rollouts(cls, states, actions, episodes=None):
        states = np.asarray(states)
        actions = np.asarray(actions)
        n, H = states.shape
        if episodes is None:
            episodes = np.arange(n)
        return cls(
            states=[states[:, h] for h in range(H)],
            actions=[actions[:, h] for h in range(H)],
            next_states=[states[:, h + 1] if h < H - 1 else states[:0, h] for h in range(H)],
            episodes=np.asarray(episodes),
        )

    @property
    def horizon(self) -> int:
        return len(self.states)

    def __len__(self):
        return len(self.episodes)

    def features(self, phi: np.ndarray, h: int) -> np.ndarray:
        return phi[self.states[h], self.actions[h]]


@dataclass(frozen=True)
class BackupArtifacts:
    grams: np.ndarray  # (H, d, d)
    weights: np.ndarray  # (H, d)
    dynamics_bonus: np.ndarray  # (H, S, A)
    beta_p: float
    lam: float = LAMBDA


@dataclass(frozen=True)
class BonusValueFn:
    B: np.ndarray  # (H, S, A)
    W: np.ndarray  # (H+1, S), W[H] = 0
    caps: np.ndarray  # (H,)


def build_gram(features, lam: float = LAMBDA) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if lam < 1:
        raise ValueError(f"lambda >= 1 required, got {lam}")
    return lam * np.eye(features.shape[-1]) + features.T @ features


def weighted_norms(matrix_factor, phi: np.ndarray) -> np.ndarray:
    """sqrt(phi^T Lambda^{-1} phi) for every leading index of phi, via a Cholesky factor."""
    flat = phi.reshape(-1, phi.shape[-1])
    sol = cho_solve(matrix_factor, flat.T).T
    return np.sqrt(np.maximum((flat * sol).sum(-1), 0.0)).reshape(phi.shape[:-1])


def dynamics_bonus(gram: np.ndarray, beta_p: float, phi) -> np.ndarray:
    """beta_p * ||phi||_{Lambda^{-1}}; phi may be a single vector or a table (..., d)."""
    phi = np.asarray(phi, dtype=float)
    return beta_p * weighted_norms(cho_factor(gram), phi)


def bonus_caps(beta: float, gamma: float, horizon: int) -> np.ndarray:
    """B_h^max = 2 beta (H - h + 1) / sqrt(gamma) for 1-indexed h."""
    return 2 * beta * (horizon - np.arange(horizon)) / np.sqrt(gamma)


def _clip(x, lower, upper):
    return np.clip(x, lower, upper)


def olspe(phi: np.ndarray, dataset: TransitionDataset, bonus, beta_p: float, beta: float,
          gamma: float, policy_probs: np.ndarray, lam: float = LAMBDA):
    """Backward least-squares pass producing clipped bonus-to-go tables.

    ``phi`` is the (S, A, d) feature table, ``bonus`` the immediate Q-bonus
    (H, S, A), ``policy_probs`` the evaluated policy (H, S, A).
    """
    bonus = np.asarray(bonus, dtype=float)
    if not np.isfinite(bonus).all():
        raise ValueError("non-finite bonus")
    H, S, A = bonus.shape
    d = phi.shape[-1]
    caps = bonus_caps(beta, gamma, H)
    B = np.empty((H, S, A))
    W = np.zeros((H + 1, S))
    grams = np.empty((H, d, d))
    weights = np.zeros((H, d))
    bp = np.empty((H, S, A))
    for h in range(H - 1, -1, -1):
        feats = dataset.features(phi, h)
        grams[h] = build_gram(feats, lam)
        factor = cho_factor(grams[h])
        if h < H - 1 and len(feats):
            target = feats.T @ W[h + 1][dataset.next_states[h]]
            weights[h] = cho_solve(factor, target)
        bp[h] = beta_p * weighted_norms(factor, phi)
        backup = phi @ weights[h] + bp[h]
        B[h] = _clip(bonus[h] + backup, 0.0, caps[h])
        W[h] = (policy_probs[h] * B[h]).sum(-1)
    return BonusValueFn(B, W, caps), BackupArtifacts(grams, weights, bp, beta_p, lam)
