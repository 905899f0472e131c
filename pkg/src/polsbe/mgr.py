"""Matrix Geometric Resampling estimate of the regularized inverse feature covariance."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

C_STEP = 0.5


class MgrParameterError(ValueError):
    pass


@dataclass(frozen=True)
class MgrParams:
    M: int
    N: int
    gamma: float
    c: float = C_STEP
    guarantee: bool = True

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise MgrParameterError(f"need M >= 1 and N >= 1, got M={self.M}, N={self.N}")
        if self.c != C_STEP:
            raise MgrParameterError("the step constant c is fixed to 1/2")
        if self.gamma <= 0:
            raise MgrParameterError(f"gamma must be positive, got {self.gamma}")
        if self.guarantee and not self.gamma < 0.5:
            raise MgrParameterError(f"gamma < 1/2 required in guarantee mode, got {self.gamma}")

    @property
    def num_samples(self) -> int:
        return self.M * self.N


def mgr_theory_params(d: int, gamma: float, sigma: float, eps: float) -> MgrParams:
    if not sigma <= 0.25:
        raise MgrParameterError(f"sigma <= 1/4 violated (sigma={sigma})")
    if not eps <= sigma / 6:
        raise MgrParameterError(f"eps <= sigma/6 violated (eps={eps}, sigma/6={sigma / 6})")
    if not gamma < 0.5:
        raise MgrParameterError(f"gamma < 1/2 violated (gamma={gamma})")
    M = math.ceil(48 * d / (gamma * sigma) * math.log(72 * d / (gamma**2 * sigma)))
    N = math.ceil(2 / gamma * math.log(1 / (gamma * eps)))
    return MgrParams(M=M, N=N, gamma=gamma)


@dataclass(frozen=True)
class RegInvCovEstimate:
    matrix: np.ndarray
    params: MgrParams
    samples_used: int


def mgr_batch(samples: np.ndarray, params: MgrParams) -> np.ndarray:
    """Run MGR independently on each leading batch entry.

    samples has shape (B, n, d) with n >= M*N; the first M*N samples of each
    batch entry are used in order, sample (m, n) at position m*N + n.
    Returns (B, d, d) symmetric estimates.
    """
    samples = np.asarray(samples, dtype=float)
    B, n, d = samples.shape
    M, N, c, g = params.M, params.N, params.c, params.gamma
    if n < M * N:
        raise ValueError(f"MGR needs {M * N} samples, got {n}")
    if not np.isfinite(samples).all():
        raise ValueError("non-finite MGR samples")
    phi = samples[:, : M * N].reshape(B, M, N, d)
    prod = np.broadcast_to(np.eye(d), (B, M, d, d)).copy()
    acc = np.zeros((B, M, d, d))
    for i in range(N):
        f = phi[:, :, i]
        # prod <- prod (I - c (g I + f f^T)), accumulated left to right
        pf = np.einsum("bmij,bmj->bmi", prod, f)
        prod = (1 - c * g) * prod - c * pf[..., :, None] * f[..., None, :]
        acc += prod
    per_m = c * (np.eye(d) + acc)
    est = per_m.mean(axis=1)
    return 0.5 * (est + est.transpose(0, 2, 1))


def mgr(samples, params: MgrParams) -> RegInvCovEstimate:
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise ValueError(f"samples must be (n, d), got shape {samples.shape}")
    mat = mgr_batch(samples[None], params)[0]
    return RegInvCovEstimate(mat, params, params.num_samples)


# ---------------------------------------------------------------- statistical checks

@dataclass(frozen=True)
class FiniteFeatureDistribution:
    points: np.ndarray  # (m, d)
    probs: np.ndarray  # (m,)

    @classmethod
    def of(cls, points, probs=None):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if probs is None:
            probs = np.full(len(points), 1.0 / len(points))
        return cls(points, np.asarray(probs, dtype=float))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def sample(self, size, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(len(self.points), size=size, p=self.probs)
        return self.points[idx]

    def sigma(self, gamma: float) -> np.ndarray:
        second = np.einsum("m,mi,mj->ij", self.probs, self.points, self.points)
        return second + gamma * np.eye(self.dim)


@dataclass(frozen=True)
class MgrCheckReport:
    deviation: float
    ci: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _chunks(total, size):
    for start in range(0, total, size):
        yield min(size, total - start)


def mgr_bias_check(dist: FiniteFeatureDistribution, gamma: float, N: int, num_replicates: int,
                   rng: np.random.Generator, eps: float = 0.0, z: float = 3.0,
                   guarantee: bool = True) -> MgrCheckReport:
    """Operator-norm distance between the mean of M=1 estimates and the exact inverse.

    ``ci`` is z times the Frobenius norm of the elementwise standard errors,
    which dominates the operator-norm noise of the mean.
    """
    params = MgrParams(M=1, N=N, gamma=gamma, guarantee=guarantee)
    d = dist.dim
    total = np.zeros((d, d))
    total_sq = np.zeros((d, d))
    for b in _chunks(num_replicates, 4096):
        est = mgr_batch(dist.sample((b, N), rng), params)
        total += est.sum(0)
        total_sq += (est**2).sum(0)
    mean = total / num_replicates
    var = np.maximum(total_sq / num_replicates - mean**2, 0.0) * num_replicates / max(num_replicates - 1, 1)
    se = np.sqrt(var / num_replicates)
    target = np.linalg.inv(dist.sigma(gamma))
    deviation = float(np.linalg.norm(mean - target, 2))
    ci = float(z * np.linalg.norm(se))
    return MgrCheckReport(deviation, ci, deviation <= eps + ci)


def mgr_second_moment_check(dist: FiniteFeatureDistribution, params: MgrParams, sigma: float,
                            num_replicates: int, rng: np.random.Generator,
                            z: float = 3.0) -> MgrCheckReport:
    """Max eigenvalue of mean(S Sigma S) - 2 mean(S) - sigma I over replicate estimates S.

    ``ci`` is z standard errors of the replicate values projected on the
    top eigenvector; the check passes iff the eigenvalue is at most ``ci``.
    """
    d = dist.dim
    sig = dist.sigma(params.gamma)
    batch = max(1, 4_000_000 // (params.num_samples * d))
    xs = []
    for b in _chunks(num_replicates, batch):
        est = mgr_batch(dist.sample((b, params.num_samples), rng), params)
        xs.append(est @ sig @ est - 2 * est)
    xs = np.concatenate(xs)
    mean = xs.mean(0) - sigma * np.eye(d)
    vals, vecs = np.linalg.eigh(0.5 * (mean + mean.T))
    top, u = float(vals[-1]), vecs[:, -1]
    proj = np.einsum("i,rij,j->r", u, xs, u)
    se = proj.std(ddof=1) / np.sqrt(num_replicates) if num_replicates > 1 else 0.0
    ci = float(z * se)
    return MgrCheckReport(top, ci, top <= ci)
