"""Benchmark simulators, input distributions, objectives, and the termination oracle.

Every simulator is a pure function of (psi, xs, rng); repeated calls with the
same rng state are bit-identical. y batches are returned as (n, y_dim) arrays.
"""
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Problem", "XDistribution", "SubmanifoldEmbedding",
    "make_problem", "make_embedding", "canonical_xdist",
    "sample_parameterized_bounds", "sample_x", "simulate",
    "three_hump_h", "rosenbrock_gamma", "submanifold_embed",
    "hump_objective", "muon_objective", "objective_value",
    "oracle_expected_loss",
]


def _sigmoid(v):
    return np.exp(-np.logaddexp(0.0, -v))


@dataclass
class XDistribution:
    """Per-coordinate bounds: uniform box for the hump problems, the mean-range
    of x ~ N(mu, 1), mu ~ U[lo, hi] for Rosenbrock."""
    lo: np.ndarray
    hi: np.ndarray


@dataclass
class SubmanifoldEmbedding:
    A: np.ndarray  # 16 x 40, orthonormal rows
    B: np.ndarray  # 2 x 16, orthonormal rows
    seed: int


@dataclass
class Problem:
    kind: str
    psi_dim: int
    tau: float
    epsilon_default: float
    psi0: np.ndarray
    M: int
    N: int = 3000
    x_mode: str = "fixed"
    x_dim: int = 2
    embedding: SubmanifoldEmbedding | None = None
    client: object = None  # external-simulator adapter, set by the harness
    y_dim: int = 1
    objective: str = "hump"  # {hump, mean_y, muon}
    muon_alpha: tuple = (1.0, 0.0)


def make_embedding(seed):
    """A from QR of a 40x16 Gaussian draw (transposed), B likewise from 16x2."""
    rng = np.random.default_rng(seed)
    qa, _ = np.linalg.qr(rng.standard_normal((40, 16)))
    qb, _ = np.linalg.qr(rng.standard_normal((16, 2)))
    return SubmanifoldEmbedding(A=qa.T.copy(), B=qb.T.copy(), seed=seed)


def make_problem(kind, x_mode="fixed", embedding_seed=0, **extra):
    if kind == "three_hump":
        return Problem(kind, 2, -0.8, 0.5, np.array([2.0, 0.0]), M=5,
                       x_mode=x_mode, x_dim=2, objective="hump", **extra)
    if kind == "rosenbrock":
        return Problem(kind, 10, 3.0, 0.2, np.full(10, 2.0), M=16,
                       x_mode=x_mode, x_dim=1, objective="mean_y", **extra)
    if kind == "submanifold_hump":
        psi0 = np.zeros(40)
        psi0[0] = 2.0
        return Problem(kind, 40, -0.8, 0.5, psi0, M=40, x_mode=x_mode, x_dim=2,
                       embedding=make_embedding(embedding_seed),
                       objective="hump", **extra)
    if kind == "external":
        return Problem(kind, x_mode=x_mode, **extra)
    raise ValueError(f"unknown problem kind {kind!r}")


# ---- analytic pieces ----

def three_hump_h(psi):
    p1, p2 = float(psi[0]), float(psi[1])
    return 2 * p1 ** 2 - 1.05 * p1 ** 4 + p1 ** 6 / 6 + p1 * p2 + p2 ** 2


def rosenbrock_gamma(psi):
    p = np.asarray(psi, dtype=np.float64)
    return float(np.sum((p[1:] - p[:-1] ** 2) ** 2 + (p[:-1] - 1) ** 2))


def submanifold_embed(psi, emb):
    return emb.B @ np.tanh(emb.A @ np.asarray(psi, dtype=np.float64))


# ---- input distributions ----

def canonical_xdist(problem):
    if problem.x_dim == 2:
        return XDistribution(np.array([-2.0, 0.0]), np.array([2.0, 5.0]))
    return XDistribution(np.array([-10.0]), np.array([10.0]))


def sample_parameterized_bounds(problem, rng):
    """Fresh per-episode bounds; draw order is all lows then all highs.

    Inverted draws are swapped rather than resampled.
    """
    if problem.x_mode == "fixed":
        return canonical_xdist(problem)
    if problem.x_dim == 2:
        lo = np.array([rng.normal(-2.0, 0.5), rng.normal(0.0, 1.0)])
        hi = np.array([rng.normal(2.0, 0.5), rng.normal(5.0, 1.0)])
    else:
        lo = np.array([rng.normal(0.0, 2.0)])
        hi = np.array([rng.normal(10.0, 2.0)])
    swap = lo > hi
    lo[swap], hi[swap] = hi[swap], lo[swap].copy()
    hi = np.where(lo == hi, hi + 1e-9, hi)
    return XDistribution(lo, hi)


def sample_x(problem, xdist, n, rng):
    if problem.x_dim == 2:
        return rng.uniform(xdist.lo, xdist.hi, size=(n, 2))
    mu = rng.uniform(xdist.lo[0], xdist.hi[0], size=n)
    return (mu + rng.standard_normal(n)).reshape(n, 1)


# ---- simulators ----

def _simulate_hump_2d(psi2, xs, rng):
    norm = float(np.linalg.norm(psi2))
    h = three_hump_h(psi2)
    # at psi = 0 the mixture weight is 0/0, but h = 0 there, so both
    # components give the same law; any fixed weight works
    p1 = min(max(psi2[0] / norm, 0.0), 1.0) if norm > 0.0 else 0.0
    n = len(xs)
    pick = rng.random(n) < p1
    xi = np.where(pick, xs[:, 0], xs[:, 1])
    mu = xi * h + rng.standard_normal(n)
    return (mu + rng.standard_normal(n)).reshape(n, 1)


def simulate(problem, psi, xs, rng):
    """Draw y ~ p(y | psi, x) for each row of xs; returns (n, y_dim)."""
    psi = np.asarray(psi, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    if problem.kind == "three_hump":
        return _simulate_hump_2d(psi, xs, rng)
    if problem.kind == "submanifold_hump":
        return _simulate_hump_2d(submanifold_embed(psi, problem.embedding), xs, rng)
    if problem.kind == "rosenbrock":
        g = rosenbrock_gamma(psi)
        y = g + xs[:, 0] + rng.standard_normal(len(xs))
        return y.reshape(len(xs), 1)
    if problem.kind == "external":
        if problem.client is None:
            raise ValueError("external problem has no simulator client attached")
        return problem.client.call(psi, xs)
    raise ValueError(f"unknown problem kind {problem.kind!r}")


# ---- objectives ----

def hump_objective(ys):
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if ys.size == 0:
        raise ValueError("objective of an empty batch")
    return float(np.mean(_sigmoid(ys - 10.0) - _sigmoid(ys)))


def muon_objective(ys, charges, alpha1, alpha2):
    """Sum over hits; the radicand is clamped at 0 to stay real off-range."""
    if alpha1 <= 0:
        raise ValueError("alpha1 must be positive")
    ys = np.asarray(ys, dtype=np.float64).ravel()
    q = np.asarray(charges)
    if not np.all(np.isin(q, (-1, 1))):
        raise ValueError("charges must be +1 or -1")
    rad_pos = (alpha1 - (ys + alpha2)) / alpha1
    rad_neg = (alpha1 + (ys - alpha2)) / alpha1
    terms = np.where(q == 1, np.sqrt(np.maximum(rad_pos, 0.0)),
                     np.sqrt(np.maximum(rad_neg, 0.0)))
    return float(np.sum(terms))


def objective_value(problem, ys):
    if problem.objective == "hump":
        return hump_objective(ys)
    if problem.objective == "mean_y":
        ys = np.asarray(ys, dtype=np.float64).ravel()
        if ys.size == 0:
            raise ValueError("objective of an empty batch")
        return float(np.mean(ys))
    if problem.objective == "muon":
        a1, a2 = problem.muon_alpha
        ys = np.asarray(ys, dtype=np.float64)
        return muon_objective(ys[:, 0], np.sign(ys[:, 1]) if ys.shape[1] > 1
                              else np.ones(len(ys)), a1, a2)
    raise ValueError(f"unknown objective {problem.objective!r}")


def oracle_expected_loss(problem, psi, xdist, rng, n=10_000):
    """High-precision E[L] estimate for termination checks and metrics.

    Not counted as a simulator call: call accounting tracks only the
    surrogate-retraining batches.
    """
    xs = sample_x(problem, xdist, n, rng)
    ys = simulate(problem, psi, xs, rng)
    return objective_value(problem, ys)
