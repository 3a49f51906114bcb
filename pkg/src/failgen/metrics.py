"""Sample-fidelity metrics: failure rate, k-NN density, k-NN coverage.

Trajectories are embedded as the intruder's relative position over the full
horizon.  Density counts how often generated points land inside real points'
k-NN balls (realism, can exceed 1); coverage is the fraction of real points
whose ball captures at least one generated point (diversity, in [0, 1]).
Ties on the ball boundary count as inside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .simulator import SimulationResult

FEATURE_DIM = 48


def failure_rate(robustness_values) -> float:
    """Fraction of simulations that are actual collisions (rho exactly 0)."""
    rho = np.asarray(robustness_values, dtype=np.float64)
    if rho.size == 0:
        raise ValueError("failure_rate: empty input")
    return float(np.mean(rho == 0.0))


def embed(result: SimulationResult) -> np.ndarray:
    """Flatten the relative-position series, time-major, into 48 values."""
    rel = result.relative_positions()
    if rel.shape[0] * 2 != FEATURE_DIM:
        raise ValueError(f"embed: expected {FEATURE_DIM // 2} steps, "
                         f"got {rel.shape[0]}")
    return rel.reshape(-1).astype(np.float64)


def _as_features(points):
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("feature arrays must be 2-D [n, d]")
    return x


def knn_radii(real, k: int, method: str = "kdtree") -> np.ndarray:
    """Distance from each real point to its k-th nearest other real point."""
    real = _as_features(real)
    n = len(real)
    if n <= k:
        raise ValueError(f"need more than k={k} real points, got {n}")
    if method == "kdtree":
        dists, _ = cKDTree(real).query(real, k=k + 1)
        return dists[:, k]
    if method == "brute":
        d2 = np.sum((real[:, None, :] - real[None, :, :]) ** 2, axis=-1)
        d = np.sqrt(d2)
        return np.sort(d, axis=1)[:, k]   # column 0 is the self-distance 0
    raise ValueError(f"unknown method {method!r}")


def density(generated, real, k: int, method: str = "kdtree") -> float:
    """(1 / (k |gen|)) * sum over (g, r) of [dist(g, r) <= radius(r)]."""
    generated = _as_features(generated)
    real = _as_features(real)
    if len(generated) == 0:
        raise ValueError("density: no generated points")
    radii = knn_radii(real, k, method=method)
    if method == "kdtree":
        tree = cKDTree(generated)
        hits = sum(len(tree.query_ball_point(r, radius))
                   for r, radius in zip(real, radii))
    else:
        d = np.sqrt(np.sum((generated[:, None, :] - real[None, :, :]) ** 2,
                           axis=-1))
        hits = int(np.sum(d <= radii[None, :]))
    return float(hits) / (k * len(generated))


def coverage(generated, real, k: int, method: str = "kdtree") -> float:
    """Fraction of real points whose k-NN ball contains a generated point."""
    generated = _as_features(generated)
    real = _as_features(real)
    if len(generated) == 0:
        raise ValueError("coverage: no generated points")
    radii = knn_radii(real, k, method=method)
    if method == "kdtree":
        tree = cKDTree(generated)
        covered = sum(1 for r, radius in zip(real, radii)
                      if len(tree.query_ball_point(r, radius)) > 0)
    else:
        d = np.sqrt(np.sum((generated[:, None, :] - real[None, :, :]) ** 2,
                           axis=-1))
        covered = int(np.sum(np.any(d <= radii[None, :], axis=0)))
    return covered / len(real)


@dataclass
class FidelityReport:
    failure_rate: float
    density: float
    coverage: float
    k: int
    n_real: int
    n_generated: int

    def as_dict(self):
        return {"failure_rate": self.failure_rate, "density": self.density,
                "coverage": self.coverage, "k": self.k, "n_real": self.n_real,
                "n_generated": self.n_generated}

    def as_table(self) -> str:
        rows = [("failure_rate", f"{self.failure_rate:.4f}"),
                ("density", f"{self.density:.4f}"),
                ("coverage", f"{self.coverage:.4f}"),
                ("k", str(self.k)),
                ("n_real", str(self.n_real)),
                ("n_generated", str(self.n_generated))]
        width = max(len(a) for a, _ in rows)
        return "\n".join(f"{a:<{width}}  {b}" for a, b in rows)


def fidelity_report(real_features, generated_features, generated_rhos,
                    k: int) -> FidelityReport:
    """Compare generated failures against real (reference) failures.

    The failure rate covers every generated simulation; density and coverage
    compare only the failure subsets represented by real_features and
    generated_features.
    """
    return FidelityReport(
        failure_rate=failure_rate(generated_rhos),
        density=density(generated_features, real_features, k),
        coverage=coverage(generated_features, real_features, k),
        k=k, n_real=len(real_features), n_generated=len(generated_features))
