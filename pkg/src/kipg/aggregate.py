"""History aggregation of relational counts.

For each clause the value fed to the policy at time T is

    mu_T + sum_{t=1}^{T-1} w_t * K(c_t, c_ref),   K(x, y) = exp(-(x - y)^2)

where ``c_t`` are counts normalized by the clause's running maximum, ``w_t``
are normalized exponential recency weights and ``c_ref`` is the count at T-1
(or T, if configured).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MU_MODES = ("current", "zero", "mean")


def kernel(x, y):
    return np.exp(-np.square(np.subtract(x, y)))


def recency_weights(n: int, rho: float) -> np.ndarray:
    """Weights for t = 1..n, largest on the most recent entry, summing to 1."""
    if n <= 0:
        return np.zeros(0)
    w = rho ** np.arange(n - 1, -1, -1, dtype=float)
    total = w.sum()
    if total <= 0:
        # rho == 0: all mass on the latest entry
        w = np.zeros(n)
        w[-1] = 1.0
        return w
    return w / total


class CountHistory:
    """Raw counts per clause for one trajectory, plus running maxima."""

    def __init__(self, n_clauses: int):
        self.n_clauses = n_clauses
        self._rows: list[np.ndarray] = []
        self.scale = np.ones(n_clauses)

    def append(self, counts) -> None:
        counts = np.asarray(counts, dtype=float)
        if counts.shape != (self.n_clauses,):
            raise ValueError(f"expected {self.n_clauses} counts, got shape {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        self._rows.append(counts)
        self.scale = np.maximum(self.scale, counts)

    @property
    def T(self) -> int:
        return len(self._rows)

    @property
    def raw(self) -> np.ndarray:
        if not self._rows:
            return np.zeros((0, self.n_clauses))
        return np.vstack(self._rows)

    def copy(self) -> "CountHistory":
        out = CountHistory(self.n_clauses)
        out._rows = list(self._rows)
        out.scale = self.scale.copy()
        return out

    @classmethod
    def from_counts(cls, rows) -> "CountHistory":
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        h = cls(rows.shape[1])
        for r in rows:
            h.append(r)
        return h


@dataclass(frozen=True)
class AggregatedFeatureVector:
    values: np.ndarray
    mu: np.ndarray

    def __len__(self):
        return len(self.values)


def aggregate(history: CountHistory, rho: float = 0.9, mu_mode: str = "current",
              enabled: bool = True, reference: str = "previous") -> AggregatedFeatureVector:
    T = history.T
    if T < 1:
        raise ValueError("aggregate needs at least one observation (T >= 1)")
    if mu_mode not in MU_MODES:
        raise ValueError(f"mu_mode must be one of {MU_MODES}")
    norm = history.raw / history.scale
    if mu_mode == "current":
        mu = norm[-1].copy()
    elif mu_mode == "mean":
        mu = norm.mean(axis=0)
    else:
        mu = np.zeros(history.n_clauses)
    if not enabled or T == 1:
        return AggregatedFeatureVector(mu.copy(), mu)
    past = norm[:-1]                       # t = 1 .. T-1
    ref = norm[-2] if reference == "previous" else norm[-1]
    w = recency_weights(T - 1, rho)
    values = mu + w @ kernel(past, ref)
    return AggregatedFeatureVector(values, mu)


class FeatureTracker:
    """Streams raw counts of one trajectory into aggregated feature vectors."""

    def __init__(self, n_clauses: int, rho: float = 0.9, mu_mode: str = "current",
                 enabled: bool = True, reference: str = "previous"):
        self.history = CountHistory(n_clauses)
        self.rho, self.mu_mode, self.enabled, self.reference = rho, mu_mode, enabled, reference

    def push(self, counts) -> np.ndarray:
        self.history.append(counts)
        return aggregate(self.history, self.rho, self.mu_mode, self.enabled,
                         self.reference).values
