"""Walker/Vose alias tables: O(K) construction, O(1) categorical draws."""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class AliasTable:
    prob: np.ndarray
    alias: np.ndarray
    weights: np.ndarray
    total_weight: float

    @property
    def size(self):
        return len(self.prob)

    @classmethod
    def build(cls, weights):
        return build(weights)

    def sample(self, rng):
        return sample(self, rng)

    def prob_of(self, k):
        return prob_of(self, k)


def build(weights) -> AliasTable:
    """Build a table whose implied distribution is ``weights / sum(weights)``.

    Zero-weight buckets get probability 0. Raises ``ValueError`` for an empty,
    all-zero, negative or non-finite weight vector.
    """
    w = np.ascontiguousarray(weights, dtype=np.float64)
    if w.ndim != 1 or len(w) == 0:
        raise ValueError("weights must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise ValueError("at least one weight must be positive")
    prob = np.empty(len(w), dtype=np.float64)
    alias = np.empty(len(w), dtype=np.int64)
    total = kernels.alias_build(w, prob, alias)
    return AliasTable(prob, alias, w, float(total))


def sample(table: AliasTable, rng) -> int:
    """One draw; consumes exactly two uniforms from ``rng``."""
    k, rng.state = kernels.alias_draw(table.prob, table.alias, rng.state)
    return int(k)


def sample_many(table: AliasTable, rng, count: int) -> np.ndarray:
    out = np.empty(count, dtype=np.int64)
    rng.state = kernels.alias_draw_many(table.prob, table.alias, count, out, rng.state)
    return out


def prob_of(table: AliasTable, k: int) -> float:
    """Probability the table assigns to ``k``, reconstructed from its buckets."""
    K = table.size
    if not 0 <= k < K:
        raise ValueError(f"topic {k} out of range 0..{K - 1}")
    terms = [float(table.prob[k])]
    terms.extend(1.0 - float(p) for p, a in zip(table.prob, table.alias) if a == k and p < 1.0)
    return math.fsum(terms) / K


def implied_distribution(table: AliasTable) -> np.ndarray:
    K = table.size
    out = table.prob.copy()
    np.add.at(out, table.alias, 1.0 - table.prob)
    return out / K
