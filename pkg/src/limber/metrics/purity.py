"""k-nearest-neighbour label purity under cosine similarity."""
from __future__ import annotations

import numpy as np


class ConfigError(ValueError):
    pass


def neighbor_purity(features: np.ndarray, labels, k: int = 10, block: int = 1024) -> float:
    """Mean fraction of each point's ``k`` nearest cosine neighbours (self
    excluded; ties broken by index) that share its label."""
    x = np.asarray(features, dtype=np.float64).reshape(len(features), -1)
    labels = np.asarray(labels)
    n = len(x)
    if k < 1 or k >= n:
        raise ConfigError(f"k={k} needs 1 <= k < N={n}")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    u = x / np.where(norms == 0, 1.0, norms)
    total = 0.0
    for s in range(0, n, block):
        sims = u[s : s + block] @ u.T
        rows = np.arange(s, min(s + block, n))
        sims[rows - s, rows] = -np.inf
        # stable sort on negated similarity keeps lower indices first among ties
        nn = np.argsort(-sims, axis=1, kind="stable")[:, :k]
        total += float((labels[nn] == labels[rows][:, None]).mean(axis=1).sum())
    return total / n
