"""Representational similarity analysis with cosine kernels."""
from __future__ import annotations

import numpy as np


class UndefinedError(ValueError):
    pass


def cosine_matrix(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise UndefinedError("cosine similarity undefined for zero vectors")
    u = x / norms[:, None]
    return u @ u.T


def rsa(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of the strictly upper-triangular cosine similarities."""
    if len(a) != len(b):
        raise ValueError("both feature sets must describe the same items")
    if len(a) < 3:
        raise ValueError("RSA needs at least three items")
    iu = np.triu_indices(len(a), k=1)
    sa = cosine_matrix(a)[iu]
    sb = cosine_matrix(b)[iu]
    da, db = sa - sa.mean(), sb - sb.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0:
        raise UndefinedError("similarity structure has zero variance")
    return float((da * db).sum() / denom)
