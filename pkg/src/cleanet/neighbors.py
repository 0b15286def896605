"""Brute-force distance and similarity kernels shared by scoring and clustering."""
from __future__ import annotations

import numpy as np


def pairwise_sq_dists(z: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, computed row by row from differences.

    Differences (rather than the Gram expansion) keep identical points at exactly
    zero distance, which the tie rules downstream rely on.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    out = np.empty((n, n))
    for i in range(n):
        diff = z - z[i]
        out[i] = np.einsum("ij,ij->i", diff, diff)
    return out


def cosine_matrix(z: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity; pairs involving a zero vector get 0."""
    z = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    u = z / safe[:, None]
    sim = u @ u.T
    sim[norms == 0, :] = 0.0
    sim[:, norms == 0] = 0.0
    return np.clip(sim, -1.0, 1.0)


def knn_indices(z: np.ndarray, k: int, sq_dists: np.ndarray | None = None) -> np.ndarray:
    """Indices of the ``k`` nearest other points per row, nearest first; ties go to the lower index."""
    d2 = pairwise_sq_dists(z) if sq_dists is None else sq_dists.copy()
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]
