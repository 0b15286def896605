"""Latent-neighbourhood contamination scores and the adaptive reconstruction weights.

The consistency of a window is the mean cosine similarity between its latent
code and those of its ``k`` nearest neighbours (Euclidean). The contamination
score is ``1 - consistency``: windows that look unlike their neighbours score
high and receive a small weight ``1 / (1 + exp(alpha * (score - tau)))``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DimensionError
from .neighbors import cosine_matrix, knn_indices, pairwise_sq_dists
from .nn_core import sigmoid


@dataclass
class ContaminationProfile:
    consistency: np.ndarray
    score: np.ndarray
    weight: np.ndarray
    k: int
    alpha: float
    tau: float

    def __len__(self) -> int:
        return len(self.score)

    def to_csv(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with tmp.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["window_index", "consistency", "score", "weight"])
            for i, (c, s, w) in enumerate(zip(self.consistency, self.score, self.weight)):
                writer.writerow([i, repr(float(c)), repr(float(s)), repr(float(w))])
        tmp.replace(path)


def knn_consistency(latents: np.ndarray, k: int, sq_dists: np.ndarray | None = None) -> np.ndarray:
    latents = np.asarray(latents, dtype=np.float64)
    n = latents.shape[0]
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    if n < k + 1:
        raise ConfigurationError(f"need at least k+1={k + 1} windows for kNN scoring, got {n}")
    nbrs = knn_indices(latents, k, sq_dists)
    sim = cosine_matrix(latents)
    return np.take_along_axis(sim, nbrs, axis=1).mean(axis=1)


def contamination_score(consistency: np.ndarray) -> np.ndarray:
    return 1.0 - np.asarray(consistency, dtype=np.float64)


def adaptive_weight(score, alpha: float, tau: float):
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    out = sigmoid(-alpha * (np.asarray(score, dtype=np.float64) - tau))
    return float(out) if np.ndim(out) == 0 else out


def auto_tau(score: np.ndarray) -> float:
    """Median plus one standard deviation of the current scores."""
    score = np.asarray(score, dtype=np.float64)
    return float(np.median(score) + score.std())


def awrl_loss(x: np.ndarray, x_hat: np.ndarray, weight) -> float:
    """Weighted squared reconstruction error: one window, or the mean over a batch."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    if x.ndim == 2:
        return float(weight) * float(np.sum((x - x_hat) ** 2))
    per = np.sum((x - x_hat) ** 2, axis=tuple(range(1, x.ndim)))
    return float(np.mean(np.asarray(weight) * per))


def awrl_loss_and_grad(x: np.ndarray, x_hat: np.ndarray, weight: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch AWRL and its gradient with respect to ``x_hat`` (weights held constant)."""
    if x.shape != x_hat.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    B = x.shape[0]
    resid = x_hat - x
    wb = np.asarray(weight, dtype=np.float64).reshape(B, *([1] * (x.ndim - 1)))
    per = np.sum(resid * resid, axis=tuple(range(1, x.ndim)))
    loss = float(np.mean(np.asarray(weight) * per))
    return loss, (2.0 / B) * wb * resid


def build_profile(latents: np.ndarray, k: int = 10, alpha: float = 100.0, tau: float | str = "auto") -> ContaminationProfile:
    latents = np.asarray(latents, dtype=np.float64)
    k_eff = min(k, latents.shape[0] - 1)
    cons = knn_consistency(latents, k_eff, pairwise_sq_dists(latents))
    score = contamination_score(cons)
    tau_val = auto_tau(score) if tau == "auto" else float(tau)
    weight = adaptive_weight(score, alpha, tau_val)
    return ContaminationProfile(cons, score, np.atleast_1d(weight), k_eff, alpha, tau_val)


def uniform_profile(n: int) -> ContaminationProfile:
    return ContaminationProfile(np.ones(n), np.zeros(n), np.ones(n), 0, 1.0, 0.0)
