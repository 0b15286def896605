"""First-neighbour (FINCH) partition of latent codes, lowest level only.

Two windows are linked when one is the other's nearest neighbour or when both
share the same nearest neighbour; clusters are the connected components of that
graph. Every shared-neighbour link is already implied by the two
nearest-neighbour edges, so the union-find below only walks ``i -> k_i``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ConsistencyError
from .neighbors import pairwise_sq_dists


@dataclass
class ClusterPartition:
    assignment: np.ndarray  # cluster id per window
    members: list[np.ndarray]
    centroids: np.ndarray  # (N_c, L)
    mean_contamination: np.ndarray | None = None
    flagged: np.ndarray | None = None
    tau: float | None = None

    @property
    def num_clusters(self) -> int:
        return len(self.members)

    def to_csv(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        mc = self.mean_contamination if self.mean_contamination is not None else np.full(self.num_clusters, np.nan)
        fl = self.flagged if self.flagged is not None else np.zeros(self.num_clusters, dtype=bool)
        with tmp.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["window_index", "cluster_id", "cluster_mean_contamination", "flagged"])
            for i, c in enumerate(self.assignment):
                writer.writerow([i, int(c), repr(float(mc[c])), int(bool(fl[c]))])
        tmp.replace(path)


def first_neighbors(latents: np.ndarray, sq_dists: np.ndarray | None = None) -> np.ndarray:
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim == 1:
        latents = latents[:, None]
    n = latents.shape[0]
    if n < 2:
        raise ConfigurationError(f"first-neighbour search needs at least 2 windows, got {n}")
    d2 = pairwise_sq_dists(latents) if sq_dists is None else sq_dists.copy()
    np.fill_diagonal(d2, np.inf)
    return np.argmin(d2, axis=1)  # first minimum wins -> smallest index on ties


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the smaller index as root so labels are order-stable
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def components_from_neighbors(nbr: np.ndarray) -> np.ndarray:
    """Canonical component labels: clusters numbered by their smallest member."""
    n = len(nbr)
    uf = _UnionFind(n)
    for i, j in enumerate(nbr):
        uf.union(i, int(j))
    roots = [uf.find(i) for i in range(n)]
    relabel: dict[int, int] = {}
    out = np.empty(n, dtype=np.int64)
    for i, r in enumerate(roots):
        if r not in relabel:
            relabel[r] = len(relabel)
        out[i] = relabel[r]
    return out


def partition_from_assignment(latents: np.ndarray, assignment: np.ndarray) -> ClusterPartition:
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim == 1:
        latents = latents[:, None]
    n_c = int(assignment.max()) + 1
    members = [np.flatnonzero(assignment == c) for c in range(n_c)]
    centroids = np.stack([latents[m].mean(axis=0) for m in members])
    return ClusterPartition(assignment, members, centroids)


def finch_partition(latents: np.ndarray, sq_dists: np.ndarray | None = None) -> ClusterPartition:
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim == 1:
        latents = latents[:, None]
    nbr = first_neighbors(latents, sq_dists)
    return partition_from_assignment(latents, components_from_neighbors(nbr))


def annotate_contamination(p: ClusterPartition, scores: np.ndarray, tau: float) -> ClusterPartition:
    """Attach per-cluster mean contamination scores; clusters above ``tau`` are flagged."""
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(p.assignment):
        raise ConsistencyError(f"profile covers {len(scores)} windows, partition has {len(p.assignment)}")
    mean = np.array([scores[m].mean() for m in p.members])
    return ClusterPartition(p.assignment, p.members, p.centroids, mean, mean > tau, float(tau))
