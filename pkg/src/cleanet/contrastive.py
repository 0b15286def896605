"""Cluster-guided pair selection and the grouped contrastive loss.

For a group of anchors (one FINCH cluster inside the current minibatch) the loss is

    -log( sum_pos exp(cos/t) / sum_neg exp(cos/t) )

summed over all (anchor, positive) and (anchor, negative) pairs of the group,
then averaged over the groups that produced anchors. ``infonce=True`` adds the
positive terms to the denominator instead.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterPartition
from .errors import ConfigurationError


@dataclass
class Anchor:
    index: int  # position in the batch
    group: int
    positives: np.ndarray
    negatives: np.ndarray


@dataclass
class PairSet:
    anchors: list[Anchor] = field(default_factory=list)
    temperature: float = 0.1
    num_s: int = 3

    def __len__(self) -> int:
        return len(self.anchors)

    @property
    def empty(self) -> bool:
        return not self.anchors

    @property
    def s_pos(self) -> int:
        return sum(len(a.positives) for a in self.anchors)

    @property
    def s_neg(self) -> int:
        return sum(len(a.negatives) for a in self.anchors)

    @property
    def groups(self) -> list[int]:
        return sorted({a.group for a in self.anchors})


def select_pairs(batch_indices, partition: ClusterPartition, num_s: int = 3, temperature: float = 0.1) -> PairSet:
    """Build anchors for a minibatch of window indices.

    An anchor's cluster needs ``num_s`` members inside the batch and must not be
    contamination-flagged. Positives are the other batch members of that
    cluster; negatives are every batch member of the represented cluster whose
    centroid lies farthest from the anchor cluster's centroid. Flagged clusters
    may still serve as negatives.
    """
    if num_s < 2:
        raise ConfigurationError(f"num_s must be >= 2, got {num_s}")
    batch_indices = np.asarray(batch_indices)
    labels = partition.assignment[batch_indices]
    present = np.unique(labels)
    pairs = PairSet(temperature=temperature, num_s=num_s)
    if len(present) < 2:
        return pairs
    flagged = partition.flagged
    pos_of = {int(c): np.flatnonzero(labels == c) for c in present}
    for c in present:
        c = int(c)
        in_batch = pos_of[c]
        if len(in_batch) < num_s or (flagged is not None and flagged[c]):
            continue
        others = [int(o) for o in present if o != c]
        dist = np.linalg.norm(partition.centroids[others] - partition.centroids[c], axis=1)
        far = others[int(np.argmax(dist))]  # first maximum -> lowest cluster id on ties
        negatives = pos_of[far]
        for pos in in_batch:
            pairs.anchors.append(Anchor(int(pos), c, in_batch[in_batch != pos], negatives))
    return pairs


def simclr_pairs(n: int, temperature: float = 0.1) -> PairSet:
    """Augmentation pairing over a ``2n`` latent stack: anchor ``i``'s positive is ``n + i``
    (its jittered copy) and every other original in the batch is a negative."""
    pairs = PairSet(temperature=temperature, num_s=2)
    if n < 2:
        return pairs
    idx = np.arange(n)
    for i in range(n):
        pairs.anchors.append(Anchor(i, i, np.array([n + i]), idx[idx != i]))
    return pairs


def jitter(windows: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma == 0:
        return windows.copy()
    return np.clip(windows + rng.normal(0.0, sigma, size=windows.shape), 0.0, 1.0)


def _unit(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    u = z / safe[:, None]
    u[norms == 0] = 0.0
    return u, norms


def _logsumexp(x: np.ndarray) -> float:
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def contrastive_loss_and_grad(pairs: PairSet, latents: np.ndarray, infonce: bool = False) -> tuple[float, np.ndarray]:
    """Loss and its gradient w.r.t. ``latents``. An empty pair set contributes 0."""
    latents = np.asarray(latents, dtype=np.float64)
    grad = np.zeros_like(latents)
    if pairs.empty:
        return 0.0, grad
    t = pairs.temperature
    if not t > 0:
        raise ConfigurationError(f"temperature must be positive, got {t}")
    u, norms = _unit(latents)
    sim = u @ u.T
    coeff = np.zeros_like(sim)  # dLoss / dsim[a, b]

    by_group: dict[int, list[Anchor]] = {}
    for a in pairs.anchors:
        by_group.setdefault(a.group, []).append(a)

    losses = []
    for g in sorted(by_group):
        anchors = by_group[g]
        pa = np.concatenate([np.full(len(a.positives), a.index) for a in anchors]).astype(np.int64)
        pb = np.concatenate([a.positives for a in anchors]).astype(np.int64)
        na = np.concatenate([np.full(len(a.negatives), a.index) for a in anchors]).astype(np.int64)
        nb = np.concatenate([a.negatives for a in anchors]).astype(np.int64)
        if len(nb) == 0 or len(pb) == 0:
            continue
        sp = sim[pa, pb] / t
        sn = sim[na, nb] / t
        if infonce:
            both = np.concatenate([sp, sn])
            loss = -_logsumexp(sp) + _logsumexp(both)
            sm = _softmax(both)
            gp = (-_softmax(sp) + sm[: len(sp)]) / t
            gn = sm[len(sp):] / t
        else:
            loss = -_logsumexp(sp) + _logsumexp(sn)
            gp = -_softmax(sp) / t
            gn = _softmax(sn) / t
        losses.append(loss)
        np.add.at(coeff, (pa, pb), gp)
        np.add.at(coeff, (na, nb), gn)

    if not losses:
        return 0.0, grad
    K = len(losses)
    coeff /= K
    du = coeff @ u + coeff.T @ u
    radial = np.einsum("ij,ij->i", du, u)
    safe = np.where(norms > 0, norms, 1.0)
    grad = (du - radial[:, None] * u) / safe[:, None]
    grad[norms == 0] = 0.0
    return float(np.mean(losses)), grad


def contrastive_loss(pairs: PairSet, latents: np.ndarray, infonce: bool = False) -> float:
    return contrastive_loss_and_grad(pairs, latents, infonce)[0]
