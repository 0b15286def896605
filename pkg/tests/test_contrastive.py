import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cleanet.clustering import ClusterPartition, partition_from_assignment
from cleanet.contrastive import (
    Anchor, PairSet, contrastive_loss, contrastive_loss_and_grad, jitter, select_pairs, simclr_pairs,
)
from cleanet.errors import ConfigurationError
from oracles import central_diff, rel_err


def _partition(assignment, centroids=None, flagged=None):
    assignment = np.asarray(assignment)
    if centroids is None:
        centroids = np.arange(assignment.max() + 1, dtype=float)[:, None]
    p = partition_from_assignment(np.zeros((len(assignment), 1)), assignment)
    p.centroids = np.asarray(centroids, dtype=float)
    if flagged is not None:
        p.flagged = np.asarray(flagged)
    return p


def test_single_cluster_batch_is_empty():
    assert select_pairs(np.arange(5), _partition([0] * 5), 2).empty


def test_two_cluster_enumeration():
    p = _partition([0, 0, 0, 1, 1])
    pairs = select_pairs(np.arange(5), p, num_s=2)
    by_index = {a.index: a for a in pairs.anchors}
    assert sorted(by_index) == [0, 1, 2, 3, 4]
    assert sorted(by_index[0].positives.tolist()) == [1, 2]
    assert sorted(by_index[0].negatives.tolist()) == [3, 4]
    assert by_index[3].positives.tolist() == [4]
    assert sorted(by_index[3].negatives.tolist()) == [0, 1, 2]


def test_num_s_threshold_and_flag():
    p = _partition([0, 0, 0, 1, 1], flagged=[True, False])
    pairs = select_pairs(np.arange(5), p, num_s=2)
    assert {a.group for a in pairs.anchors} == {1}  # flagged cluster 0 never anchors
    assert all(sorted(a.negatives.tolist()) == [0, 1, 2] for a in pairs.anchors)  # but still serves as negative
    assert {a.group for a in select_pairs(np.arange(5), _partition([0, 0, 0, 1, 1]), 3).anchors} == {0}


def test_farthest_cluster_by_centroid():
    p = _partition([0, 0, 1, 1, 2, 2], centroids=[[0.0], [1.0], [5.0]])
    pairs = select_pairs(np.arange(6), p, num_s=2)
    anchor0 = next(a for a in pairs.anchors if a.group == 0)
    assert sorted(anchor0.negatives.tolist()) == [4, 5]
    anchor2 = next(a for a in pairs.anchors if a.group == 2)
    assert sorted(anchor2.negatives.tolist()) == [0, 1]


def test_batch_positions_not_global_ids():
    p = _partition([0, 1, 0, 1, 0, 1, 0])
    pairs = select_pairs(np.array([6, 2, 1, 3]), p, num_s=2)
    a = next(a for a in pairs.anchors if a.index == 0)
    assert a.positives.tolist() == [1] and sorted(a.negatives.tolist()) == [2, 3]


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.integers(1, 6), st.integers(2, 5), st.integers(0, 100_000))
def test_pairset_soundness(n, n_clusters, num_s, seed):
    rng = np.random.default_rng(seed)
    assignment = rng.integers(0, n_clusters, size=n)
    assignment = np.unique(assignment, return_inverse=True)[1]
    p = _partition(assignment, rng.normal(size=(assignment.max() + 1, 3)), rng.random(assignment.max() + 1) < 0.3)
    batch = rng.permutation(n)[: int(rng.integers(2, n + 1))]
    labels = assignment[batch]
    for a in select_pairs(batch, p, num_s).anchors:
        assert not set(a.positives.tolist()) & set(a.negatives.tolist())
        assert a.index not in a.positives
        assert np.all(labels[a.positives] == labels[a.index])
        neg_labels = set(labels[a.negatives].tolist())
        assert len(neg_labels) == 1 and labels[a.index] not in neg_labels
        assert not p.flagged[labels[a.index]]
        assert len(a.positives) + 1 >= num_s


def _pairs_one(pos_idx, neg_idx, t=1.0):
    return PairSet([Anchor(0, 0, np.array(pos_idx), np.array(neg_idx))], temperature=t)


def test_loss_examples():
    z = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 3.0]])
    assert contrastive_loss(_pairs_one([1], [2]), z) == pytest.approx(-1.0, abs=1e-12)
    # equal positive and negative sums -> log(1)
    z2 = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, -1.0]])
    assert contrastive_loss(_pairs_one([1], [2]), z2) == pytest.approx(0.0, abs=1e-12)
    assert contrastive_loss(_pairs_one([1], [2]), 2 * z) == pytest.approx(-1.0, abs=1e-12)


def test_loss_averages_over_groups():
    z = np.random.default_rng(0).normal(size=(6, 3))
    a = PairSet([Anchor(0, 0, np.array([1]), np.array([4]))], temperature=0.5)
    b = PairSet([Anchor(2, 1, np.array([3]), np.array([5]))], temperature=0.5)
    both = PairSet(a.anchors + b.anchors, temperature=0.5)
    assert contrastive_loss(both, z) == pytest.approx((contrastive_loss(a, z) + contrastive_loss(b, z)) / 2)


def test_matches_formula_with_multiple_pairs():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(7, 4))
    pairs = PairSet([Anchor(0, 0, np.array([1, 2]), np.array([5, 6])),
                     Anchor(1, 0, np.array([0, 2]), np.array([5, 6]))], temperature=0.3)

    def cos(i, j):
        return z[i] @ z[j] / (np.linalg.norm(z[i]) * np.linalg.norm(z[j]))

    pos = sum(math.exp(cos(i, j) / 0.3) for i, js in ((0, (1, 2)), (1, (0, 2))) for j in js)
    neg = sum(math.exp(cos(i, j) / 0.3) for i in (0, 1) for j in (5, 6))
    assert contrastive_loss(pairs, z) == pytest.approx(-math.log(pos / neg), abs=1e-12)
    info = contrastive_loss(pairs, z, infonce=True)
    assert info == pytest.approx(-math.log(pos / (pos + neg)), abs=1e-12)


@pytest.mark.parametrize("infonce", [False, True])
@pytest.mark.parametrize("seed", range(5))
def test_gradient_finite_differences(seed, infonce):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(8, 5))
    assignment = np.array([0, 0, 0, 1, 1, 1, 2, 2])
    p = partition_from_assignment(z, assignment)
    pairs = select_pairs(np.arange(8), p, num_s=2, temperature=0.2)
    _, g = contrastive_loss_and_grad(pairs, z, infonce)
    (num,) = central_diff(lambda: contrastive_loss(pairs, z, infonce), [z])
    assert rel_err(g, num) < 1e-4


def test_direction_of_perturbation():
    rng = np.random.default_rng(7)
    z = rng.normal(size=(3, 4))
    pairs = _pairs_one([1], [2], t=0.5)
    base = contrastive_loss(pairs, z)
    closer_pos = z.copy()
    closer_pos[1] = 0.5 * z[1] + 0.5 * z[0]  # raises cos(z0, z1)
    assert contrastive_loss(pairs, closer_pos) < base
    closer_neg = z.copy()
    closer_neg[2] = 0.5 * z[2] + 0.5 * z[0]
    assert contrastive_loss(pairs, closer_neg) > base


def test_empty_pairs_contribute_zero():
    loss, g = contrastive_loss_and_grad(PairSet(), np.ones((3, 2)))
    assert loss == 0.0 and not g.any()
    with pytest.raises(ConfigurationError):
        contrastive_loss(_pairs_one([1], [2], t=0.0), np.eye(3))


def test_simclr_pairs():
    pairs = simclr_pairs(5)
    assert len(pairs) == 5
    for a in pairs.anchors:
        assert a.positives.tolist() == [5 + a.index]
        assert len(a.negatives) == 4 and a.index not in a.negatives
    x = np.random.default_rng(0).uniform(size=(5, 2, 3))
    z = np.concatenate([x, jitter(x, 0.0, np.random.default_rng(1))]).reshape(10, -1)
    assert all(abs(z[a.index] @ z[a.positives[0]] / (z[a.index] @ z[a.index]) - 1) < 1e-12 for a in pairs.anchors)


def test_simclr_treats_overlapping_windows_as_negatives():
    # windows 0 and 1 overlap heavily in time, yet 1 is one of 0's negatives
    pairs = simclr_pairs(3)
    assert 1 in pairs.anchors[0].negatives
