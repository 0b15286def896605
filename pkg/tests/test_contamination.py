import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cleanet.contamination import (
    adaptive_weight, auto_tau, awrl_loss, awrl_loss_and_grad, build_profile, contamination_score, knn_consistency,
)
from cleanet.errors import ConfigurationError, DimensionError


def test_identical_latents_are_fully_consistent():
    z = np.tile([1.0, 2.0, 3.0], (6, 1))
    assert np.allclose(knn_consistency(z, 3), 1.0)


def test_orthogonal_outlier():
    rng = np.random.default_rng(0)
    cluster = np.array([1.0, 0.0, 0.0]) + rng.normal(0, 1e-3, size=(8, 3)) * [0, 1, 1]
    outlier = np.array([[0.0, 0.0, 1.0]])
    z = np.vstack([cluster, outlier])
    cons = knn_consistency(z, 3)
    # exact cosine of the outlier with its 3 nearest cluster members
    d = np.linalg.norm(cluster - outlier, axis=1)
    nn = cluster[np.argsort(d, kind="stable")[:3]]
    expected = np.mean(nn @ outlier[0] / np.linalg.norm(nn, axis=1))
    assert cons[-1] == pytest.approx(expected, abs=1e-12)
    assert abs(cons[-1]) < 1e-2
    assert np.all(cons[:-1] > 0.99)


def test_two_windows_k1():
    z = np.array([[1.0, 0.0], [1.0, 1.0]])
    cos = 1 / math.sqrt(2)
    assert np.allclose(knn_consistency(z, 1), [cos, cos])


def test_zero_norm_similarity_is_zero():
    z = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    cons = knn_consistency(z, 1)
    assert cons[0] == 0.0 and cons[2] == 1.0


def test_knn_needs_enough_windows():
    with pytest.raises(ConfigurationError):
        knn_consistency(np.zeros((3, 2)), 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 50), st.integers(1, 6), st.integers(0, 10_000))
def test_knn_matches_brute_force_sort(n, dim, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n, dim))
    k = int(rng.integers(1, n))
    cons = knn_consistency(z, k)
    for i in range(n):
        order = sorted((j for j in range(n) if j != i), key=lambda j: (float(np.sum((z[i] - z[j]) ** 2)), j))[:k]
        sims = [float(z[i] @ z[j] / (np.linalg.norm(z[i]) * np.linalg.norm(z[j]))) for j in order]
        assert cons[i] == pytest.approx(np.mean(sims), abs=1e-12)


def test_score_affine_map():
    assert contamination_score(np.array([1.0, 0.0, -1.0])).tolist() == [0.0, 1.0, 2.0]


def test_weight_examples():
    assert adaptive_weight(0.3, 10.0, 0.3) == 0.5
    assert adaptive_weight(1e6, 10.0, 0.3) == 0.0
    assert adaptive_weight(-1e6, 10.0, 0.3) == 1.0
    assert adaptive_weight(0.6, 10.0, 0.5) == pytest.approx(1 / (1 + math.e), abs=1e-12)
    assert adaptive_weight(0.6, 10.0, 0.5) == pytest.approx(0.2689, abs=1e-4)
    with pytest.raises(ConfigurationError):
        adaptive_weight(0.1, 0.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 2), st.floats(0, 2), st.floats(0.1, 200), st.floats(0, 2))
def test_weight_monotone_and_bounded(a, b, alpha, tau):
    # scores live in [0, 2] (one minus a cosine); far from tau float64 rounds the sigmoid to exactly 1
    wa, wb = adaptive_weight(a, alpha, tau), adaptive_weight(b, alpha, tau)
    assert 0 < wa <= 1 and 0 < wb <= 1
    if a < b:
        assert wa >= wb
        if alpha * (b - a) > 1e-6 and wa < 1 - 1e-12:
            assert wa > wb


def test_awrl_examples():
    x = np.random.default_rng(0).uniform(size=(2, 3))
    assert awrl_loss(x, x, 0.9) == 0.0
    x_hat = x.copy()
    x_hat[0, 0] += 2.0  # squared norm 4
    assert awrl_loss(x, x_hat, 0.5) == pytest.approx(2.0)
    with pytest.raises(DimensionError):
        awrl_loss(x, x[:, :2], 0.5)


def test_small_weight_shrinks_gradient():
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(2, 3, 4))
    x_hat = rng.uniform(size=(2, 3, 4))
    _, g = awrl_loss_and_grad(x, x_hat, np.array([1.0, 1e-4]))
    assert np.linalg.norm(g[1]) < 1e-3 * np.linalg.norm(g[0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_scale_invariance(seed, c):
    z = np.random.default_rng(seed).normal(size=(20, 5))
    a = build_profile(z, k=4)
    b = build_profile(c * z, k=4)
    assert np.allclose(a.consistency, b.consistency, atol=1e-12)
    assert np.allclose(a.weight, b.weight, atol=1e-9)


def test_auto_tau_and_profile_csv(tmp_path):
    z = np.random.default_rng(2).normal(size=(15, 4))
    p = build_profile(z, k=3)
    assert p.tau == pytest.approx(np.median(p.score) + p.score.std())
    assert auto_tau(np.array([0.0, 0.0, 0.0])) == 0.0
    p.to_csv(tmp_path / "profile.csv")
    lines = (tmp_path / "profile.csv").read_text().splitlines()
    assert lines[0] == "window_index,consistency,score,weight"
    assert len(lines) == 16
