import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cleanet.data import SeriesMatrix, make_windows
from cleanet.detector import (
    best_f1_threshold, confusion, detect, evaluate, multi_entity_average, score, threshold_labels, window_scores,
    write_report,
)
from cleanet.errors import ConfigurationError, ConsistencyError, DimensionError
from cleanet.model import ModelConfig, make_variant
from cleanet.pipeline import prepare
from cleanet.synth import SynthConfig, generate
from cleanet.trainer import TrainConfig, train
from oracles import exhaustive_best_threshold, prf_counts


class _ZeroModel:
    """Reconstructs everything as zero, so a window's score is its squared value."""

    def __init__(self, d, w):
        self.config = ModelConfig(d, w)

    def reconstruct(self, x):
        return np.zeros_like(x)


def test_one_hit_inside_segment_is_not_adjusted():
    labels = np.zeros(200, dtype=int)
    labels[50:100] = 1
    pred = np.zeros(200, dtype=int)
    pred[70] = 1
    m = evaluate(pred, labels)
    assert (m.tp, m.fp, m.fn) == (1, 0, 49)
    assert m.recall == pytest.approx(0.02)
    assert m.precision == 1.0


def test_strict_threshold():
    assert threshold_labels([0.1, 0.5, 0.9], 0.5).tolist() == [0, 0, 1]
    with pytest.raises(ConfigurationError):
        threshold_labels([0.1], float("nan"))


def test_confusion_and_length_check():
    assert confusion([1, 0, 1, 0], [1, 1, 0, 0]) == (1, 1, 1, 1)
    with pytest.raises(ConsistencyError):
        evaluate([1, 0], [1, 0, 0])


def test_best_threshold_examples():
    thr, m = best_f1_threshold([0.1, 0.2, 0.9, 0.8], [0, 0, 1, 1])
    assert thr == 0.2 and m.f1 == 1.0
    thr, m = best_f1_threshold([0.5, 0.5, 0.5], [1, 0, 1])
    assert thr == -np.inf and m.recall == 1.0
    with pytest.raises(ConfigurationError):
        best_f1_threshold([0.1, 0.2], [0, 0])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 300), st.integers(0, 10**6), st.booleans())
def test_sweep_matches_exhaustive_oracle(n, seed, coarse):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 6, size=n).astype(float) if coarse else rng.normal(size=n)
    labels = (rng.random(n) < 0.3).astype(int)
    labels[rng.integers(n)] = 1
    thr, m = best_f1_threshold(scores, labels)
    o_thr, o_p, o_r, o_f = exhaustive_best_threshold(scores.tolist(), labels.tolist())
    assert thr == o_thr
    assert (m.precision, m.recall, m.f1) == pytest.approx((o_p, o_r, o_f), abs=1e-12)
    assert prf_counts(threshold_labels(scores, thr), labels)[2] == pytest.approx(m.f1, abs=1e-12)


def test_window_scores_sum_over_metrics():
    x = np.arange(12, dtype=float).reshape(1, 2, 6) / 12
    s = window_scores(_ZeroModel(2, 6), x)
    assert np.allclose(s, (x ** 2).sum(axis=1))
    with pytest.raises(DimensionError):
        window_scores(_ZeroModel(3, 6), x)


def test_overlapping_windows_are_averaged():
    series = np.tile(np.arange(10, dtype=float) / 10, (2, 1))
    b = make_windows(series, 4, 2, cover_tail=True)
    s = score(_ZeroModel(2, 4), b, 10)
    assert np.allclose(s, 2 * series[0] ** 2)
    with pytest.raises(ConfigurationError):
        score(_ZeroModel(2, 4), make_windows(series, 4, 4), 10)


def test_detect_auto_and_fixed(tmp_path):
    rng = np.random.default_rng(0)
    model = make_variant(ModelConfig(2, 5, 3, 2), 0)
    series = rng.uniform(size=(2, 23))
    labels = np.zeros(23, dtype=int)
    labels[10:13] = 1
    series[:, 10:13] = 1.0
    b = make_windows(series, 5, 5, cover_tail=True)
    auto = detect(model, b, 23, labels)
    assert auto.threshold_mode == "auto" and auto.f1 > 0
    fixed = detect(model, b, 23, labels, threshold=auto.threshold)
    assert fixed.f1 == auto.f1 and np.array_equal(fixed.predictions, auto.predictions)
    unlabeled = detect(model, b, 23, None, threshold=0.5)
    assert unlabeled.f1 is None
    with pytest.raises(ConfigurationError):
        detect(model, b, 23, None)
    out = tmp_path / "r.json"
    write_report(out, auto.to_dict())
    assert json.loads(out.read_text())["f1"] == auto.f1
    auto.dump_scores(tmp_path / "s.csv", labels)
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "t,score,prediction,label" and len(rows) == 24


def test_multi_entity_average_is_unweighted():
    m = multi_entity_average([{"precision": 1.0, "recall": 0.5, "f1": 0.6},
                              {"precision": 0.0, "recall": 0.5, "f1": 0.2}])
    assert (m.precision, m.recall, m.f1) == pytest.approx((0.5, 0.5, 0.4))
    with pytest.raises(ConfigurationError):
        multi_entity_average([])


def test_single_residual_arithmetic():
    x = np.zeros((1, 2, 4))
    x[0, 1, 2] = 0.5
    s = window_scores(_ZeroModel(2, 4), x)[0]
    assert s.tolist() == [0.0, 0.0, 0.25, 0.0]


def test_entity_mean_example():
    m = multi_entity_average([{"precision": 1, "recall": 1, "f1": 0.9083}, {"precision": 1, "recall": 1, "f1": 0.3228}])
    assert m.f1 == pytest.approx(0.61555, abs=1e-12)


def test_spike_scores_above_clean_percentile():
    data = generate(SynthConfig(d=4, T=6000, rho=0.0, anomaly_rate=0.0, seed=3))
    test = data.test.values.copy()
    spikes = [1000, 2500, 4200]
    for t in spikes:
        test[1, t] += 3.0 * data.sd[1]
    prep = prepare(data.train, SeriesMatrix(test, data.test.metric_names), w=50)
    model, _ = train(prep.train, prep.val, TrainConfig(epochs=30, seed=0))
    s = score(model, prep.test, prep.test_T)
    clean = np.delete(s, spikes)
    assert np.all(s[spikes] > np.percentile(clean, 99))
