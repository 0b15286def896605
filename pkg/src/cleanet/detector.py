"""Per-timestamp anomaly scores, thresholding and point-wise P/R/F1.

Evaluation is strictly point-wise: a detected point inside an anomaly segment
counts once, and nothing is ever propagated across a segment.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import WindowBatch, write_json
from .errors import ConfigurationError, ConsistencyError, DimensionError


@dataclass
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "tp": self.tp, "fp": self.fp, "fn": self.fn}


@dataclass
class AnomalyReport:
    scores: np.ndarray
    threshold: float
    predictions: np.ndarray
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    tp: int | None = None
    fp: int | None = None
    fn: int | None = None
    entity_id: str = "entity"
    threshold_mode: str = "auto"
    entities: list[dict] = field(default_factory=list)

    def to_dict(self, include_scores: bool = False) -> dict:
        out = {
            "entity_id": self.entity_id,
            "threshold_mode": self.threshold_mode,
            "threshold": _json_float(self.threshold),
            "n_timestamps": int(len(self.scores)),
            "n_predicted": int(self.predictions.sum()),
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }
        if self.entities:
            out["entities"] = self.entities
        if include_scores:
            out["scores"] = self.scores.tolist()
        return out

    def dump_scores(self, path, labels: np.ndarray | None = None) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with tmp.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "score", "prediction"] + (["label"] if labels is not None else []))
            for t, (s, p) in enumerate(zip(self.scores, self.predictions)):
                writer.writerow([t, repr(float(s)), int(p)] + ([int(labels[t])] if labels is not None else []))
        tmp.replace(path)


def _json_float(x: float):
    if np.isposinf(x):
        return "inf"
    if np.isneginf(x):
        return "-inf"
    return float(x)


def window_scores(model, windows: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Squared residual summed over metrics: one value per (window, timestep)."""
    c = model.config
    if windows.ndim != 3 or windows.shape[1:] != (c.d, c.w):
        raise DimensionError(f"windows of shape {windows.shape[1:]} do not fit model ({c.d}, {c.w})")
    out = []
    for i in range(0, len(windows), chunk):
        x = windows[i:i + chunk]
        r = model.reconstruct(x)
        out.append(np.sum((x - r) ** 2, axis=1))
    return np.concatenate(out) if out else np.zeros((0, c.w))


def score(model, test: WindowBatch, T: int | None = None) -> np.ndarray:
    """Per-timestamp scores; a timestamp covered by several windows gets their mean."""
    per_window = window_scores(model, test.windows)
    w = test.w
    T = int(test.start_indices[-1]) + w if T is None else T
    acc = np.zeros(T)
    cnt = np.zeros(T)
    for s, start in zip(per_window, test.start_indices):
        acc[start:start + w] += s
        cnt[start:start + w] += 1
    if np.any(cnt == 0):
        raise ConfigurationError("test windows do not cover every timestamp; use make_windows(cover_tail=True)")
    return acc / cnt


def threshold_labels(scores, threshold: float) -> np.ndarray:
    if np.isnan(threshold):
        raise ConfigurationError("threshold must not be NaN")
    return (np.asarray(scores) > threshold).astype(np.int64)


def _prf(tp: int, fp: int, fn: int) -> Metrics:
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return Metrics(p, r, f1, int(tp), int(fp), int(fn))


def confusion(predictions, labels) -> tuple[int, int, int, int]:
    pred = np.asarray(predictions).astype(bool)
    lab = np.asarray(labels).astype(bool)
    if pred.shape != lab.shape:
        raise ConsistencyError(f"predictions ({pred.shape}) and labels ({lab.shape}) differ in length")
    tp = int(np.sum(pred & lab))
    fp = int(np.sum(pred & ~lab))
    fn = int(np.sum(~pred & lab))
    tn = int(np.sum(~pred & ~lab))
    return tp, fp, fn, tn


def evaluate(predictions, labels) -> Metrics:
    tp, fp, fn, _ = confusion(predictions, labels)
    return _prf(tp, fp, fn)


def best_f1_threshold(scores, labels) -> tuple[float, Metrics]:
    """Threshold maximising F1 over every distinct score value plus the two infinities.

    Ties prefer higher precision, then the lower threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ConsistencyError("scores and labels differ in length")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ConfigurationError("labels contain no anomalies; recall is undefined")
    uniq, inv = np.unique(scores, return_inverse=True)
    # count of points with score > uniq[k] = points whose rank index exceeds k
    pos_per = np.bincount(inv, weights=labels, minlength=len(uniq))
    all_per = np.bincount(inv, minlength=len(uniq)).astype(np.float64)
    tp_above = np.concatenate([np.cumsum(pos_per[::-1])[::-1][1:], [0.0]])
    pred_above = np.concatenate([np.cumsum(all_per[::-1])[::-1][1:], [0.0]])
    thresholds = np.concatenate([[-np.inf], uniq, [np.inf]])
    tp = np.concatenate([[n_pos], tp_above, [0.0]])
    pred = np.concatenate([[len(scores)], pred_above, [0.0]])

    best_k = 0
    best = None
    for k in range(len(thresholds)):
        m = _prf(int(tp[k]), int(pred[k] - tp[k]), int(n_pos - tp[k]))
        if best is None or (m.f1, m.precision) > (best.f1, best.precision):
            best, best_k = m, k
    return float(thresholds[best_k]), best


def detect(model, test: WindowBatch, T: int, labels: np.ndarray | None = None,
           threshold: float | str = "auto", entity_id: str = "entity") -> AnomalyReport:
    s = score(model, test, T)
    if threshold == "auto":
        if labels is None:
            raise ConfigurationError("threshold 'auto' selects the best-F1 cutoff and needs labels")
        thr, m = best_f1_threshold(s, labels)
        preds = threshold_labels(s, thr)
        mode = "auto"
    else:
        thr = float(threshold)
        preds = threshold_labels(s, thr)
        m = evaluate(preds, labels) if labels is not None else None
        mode = "fixed"
    rep = AnomalyReport(s, thr, preds, entity_id=entity_id, threshold_mode=mode)
    if m is not None:
        rep.precision, rep.recall, rep.f1 = m.precision, m.recall, m.f1
        rep.tp, rep.fp, rep.fn = m.tp, m.fp, m.fn
    return rep


def multi_entity_average(reports: Sequence) -> Metrics:
    """Unweighted mean of per-entity precision, recall and F1."""
    if not reports:
        raise ConfigurationError("need at least one entity report")
    get = (lambda r, k: r[k]) if isinstance(reports[0], dict) else getattr
    p = float(np.mean([get(r, "precision") for r in reports]))
    r_ = float(np.mean([get(r, "recall") for r in reports]))
    f = float(np.mean([get(r, "f1") for r in reports]))
    return Metrics(p, r_, f)


def write_report(path, obj: dict) -> None:
    write_json(path, obj)
