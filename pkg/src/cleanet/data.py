"""Series ingestion, min-max scaling, sliding windows and the train/validation split.

Internally every series is stored metrics-by-time (``d x T``) and window start
indices are 0-based.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, IngestionError


@dataclass
class SeriesMatrix:
    values: np.ndarray  # (d, T)
    metric_names: list[str] = field(default_factory=list)
    entity_id: str = "entity"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ConfigurationError(f"series must be a d x T matrix with d >= 1, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise IngestionError("series contains non-finite values")
        if not self.metric_names:
            self.metric_names = [f"m{i}" for i in range(self.values.shape[0])]
        if len(self.metric_names) != self.values.shape[0]:
            raise ConfigurationError("metric_names length must equal d")

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]


@dataclass
class NormStats:
    minimum: np.ndarray
    maximum: np.ndarray

    def to_dict(self) -> dict:
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "NormStats":
        return cls(np.asarray(obj["min"], dtype=np.float64), np.asarray(obj["max"], dtype=np.float64))


@dataclass
class WindowBatch:
    windows: np.ndarray  # (n, d, w)
    start_indices: np.ndarray
    stride: int

    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def d(self) -> int:
        return self.windows.shape[1]

    @property
    def w(self) -> int:
        return self.windows.shape[2]


def load_csv(
    path,
    label_col: str | None = "label",
    metric_cols: Sequence[str] | None = None,
    ignore_cols: Sequence[str] = (),
    entity_id: str | None = None,
) -> tuple[SeriesMatrix, np.ndarray | None]:
    """Read a header-first CSV into a series plus an optional 0/1 label vector.

    Every column other than ``label_col`` and ``ignore_cols`` is treated as a
    metric unless ``metric_cols`` narrows the selection. Row numbers in error
    messages are file line numbers (the header is line 1).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file", row=1) from None
        has_label = label_col is not None and label_col in header
        if metric_cols is None:
            metric_cols = [h for h in header if h != label_col and h not in ignore_cols]
        missing = [c for c in metric_cols if c not in header]
        if missing:
            raise IngestionError(f"{path}: missing columns {missing}", row=1)
        if not metric_cols:
            raise IngestionError(f"{path}: no metric columns", row=1)
        col_idx = [header.index(c) for c in metric_cols]
        label_idx = header.index(label_col) if has_label else None

        rows: list[list[float]] = []
        labels: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}", row=lineno
                )
            vals = []
            for name, j in zip(metric_cols, col_idx):
                try:
                    v = float(row[j])
                except ValueError:
                    raise IngestionError(
                        f"{path}: line {lineno}, column {name!r}: cannot parse {row[j]!r}", row=lineno, column=name
                    ) from None
                if not math.isfinite(v):
                    raise IngestionError(
                        f"{path}: line {lineno}, column {name!r}: non-finite value {row[j]!r}", row=lineno, column=name
                    )
                vals.append(v)
            rows.append(vals)
            if label_idx is not None:
                raw = row[label_idx].strip()
                try:
                    lab = int(float(raw))
                except ValueError:
                    lab = -1
                if lab not in (0, 1):
                    raise IngestionError(
                        f"{path}: line {lineno}, column {label_col!r}: label must be 0 or 1, got {raw!r}",
                        row=lineno,
                        column=label_col,
                    )
                labels.append(lab)

    if not rows:
        raise IngestionError(f"{path}: no data rows", row=2)
    series = SeriesMatrix(np.array(rows, dtype=np.float64).T, list(metric_cols), entity_id or path.stem)
    return series, (np.array(labels, dtype=np.int64) if has_label else None)


def write_csv(path, series: SeriesMatrix, labels: np.ndarray | None = None, label_col: str = "label") -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(series.metric_names + ([label_col] if labels is not None else []))
        for t in range(series.T):
            row = [repr(float(v)) for v in series.values[:, t]]
            if labels is not None:
                row.append(str(int(labels[t])))
            writer.writerow(row)
    tmp.replace(path)


def write_json(path, obj) -> None:
    """Pretty, key-sorted JSON written via a ``.tmp`` sibling and an atomic rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def fit_minmax(s: SeriesMatrix) -> NormStats:
    return NormStats(s.values.min(axis=1), s.values.max(axis=1))


def minmax_normalize(s: SeriesMatrix, stats: NormStats | None = None) -> tuple[SeriesMatrix, NormStats]:
    """Scale each metric to [0, 1]; constant metrics map to 0 and reused stats clip."""
    fitted = stats is None
    if fitted:
        stats = fit_minmax(s)
    if len(stats.minimum) != s.d:
        raise ConfigurationError(f"normalization stats cover {len(stats.minimum)} metrics, series has {s.d}")
    span = stats.maximum - stats.minimum
    safe = np.where(span > 0, span, 1.0)
    out = (s.values - stats.minimum[:, None]) / safe[:, None]
    out[span <= 0, :] = 0.0
    # fitted data is already in range; clipping only matters for reused stats
    out = np.clip(out, 0.0, 1.0)
    return SeriesMatrix(out, list(s.metric_names), s.entity_id), stats


def window_count(T: int, w: int, stride: int) -> int:
    return (T - w) // stride + 1


def make_windows(s: SeriesMatrix | np.ndarray, w: int, stride: int | None = None, cover_tail: bool = False) -> WindowBatch:
    """Cut ``s`` into length-``w`` windows every ``stride`` steps (default ``stride = w``).

    With ``cover_tail`` an extra window ending at the last timestamp is appended
    when the regular grid leaves a tail uncovered; detection uses this so every
    timestamp receives a score.
    """
    values = s.values if isinstance(s, SeriesMatrix) else np.asarray(s, dtype=np.float64)
    stride = w if stride is None else stride
    T = values.shape[1]
    if w < 1 or stride < 1:
        raise ConfigurationError(f"window and stride must be positive (w={w}, stride={stride})")
    if w > T:
        raise ConfigurationError(f"window length {w} exceeds series length {T}")
    starts = list(range(0, T - w + 1, stride))
    if cover_tail and starts[-1] + w < T:
        starts.append(T - w)
    starts_arr = np.array(starts, dtype=np.int64)
    idx = starts_arr[:, None] + np.arange(w)[None, :]
    windows = np.ascontiguousarray(values[:, idx].transpose(1, 0, 2))
    return WindowBatch(windows, starts_arr, stride)


def split_train_val(b: WindowBatch, ratio: float = 0.8) -> tuple[WindowBatch, WindowBatch]:
    """Chronological split: the first ``ratio`` of windows train, the rest validate."""
    if not 0.0 < ratio < 1.0:
        raise ConfigurationError(f"ratio must lie in (0, 1), got {ratio}")
    n = len(b)
    if n < 2:
        raise ConfigurationError(f"need at least 2 windows to split, got {n}")
    n_train = min(max(int(round(n * ratio)), 1), n - 1)
    return (
        WindowBatch(b.windows[:n_train], b.start_indices[:n_train], b.stride),
        WindowBatch(b.windows[n_train:], b.start_indices[n_train:], b.stride),
    )


def stitch_windows(b: WindowBatch, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Average overlapping windows back onto the time axis; returns (values, covered mask)."""
    d, w = b.d, b.w
    acc = np.zeros((d, T))
    cnt = np.zeros(T)
    for win, start in zip(b.windows, b.start_indices):
        acc[:, start:start + w] += win
        cnt[start:start + w] += 1
    covered = cnt > 0
    acc[:, covered] /= cnt[covered]
    return acc, covered
