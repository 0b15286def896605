"""End-to-end helpers: prepare windows, train one configuration, score it.

``ARMS`` names the ablation configurations used by the desk-scale robustness
benchmark; each maps to ``TrainConfig`` overrides.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import NormStats, SeriesMatrix, WindowBatch, make_windows, minmax_normalize, split_train_val
from .detector import AnomalyReport, detect
from .model import ConjugateModel
from .synth import SynthConfig, SynthData, generate
from .trainer import TrainConfig, TrainReport, train

ARMS: dict[str, dict] = {
    "crtf": {},
    "baseline": {"awrl": False, "contrastive": "off", "lam": 0.0},
    "awrl_only": {"contrastive": "off"},
    "cl_only": {"awrl": False},
    "flattened": {"variant": "flattened"},
    "time_only": {"variant": "time_only", "awrl": False, "contrastive": "off", "lam": 0.0},
    "feature_only": {"variant": "feature_only", "awrl": False, "contrastive": "off", "lam": 0.0},
    "simclr": {"contrastive": "simclr"},
}


@dataclass
class Prepared:
    train: WindowBatch
    val: WindowBatch
    test: WindowBatch
    test_T: int
    stats: NormStats


def prepare(train_series: SeriesMatrix, test_series: SeriesMatrix, w: int = 100, stride: int | None = None,
            val_ratio: float = 0.8) -> Prepared:
    """Normalize with training stats, window both series and split train/validation.

    ``val_ratio`` is the training share of the split (0.8 gives 4:1).
    """
    train_n, stats = minmax_normalize(train_series)
    test_n, _ = minmax_normalize(test_series, stats)
    tr, va = split_train_val(make_windows(train_n, w, stride), val_ratio)
    te = make_windows(test_n, w, w, cover_tail=True)
    return Prepared(tr, va, te, test_series.T, stats)


def fit_and_detect(prep: Prepared, config: TrainConfig, labels: np.ndarray,
                   threshold: float | str = "auto") -> tuple[ConjugateModel, TrainReport, AnomalyReport]:
    model, report = train(prep.train, prep.val, config)
    model.norm_stats = prep.stats
    return model, report, detect(model, prep.test, prep.test_T, labels, threshold)


def arm_config(arm: str, seed: int, **base) -> TrainConfig:
    if arm not in ARMS:
        raise KeyError(f"unknown arm {arm!r}; choose from {sorted(ARMS)}")
    return TrainConfig(**{**base, **ARMS[arm], "seed": seed})


def run_benchmark(arms, seeds, synth: SynthConfig | None = None, w: int = 100, stride: int | None = None,
                  **train_overrides) -> dict[str, list[float]]:
    """Best-F1 per (arm, seed) on freshly generated synthetic data; data seed == train seed."""
    synth = synth or SynthConfig()
    out: dict[str, list[float]] = {a: [] for a in arms}
    for seed in seeds:
        data: SynthData = generate(SynthConfig(**{**synth.to_dict(), "seed": seed}))
        prep = prepare(data.train, data.test, w, stride)
        for arm in arms:
            _, _, rep = fit_and_detect(prep, arm_config(arm, seed, **train_overrides), data.test_labels)
            out[arm].append(rep.f1)
    return out
