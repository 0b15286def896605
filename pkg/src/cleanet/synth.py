"""Synthetic multivariate series with labelled contamination.

The clean base mixes a few shared periodic sources across metrics (so metrics
are correlated), adds a per-metric oscillation, a weak trend and AR(1) noise.
Contamination segments come in two families, measured in units of the clean
training standard deviation of each affected metric:

salient  ``spike`` (1-5 points) and ``level_shift``, every point >= 3.5 sd away
latent   ``drift`` (linear ramp) and ``correlated`` (smooth shared perturbation),
         never more than 1.5 sd away

The training series is contaminated at rate ``rho`` (fraction of timestamps),
the test series at ``anomaly_rate``; both masks are exact by construction.
Segments are drawn from a small per-dataset library of recurring fault
signatures (``n_motifs``), shared by the training contamination and the test
anomalies, with ``motif_jitter`` relative variation in magnitude. With
``n_motifs = 0`` every segment gets a fresh random signature.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data import SeriesMatrix
from .errors import ConfigurationError

SALIENT = ("spike", "level_shift")
LATENT = ("drift", "correlated")
SALIENT_MIN_SD = 3.5
SALIENT_MAX_SD = 6.0
LATENT_MAX_SD = 1.5


@dataclass
class SynthConfig:
    d: int = 8
    T: int = 20000
    test_T: int | None = None
    rho: float = 0.1
    anomaly_rate: float = 0.1
    n_sources: int = 3
    period_range: tuple[int, int] = (40, 400)
    noise_scale: float = 0.2
    ar_coef: float = 0.7
    trend_scale: float = 0.2
    salient_fraction: float = 0.5
    spike_len: tuple[int, int] = (1, 5)
    shift_len: tuple[int, int] = (30, 120)
    shift_sd: tuple[float, float] = (SALIENT_MIN_SD, 5.0)
    spike_sd: tuple[float, float] = (SALIENT_MIN_SD, SALIENT_MAX_SD)
    drift_len: tuple[int, int] = (50, 200)
    correlated_len: tuple[int, int] = (30, 120)
    latent_sd: tuple[float, float] = (0.8, LATENT_MAX_SD)
    max_metrics_frac: float = 0.4
    n_motifs: int = 4
    motif_jitter: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.rho < 0.5 or not 0.0 <= self.anomaly_rate < 0.5:
            raise ConfigurationError("rho and anomaly_rate must lie in [0, 0.5)")
        if self.d < 1 or self.T < 1:
            raise ConfigurationError("d and T must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Motif:
    """A recurring fault signature: which metrics move, in which direction, how far."""

    kind: str
    metrics: list[int]
    signs: np.ndarray
    magnitude: np.ndarray  # sd units per metric


@dataclass
class Injection:
    kind: str
    start: int
    length: int
    metrics: list[int]


@dataclass
class SynthData:
    train: SeriesMatrix
    test: SeriesMatrix
    test_labels: np.ndarray
    train_mask: np.ndarray
    train_clean: np.ndarray
    test_clean: np.ndarray
    sd: np.ndarray  # clean training standard deviation per metric
    train_injections: list[Injection] = field(default_factory=list)
    test_injections: list[Injection] = field(default_factory=list)


def _base(cfg: SynthConfig, T_total: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(T_total, dtype=np.float64)
    lo, hi = cfg.period_range
    periods = rng.uniform(lo, hi, size=cfg.n_sources)
    phases = rng.uniform(0, 2 * np.pi, size=cfg.n_sources)
    sources = np.sin(2 * np.pi * t[None, :] / periods[:, None] + phases[:, None])
    mix = rng.normal(0.0, 1.0, size=(cfg.d, cfg.n_sources))
    x = mix @ sources
    own_p = rng.uniform(lo, hi, size=cfg.d)
    own_ph = rng.uniform(0, 2 * np.pi, size=cfg.d)
    x += 0.5 * np.sin(2 * np.pi * t[None, :] / own_p[:, None] + own_ph[:, None])
    x += cfg.trend_scale * rng.normal(size=(cfg.d, 1)) * (t[None, :] / T_total)
    eps = rng.normal(0.0, cfg.noise_scale, size=(cfg.d, T_total))
    noise = np.empty_like(eps)
    noise[:, 0] = eps[:, 0]
    for i in range(1, T_total):
        noise[:, i] = cfg.ar_coef * noise[:, i - 1] + eps[:, i]
    x += noise
    x += rng.uniform(-2, 2, size=(cfg.d, 1))
    return x


def _draw_motif(kind: str, d: int, cfg: SynthConfig, rng: np.random.Generator) -> Motif:
    max_m = max(1, int(round(cfg.max_metrics_frac * d)))
    metrics = sorted(rng.choice(d, size=int(rng.integers(1, max_m + 1)), replace=False).tolist())
    lo, hi = {"spike": cfg.spike_sd, "level_shift": cfg.shift_sd}.get(kind, cfg.latent_sd)
    return Motif(kind, metrics, rng.choice([-1.0, 1.0], size=len(metrics)),
                 rng.uniform(lo, hi, size=len(metrics)))


def motif_library(d: int, cfg: SynthConfig, rng: np.random.Generator) -> list[Motif]:
    """Kinds cycle spike, level_shift, drift, correlated so both families are present."""
    kinds = ("spike", "level_shift", "drift", "correlated")
    return [_draw_motif(kinds[i % len(kinds)], d, cfg, rng) for i in range(cfg.n_motifs)]


def _delta(m: Motif, length: int, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Offsets in sd units, shape (len(m.metrics), length)."""
    if m.kind in SALIENT:
        lo, hi = cfg.spike_sd if m.kind == "spike" else cfg.shift_sd
    else:
        lo, hi = cfg.latent_sd
    jit = 1.0 + cfg.motif_jitter * rng.uniform(-1.0, 1.0, size=len(m.metrics))
    mag = np.clip(m.magnitude * jit, lo, hi)[:, None]
    signs = m.signs[:, None]
    if m.kind == "spike":
        return signs * np.clip(mag * (1.0 + cfg.motif_jitter * rng.uniform(-1, 1, size=(1, length))), lo, hi)
    if m.kind == "level_shift":
        return signs * mag * np.ones((1, length))
    if m.kind == "drift":
        ramp = np.arange(1, length + 1) / length
        return signs * mag * ramp[None, :]
    # correlated: one smooth random path shared by the chosen metrics
    path = np.cumsum(rng.normal(size=length))
    path -= np.linspace(path[0], path[-1], length)
    path = path - path.mean()
    peak = np.abs(path).max()
    path = path / peak if peak > 0 else np.ones(length)
    return signs * mag * path[None, :]


def _inject(x: np.ndarray, sd: np.ndarray, rate: float, cfg: SynthConfig, rng: np.random.Generator,
            motifs: list[Motif]):
    d, T = x.shape
    mask = np.zeros(T, dtype=np.int64)
    injections: list[Injection] = []
    target = int(round(rate * T))
    if target == 0:
        return x, mask, injections
    lens = {"spike": cfg.spike_len, "level_shift": cfg.shift_len, "drift": cfg.drift_len,
            "correlated": cfg.correlated_len}
    attempts = 0
    while mask.sum() < target and attempts < 100 * T:
        attempts += 1
        family = SALIENT if rng.random() < cfg.salient_fraction else LATENT
        pool = [m for m in motifs if m.kind in family]
        if pool:
            motif = pool[int(rng.integers(len(pool)))]
        else:
            motif = _draw_motif(family[int(rng.integers(len(family)))], d, cfg, rng)
        lo, hi = lens[motif.kind]
        length = min(int(rng.integers(lo, hi + 1)), T - 2)
        start = int(rng.integers(1, T - length))
        # keep one clean step on each side so segments never touch
        if mask[start - 1:start + length + 1].any():
            continue
        delta = _delta(motif, length, cfg, rng)
        x[motif.metrics, start:start + length] += delta * sd[motif.metrics, None]
        mask[start:start + length] = 1
        injections.append(Injection(motif.kind, start, length, list(motif.metrics)))
    return x, mask, injections


def generate(config: SynthConfig | None = None) -> SynthData:
    cfg = config or SynthConfig()
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    test_T = cfg.test_T or cfg.T
    base = _base(cfg, cfg.T + test_T, rng)
    train_clean = base[:, :cfg.T].copy()
    test_clean = base[:, cfg.T:].copy()
    sd = train_clean.std(axis=1)
    sd = np.where(sd > 0, sd, 1.0)
    motifs = motif_library(cfg.d, cfg, rng)
    train, train_mask, tr_inj = _inject(train_clean.copy(), sd, cfg.rho, cfg, rng, motifs)
    test, test_labels, te_inj = _inject(test_clean.copy(), sd, cfg.anomaly_rate, cfg, rng, motifs)
    names = [f"m{i}" for i in range(cfg.d)]
    return SynthData(
        SeriesMatrix(train, names, f"synth-{cfg.seed}-train"),
        SeriesMatrix(test, list(names), f"synth-{cfg.seed}-test"),
        test_labels, train_mask, train_clean, test_clean, sd, tr_inj, te_inj,
    )
