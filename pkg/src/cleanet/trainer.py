"""Joint training: weighted reconstruction plus lambda times the contrastive term.

Each epoch first encodes every training window, refreshes the contamination
profile and the first-neighbour partition from those codes, and then runs the
minibatch loop with both frozen. The first ``warmup_epochs`` epochs use uniform
weights and no contrastive term. Early stopping watches the unweighted
reconstruction error on the validation windows.

``train_plain_autoencoder`` is an intentionally separate, minimal trainer used as
the reference for the reduction identity (``lam = 0`` with uniform weights).
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from .clustering import ClusterPartition, annotate_contamination, finch_partition
from .contamination import ContaminationProfile, awrl_loss_and_grad, build_profile, uniform_profile
from .contrastive import PairSet, contrastive_loss_and_grad, jitter, select_pairs, simclr_pairs
from .data import WindowBatch
from .errors import ConfigurationError, InterfaceError, TrainingError
from .model import ConjugateModel, ModelConfig, make_variant
from .neighbors import pairwise_sq_dists
from .nn_core import GradientTape, Optimizer

log = logging.getLogger(__name__)

CONTRASTIVE_MODES = ("on", "off", "simclr")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lam: float = 0.1
    lr: float = 1e-2
    optimizer: str = "adam"
    awrl: bool = True
    contrastive: str = "on"
    cont_k: int = 10
    cont_alpha: float = 100.0
    cont_tau: float | str = "auto"
    temperature: float = 0.1
    num_s: int = 3
    infonce: bool = False
    simclr_sigma: float = 0.05
    warmup_epochs: int = 1
    patience: int = 5
    seed: int = 0
    variant: str = "conjugate"
    hidden_time: int = 16
    hidden_feature: int = 16
    n_layers: int = 1

    @classmethod
    def baseline(cls, **overrides) -> "TrainConfig":
        """Plain reconstruction training: uniform weights, no contrastive term."""
        overrides.setdefault("lam", 0.0)
        return cls(awrl=False, contrastive="off", **overrides)

    @property
    def is_baseline(self) -> bool:
        return not self.awrl and (self.contrastive == "off" or self.lam == 0)

    def validate(self) -> None:
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if self.contrastive not in CONTRASTIVE_MODES:
            raise ConfigurationError(f"contrastive must be one of {CONTRASTIVE_MODES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")
        if self.cont_k < 1 or not self.cont_alpha > 0 or not self.temperature > 0:
            raise ConfigurationError("cont_k, cont_alpha and temperature must be positive")
        if self.num_s < 2:
            raise ConfigurationError("num_s must be >= 2")
        if self.cont_tau != "auto":
            float(self.cont_tau)

    def model_config(self, d: int, w: int) -> ModelConfig:
        return ModelConfig(d, w, self.hidden_time, self.hidden_feature, self.n_layers, self.variant)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_error: float = float("inf")
    stopped_early: bool = False
    checkpoint_path: str | None = None
    profile: ContaminationProfile | None = None
    partition: ClusterPartition | None = None

    def to_dict(self, include_steps: bool = False) -> dict:
        out = {
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "best_val_error": self.best_val_error,
            "stopped_early": self.stopped_early,
            "checkpoint_path": self.checkpoint_path,
        }
        if include_steps:
            out["steps"] = self.steps
        return out


def _rngs(seed: int):
    return (np.random.default_rng([seed, 0]), np.random.default_rng([seed, 1]), np.random.default_rng([seed, 2]))


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def reconstruction_error(model, windows: np.ndarray, chunk: int = 512) -> float:
    """Mean over windows of the summed squared reconstruction error."""
    errs = []
    for i in range(0, len(windows), chunk):
        x = windows[i:i + chunk]
        r = model.reconstruct(x)
        errs.append(np.sum((x - r) ** 2, axis=(1, 2)))
    return float(np.mean(np.concatenate(errs)))


def _check_hooks(model, sample: np.ndarray) -> None:
    for name in ("encode", "reconstruct", "forward_train", "backward", "parameters", "grads"):
        if not callable(getattr(model, name, None)):
            raise InterfaceError(f"model is missing the {name}() hook")
    recon = np.asarray(model.reconstruct(sample))
    if recon.shape != sample.shape:
        raise InterfaceError(f"reconstruct() returned {recon.shape}, expected {sample.shape}")
    z = np.asarray(model.encode(sample))
    if z.ndim != 2 or z.shape[0] != sample.shape[0]:
        raise InterfaceError(f"encode() must return (batch, latent_dim), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InterfaceError("encode() returned non-finite values")


def _fit(model, train: WindowBatch, val: WindowBatch, config: TrainConfig, shuffle_rng, aug_rng,
         callback: Callable | None = None) -> tuple[object, TrainReport]:
    n = len(train)
    if n < config.batch_size and n < 2:
        raise ConfigurationError("need at least 2 training windows")
    opt = Optimizer(config.lr, config.optimizer)
    params = model.parameters()
    report = TrainReport()
    best = model.copy()
    bad_epochs = 0
    crtf_scoring = config.awrl or config.contrastive == "on"

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        warm = epoch <= config.warmup_epochs
        profile = uniform_profile(n)
        partition = None
        if crtf_scoring and not warm:
            latents = model.encode(train.windows)
            d2 = pairwise_sq_dists(latents)
            profile = build_profile(latents, config.cont_k, config.cont_alpha, config.cont_tau) if n > 1 else profile
            if config.contrastive == "on":
                partition = annotate_contamination(finch_partition(latents, d2), profile.score, profile.tau)
            report.profile, report.partition = profile, partition
        weights = profile.weight if (config.awrl and not warm) else np.ones(n)
        use_contra = config.contrastive != "off" and not warm

        sums = {"awrl": 0.0, "contrastive": 0.0, "total": 0.0}
        n_steps = 0
        n_empty = 0
        for batch in _batches(n, config.batch_size, shuffle_rng):
            x = train.windows[batch]
            B = len(batch)
            tape = GradientTape()
            if use_contra and config.contrastive == "simclr":
                x_all = np.concatenate([x, jitter(x, config.simclr_sigma, aug_rng)])
                z, recon = model.forward_train(x_all, tape)
                awrl, g_half = awrl_loss_and_grad(x, recon[:B], weights[batch])
                d_recon = np.concatenate([g_half, np.zeros_like(g_half)])
                pairs = simclr_pairs(B, config.temperature)
            else:
                z, recon = model.forward_train(x, tape)
                awrl, d_recon = awrl_loss_and_grad(x, recon, weights[batch])
                pairs = select_pairs(batch, partition, config.num_s, config.temperature) if (
                    use_contra and partition is not None) else PairSet()
            d_latent = None
            contra = 0.0
            if use_contra:
                contra, g_z = contrastive_loss_and_grad(pairs, z, config.infonce)
                if pairs.empty:
                    n_empty += 1
                d_latent = config.lam * g_z
            total = awrl + config.lam * contra
            if not np.isfinite(total):
                raise TrainingError(f"non-finite loss at epoch {epoch}", last_good=best)
            model.backward(tape, d_recon, d_latent)
            try:
                opt.step(params, model.grads(tape))
            except TrainingError as exc:
                raise TrainingError(f"{exc} at epoch {epoch}", last_good=best) from None
            report.steps.append({"epoch": epoch, "step": n_steps, "awrl": awrl, "contrastive": contra,
                                 "total": total, "anchors": len(pairs)})
            sums["awrl"] += awrl
            sums["contrastive"] += contra
            sums["total"] += total
            n_steps += 1
        if n_empty:
            log.debug("epoch %d: %d/%d batches had no eligible contrastive pairs", epoch, n_empty, n_steps)

        val_err = reconstruction_error(model, val.windows) if len(val) else float("nan")
        if not all(np.isfinite(p).all() for p in params):
            raise TrainingError(f"non-finite parameters after epoch {epoch}", last_good=best)
        rec = {
            "epoch": epoch,
            "awrl": sums["awrl"] / n_steps,
            "contrastive": sums["contrastive"] / n_steps,
            "total": sums["total"] / n_steps,
            "val_error": val_err,
            "mean_weight": float(np.mean(weights)),
            "clusters": 0 if partition is None else partition.num_clusters,
            "flagged_clusters": 0 if partition is None else int(partition.flagged.sum()),
            "empty_pair_batches": n_empty,
            "wall_clock_s": time.perf_counter() - t0,
        }
        report.epochs.append(rec)
        log.info("epoch %d total=%.5f awrl=%.5f contra=%.5f val=%.5f", epoch, rec["total"], rec["awrl"],
                 rec["contrastive"], val_err)
        if callback is not None:
            callback(epoch, model)

        if not np.isfinite(val_err) or val_err < report.best_val_error:
            report.best_val_error = val_err
            report.best_epoch = epoch
            best = model.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                report.stopped_early = True
                break
    return best, report


def train(train_windows: WindowBatch, val_windows: WindowBatch, config: TrainConfig | None = None,
          callback: Callable | None = None) -> tuple[ConjugateModel, TrainReport]:
    """Build a model from ``config`` and train it; returns the best-validation model."""
    config = config or TrainConfig()
    config.validate()
    init_rng, shuffle_rng, aug_rng = _rngs(config.seed)
    model = make_variant(config.model_config(train_windows.d, train_windows.w), init_rng)
    return _fit(model, train_windows, val_windows, config, shuffle_rng, aug_rng, callback)


def train_baseline_wrapper(model, train_windows: WindowBatch, val_windows: WindowBatch,
                           config: TrainConfig | None = None, callback: Callable | None = None):
    """Train an externally constructed reconstruction model under the same objective.

    ``model`` must expose ``encode``, ``reconstruct``, ``forward_train(x, tape)``,
    ``backward(tape, d_recon, d_latent)``, ``parameters()``, ``grads(tape)`` and
    ``copy()``; shapes are probed on one training window before training.
    """
    config = config or TrainConfig()
    config.validate()
    _check_hooks(model, train_windows.windows[:2])
    if not callable(getattr(model, "copy", None)):
        raise InterfaceError("model is missing the copy() hook")
    _, shuffle_rng, aug_rng = _rngs(config.seed)
    return _fit(model, train_windows, val_windows, config, shuffle_rng, aug_rng, callback)


def train_plain_autoencoder(train_windows: WindowBatch, val_windows: WindowBatch, config: TrainConfig,
                            callback: Callable | None = None) -> tuple[ConjugateModel, list[float], list[float]]:
    """Reference trainer: unweighted squared error, nothing else.

    Returns ``(best model, per-step losses, per-epoch validation errors)``.
    """
    init_rng, shuffle_rng, _ = _rngs(config.seed)
    model = make_variant(config.model_config(train_windows.d, train_windows.w), init_rng)
    opt = Optimizer(config.lr, config.optimizer)
    params = model.parameters()
    n = len(train_windows)
    losses, val_errors = [], []
    best, best_err, bad = model.copy(), float("inf"), 0
    for epoch in range(1, config.epochs + 1):
        for batch in _batches(n, config.batch_size, shuffle_rng):
            x = train_windows.windows[batch]
            tape = GradientTape()
            _, recon = model.forward_train(x, tape)
            resid = recon - x
            losses.append(float(np.mean(np.sum(resid * resid, axis=(1, 2)))))
            model.backward(tape, (2.0 / len(batch)) * resid)
            opt.step(params, model.grads(tape))
        err = reconstruction_error(model, val_windows.windows)
        val_errors.append(err)
        if callback is not None:
            callback(epoch, model)
        if err < best_err:
            best, best_err, bad = model.copy(), err, 0
        else:
            bad += 1
            if bad >= config.patience:
                break
    return best, losses, val_errors
