"""Conjugate MLP autoencoder and its ablation variants.

A window ``X`` is ``d x w`` (metrics by time). The time encoder runs along the
time axis of every metric row (``w -> h_T``) and the feature encoder along the
metric axis of every timestamp (``d -> h_F``). The decoder is a single dense
layer over ``Concat(Z_T, Z_F^T)`` whose weight is block structured: the time
block maps each metric's ``h_T`` code back to ``w`` steps, the feature block
maps each timestamp's ``h_F`` code back to ``d`` metrics; each block carries
its own bias (per time step and per metric). Written out as one matrix on the
flattened concatenation this is a dense layer with tied weights, which is what
keeps the parameter count in the thousands instead of the millions.

Variants:

``conjugate``     both encoders (default)
``time_only``     time encoder and time block of the decoder
``feature_only``  feature encoder and feature block of the decoder
``flattened``     one encoder over the flattened ``d*w`` window, dense decoder back
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import NormStats
from .errors import ConfigurationError, DimensionError
from .nn_core import Activation, DenseLayer, GradientTape, glorot_uniform, sigmoid

VARIANTS = ("conjugate", "flattened", "time_only", "feature_only")
CHECKPOINT_FORMAT = "cleanet-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    d: int
    w: int
    hidden_time: int = 16
    hidden_feature: int = 16
    n_layers: int = 1
    variant: str = "conjugate"

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("d", "w", "hidden_time", "hidden_feature", "n_layers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")

    @property
    def uses_time(self) -> bool:
        return self.variant in ("conjugate", "time_only")

    @property
    def uses_feature(self) -> bool:
        return self.variant in ("conjugate", "feature_only")


def _stack(rng, in_dim, hidden, n_layers):
    layers = []
    for i in range(n_layers):
        layers.append(DenseLayer.init(rng, in_dim if i == 0 else hidden, hidden, Activation.RELU))
    return layers


class ConjugateModel:
    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        config.validate()
        self.config = config
        self.norm_stats: NormStats | None = None
        rng = np.random.default_rng(0) if rng is None else rng
        c = config
        self.time_encoder: list[DenseLayer] = []
        self.feature_encoder: list[DenseLayer] = []
        self.flat_encoder: list[DenseLayer] = []
        self.dec_time: DenseLayer | None = None
        self.dec_feature: DenseLayer | None = None
        self.dec_flat: DenseLayer | None = None
        if c.variant == "flattened":
            self.flat_encoder = _stack(rng, c.d * c.w, c.hidden_time, c.n_layers)
            self.dec_flat = DenseLayer.init(rng, c.hidden_time, c.d * c.w, Activation.SIGMOID)
            return
        # the two decoder blocks share one Glorot scale: they are slices of a single layer
        fan_in = (c.hidden_time if c.uses_time else 0) + (c.hidden_feature if c.uses_feature else 0)
        if c.uses_time:
            self.time_encoder = _stack(rng, c.w, c.hidden_time, c.n_layers)
        if c.uses_feature:
            self.feature_encoder = _stack(rng, c.d, c.hidden_feature, c.n_layers)
        if c.uses_time:
            self.dec_time = DenseLayer(glorot_uniform(rng, fan_in, c.w)[: c.hidden_time], np.zeros(c.w))
        if c.uses_feature:
            self.dec_feature = DenseLayer(glorot_uniform(rng, fan_in, c.d)[-c.hidden_feature:], np.zeros(c.d))

    # ------------------------------------------------------------------ params
    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for prefix, layers in (("time_encoder", self.time_encoder), ("feature_encoder", self.feature_encoder),
                               ("flat_encoder", self.flat_encoder)):
            for i, layer in enumerate(layers):
                out += [(f"{prefix}.{i}.{n}", p) for n, p in layer.params()]
        for prefix, layer in (("dec_time", self.dec_time), ("dec_feature", self.dec_feature),
                              ("dec_flat", self.dec_flat)):
            if layer is not None:
                out += [(f"{prefix}.{n}", p) for n, p in layer.params()]
        return out

    def parameters(self) -> list[np.ndarray]:
        return [p for _, p in self.named_parameters()]

    def _layers(self):
        for layer in self.time_encoder + self.feature_encoder + self.flat_encoder:
            yield layer
        for layer in (self.dec_time, self.dec_feature, self.dec_flat):
            if layer is not None:
                yield layer

    def grads(self, tape: GradientTape) -> list[np.ndarray]:
        out = []
        for layer in self._layers():
            out += layer.grads(tape)
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def macs_per_window(self) -> int:
        """Multiply-accumulates for one window: sum over layers of in*out*rows."""
        c = self.config
        if c.variant == "flattened":
            return sum(layer.in_dim * layer.out_dim for layer in self.flat_encoder) + c.hidden_time * c.d * c.w
        total = 0
        total += sum(layer.in_dim * layer.out_dim * c.d for layer in self.time_encoder)
        total += sum(layer.in_dim * layer.out_dim * c.w for layer in self.feature_encoder)
        if self.dec_time is not None:
            total += c.hidden_time * c.w * c.d
        if self.dec_feature is not None:
            total += c.hidden_feature * c.d * c.w
        return total

    @property
    def latent_dim(self) -> int:
        c = self.config
        if c.variant == "flattened":
            return c.hidden_time
        return (c.d * c.hidden_time if c.uses_time else 0) + (c.hidden_feature * c.w if c.uses_feature else 0)

    # ----------------------------------------------------------------- forward
    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        c = self.config
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (c.d, c.w):
            raise DimensionError(f"expected windows of shape ({c.d}, {c.w}), got {x.shape}")
        return x

    def forward_train(self, x: np.ndarray, tape: GradientTape | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Run a ``(B, d, w)`` batch; returns ``(latent (B, L), reconstruction (B, d, w))``."""
        x = self._check(x)
        c = self.config
        B = x.shape[0]
        if c.variant == "flattened":
            h = x.reshape(B, c.d * c.w)
            for layer in self.flat_encoder:
                h = layer.forward(h, tape)
            out = self.dec_flat.forward(h, tape).reshape(B, c.d, c.w)
            return h, out

        parts = []
        pre = np.zeros(x.shape)
        if c.uses_time:
            zt = x
            for layer in self.time_encoder:
                zt = layer.forward(zt, tape)  # (B, d, h_T)
            parts.append(zt.reshape(B, -1))
            pre += self.dec_time.forward(zt, tape)  # (B, d, w)
        if c.uses_feature:
            zf = x.transpose(0, 2, 1)
            for layer in self.feature_encoder:
                zf = layer.forward(zf, tape)  # (B, w, h_F)
            parts.append(zf.transpose(0, 2, 1).reshape(B, -1))
            pre += self.dec_feature.forward(zf, tape).transpose(0, 2, 1)
        out = sigmoid(pre)
        if tape is not None:
            tape.cache["dec_out"] = out
        return np.concatenate(parts, axis=1), out

    def backward(self, tape: GradientTape, d_recon: np.ndarray, d_latent: np.ndarray | None = None) -> None:
        """Accumulate parameter gradients for upstream grads w.r.t. reconstruction and latent."""
        c = self.config
        B = d_recon.shape[0]
        if c.variant == "flattened":
            g = self.dec_flat.backward(d_recon.reshape(B, c.d * c.w), tape)
            if d_latent is not None:
                g = g + d_latent
            for layer in reversed(self.flat_encoder):
                g = layer.backward(g, tape)
            return

        out = tape.cache["dec_out"]
        d_pre = d_recon * out * (1.0 - out)
        offset = 0
        if c.uses_time:
            g = self.dec_time.backward(d_pre, tape)  # (B, d, h_T)
            n = c.d * c.hidden_time
            if d_latent is not None:
                g = g + d_latent[:, offset:offset + n].reshape(B, c.d, c.hidden_time)
            offset += n
            for layer in reversed(self.time_encoder):
                g = layer.backward(g, tape)
        if c.uses_feature:
            g = self.dec_feature.backward(d_pre.transpose(0, 2, 1), tape)  # (B, w, h_F)
            n = c.hidden_feature * c.w
            if d_latent is not None:
                g = g + d_latent[:, offset:offset + n].reshape(B, c.hidden_feature, c.w).transpose(0, 2, 1)
            for layer in reversed(self.feature_encoder):
                g = layer.backward(g, tape)

    def encode(self, x: np.ndarray) -> np.ndarray:
        single = np.asarray(x).ndim == 2
        z, _ = self.forward_train(x)
        return z[0] if single else z

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        single = np.asarray(x).ndim == 2
        _, out = self.forward_train(x)
        return out[0] if single else out

    def copy(self) -> "ConjugateModel":
        return copy.deepcopy(self)

    # ------------------------------------------------------------- checkpoint
    def to_dict(self) -> dict:
        layers = {}
        for prefix, stack in (("time_encoder", self.time_encoder), ("feature_encoder", self.feature_encoder),
                              ("flat_encoder", self.flat_encoder)):
            for i, layer in enumerate(stack):
                layers[f"{prefix}.{i}"] = _layer_dict(layer)
        for name in ("dec_time", "dec_feature", "dec_flat"):
            layer = getattr(self, name)
            if layer is not None:
                layers[name] = _layer_dict(layer)
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "layers": layers,
            "norm_stats": None if self.norm_stats is None else self.norm_stats.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ConjugateModel":
        if obj.get("format") != CHECKPOINT_FORMAT:
            raise ConfigurationError("not a model checkpoint")
        if obj.get("version") != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {obj.get('version')}")
        m = cls(ModelConfig(**obj["config"]))
        layers = obj["layers"]
        for prefix in ("time_encoder", "feature_encoder", "flat_encoder"):
            stack = getattr(m, prefix)
            for i in range(len(stack)):
                stack[i] = _layer_from(layers[f"{prefix}.{i}"])
        for name in ("dec_time", "dec_feature", "dec_flat"):
            if getattr(m, name) is not None:
                setattr(m, name, _layer_from(layers[name]))
        if obj.get("norm_stats") is not None:
            m.norm_stats = NormStats.from_dict(obj["norm_stats"])
        return m

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict()))
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "ConjugateModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _layer_dict(layer: DenseLayer) -> dict:
    return {
        "in_dim": layer.in_dim,
        "out_dim": layer.out_dim,
        "activation": layer.activation.value,
        "weight": layer.weight.tolist(),
        "bias": None if layer.bias is None else layer.bias.tolist(),
    }


def _layer_from(obj: dict) -> DenseLayer:
    layer = DenseLayer(obj["weight"], obj["bias"], obj["activation"])
    if layer.weight.shape != (obj["in_dim"], obj["out_dim"]):
        raise DimensionError("checkpoint layer dims do not match stored weights")
    return layer


def make_variant(config: ModelConfig, seed: int | np.random.Generator = 0) -> ConjugateModel:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return ConjugateModel(config, rng)


def model_info(model: ConjugateModel) -> dict:
    c = model.config
    return {
        "variant": c.variant,
        "d": c.d,
        "w": c.w,
        "hidden_time": c.hidden_time,
        "hidden_feature": c.hidden_feature,
        "n_layers": c.n_layers,
        "latent_dim": model.latent_dim,
        "parameters": model.n_params,
        "macs_per_window": model.macs_per_window(),
        "layers": {name: list(p.shape) for name, p in model.named_parameters()},
    }
