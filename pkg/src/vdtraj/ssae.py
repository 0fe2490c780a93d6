"""Stacked sparse auto-encoder producing per-frame vehicle descriptors.

Decoder weights are tied: layer ``k`` decodes with the transpose of its
encoder weight, so only encoder weights and the two bias sets are stored.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, TrainingError
from .numerics import (
    Adam, Tape, Tensor, backward, clip, linear, log, mean, no_record, relu, square, tsum,
)

log_ = logging.getLogger(__name__)
FORMAT_VERSION = 1
KL_CLAMP = 1e-6


@dataclass
class SsaeConfig:
    sizes: tuple[int, ...] = (10, 32, 16)
    rho: float = 0.05
    mu: float = 0.1
    lam: float = 1e-4
    activation: str = "relu"
    layer_epochs: int = 200
    finetune_epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-3
    patience: int = 20
    min_delta: float = 1e-6

    @classmethod
    def from_dict(cls, d: dict) -> "SsaeConfig":
        d = dict(d)
        if "sizes" in d:
            d["sizes"] = tuple(d["sizes"])
        return cls(**d)


def _act(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "linear":
        return x
    raise ValueError(f"unknown activation {kind!r}")


class SsaeModel:
    def __init__(self, sizes=(10, 32, 16), rho: float = 0.05, mu: float = 0.1, lam: float = 1e-4,
                 activation: str = "relu", seed: int = 0, dtype=np.float64):
        self.sizes = tuple(int(s) for s in sizes)
        self.rho, self.mu, self.lam = rho, mu, lam
        self.activation = activation
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.weights: list[Tensor] = []
        self.enc_bias: list[Tensor] = []
        self.dec_bias: list[Tensor] = []
        for k, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = 1.0 / math.sqrt(n_in)
            self.weights.append(Tensor(rng.uniform(-bound, bound, (n_in, n_out)).astype(dtype),
                                       requires_grad=True, name=f"ssae.w{k}"))
            self.enc_bias.append(Tensor(np.zeros(n_out, dtype), requires_grad=True, name=f"ssae.be{k}"))
            self.dec_bias.append(Tensor(np.zeros(n_in, dtype), requires_grad=True, name=f"ssae.bd{k}"))

    @classmethod
    def from_config(cls, cfg: SsaeConfig, seed: int = 0, dtype=np.float64) -> "SsaeModel":
        return cls(cfg.sizes, cfg.rho, cfg.mu, cfg.lam, cfg.activation, seed, dtype)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def descriptor_dim(self) -> int:
        return self.sizes[-1]

    def params(self) -> dict[str, Tensor]:
        out = {}
        for k in range(self.n_layers):
            for t in (self.weights[k], self.enc_bias[k], self.dec_bias[k]):
                out[t.name] = t
        return out

    # -- forward maps --------------------------------------------------

    def encode_layer(self, x: Tensor, k: int) -> Tensor:
        return _act(linear(x, self.weights[k], self.enc_bias[k]), self.activation)

    def decode_layer(self, f: Tensor, k: int) -> Tensor:
        # linear reconstruction with the tied (transposed) weight
        return linear(f, self.weights[k].T, self.dec_bias[k])

    def encode(self, s, upto: int | None = None) -> Tensor:
        """Descriptor(s) for whitened state(s) ``s`` of shape (10,) or (n, 10)."""
        x = s if isinstance(s, Tensor) else Tensor(np.asarray(s, dtype=self.weights[0].data.dtype))
        if x.shape[-1] != self.sizes[0]:
            raise DimensionError(f"encoder expects {self.sizes[0]} features, got {x.shape[-1]}")
        single = x.ndim == 1
        if single:
            x = x.reshape(1, -1)
        for k in range(self.n_layers if upto is None else upto):
            x = self.encode_layer(x, k)
        return x.reshape(-1) if single else x

    def decode(self, d, start: int | None = None) -> Tensor:
        x = d if isinstance(d, Tensor) else Tensor(np.asarray(d, dtype=self.weights[0].data.dtype))
        start = self.n_layers if start is None else start
        if x.shape[-1] != self.sizes[start]:
            raise DimensionError(f"decoder expects {self.sizes[start]} features, got {x.shape[-1]}")
        single = x.ndim == 1
        if single:
            x = x.reshape(1, -1)
        for k in reversed(range(start)):
            x = self.decode_layer(x, k)
        return x.reshape(-1) if single else x

    def weight_norm(self) -> Tensor:
        total = tsum(square(self.weights[0]))
        for w in self.weights[1:]:
            total = total + tsum(square(w))
        return total

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION, "kind": "ssae", "sizes": list(self.sizes),
            "rho": self.rho, "mu": self.mu, "lam": self.lam, "activation": self.activation,
            "seed": self.seed,
            "weights": [w.data.ravel().tolist() for w in self.weights],
            "enc_bias": [b.data.tolist() for b in self.enc_bias],
            "dec_bias": [b.data.tolist() for b in self.dec_bias],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SsaeModel":
        m = cls(d["sizes"], d["rho"], d["mu"], d["lam"], d["activation"], d["seed"])
        for k in range(m.n_layers):
            shape = m.weights[k].shape
            m.weights[k].data = np.asarray(d["weights"][k], dtype=np.float64).reshape(shape)
            m.enc_bias[k].data = np.asarray(d["enc_bias"][k], dtype=np.float64)
            m.dec_bias[k].data = np.asarray(d["dec_bias"][k], dtype=np.float64)
        return m

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "SsaeModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ------------------------------------------------------------------- loss

def sparsity_penalty(activations, rho: float) -> Tensor:
    """Σ_j KL(ρ ‖ ρ_j) with ρ_j the batch-mean activation of unit j.

    Activations are clamped to [0, 1] and ρ_j to [1e-6, 1-1e-6] first.
    """
    a = activations if isinstance(activations, Tensor) else Tensor(activations)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    rho_j = clip(mean(clip(a, 0.0, 1.0), axis=0), KL_CLAMP, 1.0 - KL_CLAMP)
    kl = rho * log(rho / rho_j) + (1.0 - rho) * log((1.0 - rho) / (1.0 - rho_j))
    return tsum(kl)


def mse(a: Tensor, b) -> Tensor:
    return mean(square(a - b))


def sparse_loss(batch, model: SsaeModel) -> Tensor:
    """Reconstruction MSE + μ·KL sparsity of the descriptor + λ·Σ‖W‖²."""
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch))
    d = model.encode(x)
    z = model.decode(d)
    return mse(z, x) + model.mu * sparsity_penalty(d, model.rho) + model.lam * model.weight_norm()


def _layer_loss(model: SsaeModel, x: Tensor, k: int) -> Tensor:
    f = model.encode_layer(x, k)
    z = model.decode_layer(f, k)
    return (mse(z, x) + model.mu * sparsity_penalty(f, model.rho)
            + model.lam * tsum(square(model.weights[k])))


def _fit(params: dict[str, Tensor], loss_fn, data: np.ndarray, epochs: int, cfg: SsaeConfig,
         rng: np.random.Generator, what: str) -> list[float]:
    opt = Adam(params, lr=cfg.lr)
    n = len(data)
    history = []
    best, stale = math.inf, 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            xb = Tensor(data[order[s:s + cfg.batch_size]])
            with Tape() as tape:
                loss = loss_fn(xb)
            val = float(loss.data)
            if not math.isfinite(val):
                raise TrainingError(f"SSAE {what}: loss diverged at epoch {epoch}")
            g = backward(tape, loss, leaves=params.values())
            opt.step({name: g[p] for name, p in params.items()})
            total += val * len(xb.data)
        epoch_loss = total / n
        history.append(epoch_loss)
        if epoch_loss < best - cfg.min_delta:
            best, stale = epoch_loss, 0
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                break
    return history


@dataclass
class PretrainResult:
    model: SsaeModel
    layer_history: list[list[float]] = field(default_factory=list)
    finetune_history: list[float] = field(default_factory=list)


def pretrain(data: np.ndarray, cfg: SsaeConfig = SsaeConfig(), seed: int = 0) -> PretrainResult:
    """Greedy layer-wise sparse AE training, then joint fine-tuning of the stack."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or len(data) == 0:
        raise ValueError("pretrain needs a non-empty (n, d) array")
    model = SsaeModel.from_config(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    codes = data
    layer_hist = []
    for k in range(model.n_layers):
        params = {t.name: t for t in (model.weights[k], model.enc_bias[k], model.dec_bias[k])}
        h = _fit(params, lambda xb, k=k: _layer_loss(model, xb, k), codes, cfg.layer_epochs, cfg, rng,
                 f"layer {k}")
        layer_hist.append(h)
        with no_record():
            codes = model.encode_layer(Tensor(codes), k).data
        log_.info("ssae layer %d: loss %.5f after %d epochs", k, h[-1] if h else float("nan"), len(h))
    ft = _fit(model.params(), lambda xb: sparse_loss(xb, model), data, cfg.finetune_epochs, cfg, rng,
              "fine-tune")
    return PretrainResult(model, layer_hist, ft)
