"""History encoder, maneuver classifier and maneuver-conditioned Gaussian decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import MANEUVERS
from .errors import ConfigError, DimensionError, NumericError, UsageError
from .numerics import (
    Tensor, clip, concat, exp, gather_rows, linear, log, log_softmax, logsumexp, lstm_sequence,
    no_record, softmax, square, stack, tanh, transpose, tsum,
)
from .preprocess import (
    FEATURES, NormalizationParams, Window, WhiteningParams, apply_minmax, apply_zca,
)
from .social import ConvPlan, GridSpec, init_social_params, resolve_cells, social_pool
from .ssae import SsaeModel

N_MANEUVERS = len(MANEUVERS)
SIGMA_MIN = 1e-3
RHO_MAX = 0.999
LOG_2PI = math.log(2.0 * math.pi)


# --------------------------------------------------------------- containers

@dataclass(frozen=True)
class GaussianParams:
    mu_x: float
    mu_y: float
    sigma_x: float
    sigma_y: float
    rho: float

    def validate(self) -> None:
        if not (self.sigma_x >= SIGMA_MIN and self.sigma_y >= SIGMA_MIN):
            raise NumericError(f"sigma below {SIGMA_MIN}: {self.sigma_x}, {self.sigma_y}")
        if not abs(self.rho) <= RHO_MAX:
            raise NumericError(f"|rho| above {RHO_MAX}: {self.rho}")
        if not all(math.isfinite(v) for v in (self.mu_x, self.mu_y, self.sigma_x, self.sigma_y, self.rho)):
            raise NumericError("non-finite Gaussian parameters")


@dataclass
class TrajectoryDistribution:
    """Per-maneuver (keep, left, right) Gaussian sequences plus maneuver probabilities.

    ``params`` has shape (3, n_future, 5) with columns muX, muY, sigmaX, sigmaY, rho (feet).
    """

    maneuver_probs: np.ndarray
    params: np.ndarray

    def branch(self, m: int) -> list[GaussianParams]:
        return [GaussianParams(*map(float, row)) for row in self.params[m]]

    def to_record(self, window_id: str) -> dict:
        keys = ("muX", "muY", "sigmaX", "sigmaY", "rho")
        return {
            "windowId": window_id,
            "maneuverProbs": [float(p) for p in self.maneuver_probs],
            "branches": [[dict(zip(keys, map(float, row))) for row in branch] for branch in self.params],
            "units": "feet",
        }

    @classmethod
    def from_record(cls, rec: dict) -> "TrajectoryDistribution":
        keys = ("muX", "muY", "sigmaX", "sigmaY", "rho")
        params = np.array([[[row[k] for k in keys] for row in br] for br in rec["branches"]])
        return cls(np.asarray(rec["maneuverProbs"], dtype=np.float64), params)


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 10
    use_ssae: bool = True
    ssae_sizes: tuple[int, ...] = (10, 32, 16)
    encoder_dim: int = 64
    decoder_dim: int = 128
    grid: GridSpec = GridSpec()
    conv: ConvPlan = ConvPlan()
    alpha: float = 0.1
    n_future: int = 25
    ego_concat: bool = True
    normalize_outputs: bool = True
    freeze_ssae: bool = False

    @property
    def lstm_input_dim(self) -> int:
        return self.ssae_sizes[-1] if self.use_ssae else self.input_dim

    @property
    def context_dim(self) -> int:
        return self.conv.out_dim + (self.encoder_dim if self.ego_concat else 0)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["ssae_sizes"] = list(self.ssae_sizes)
        d["grid"] = self.grid.to_dict()
        d["conv"] = {"channels": list(self.conv.channels), "dilations": list(self.conv.dilations),
                     "kernel": self.conv.kernel, "out_dim": self.conv.out_dim}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        if "grid" in d:
            d["grid"] = GridSpec.from_dict(d["grid"])
        if "conv" in d:
            c = d["conv"]
            d["conv"] = ConvPlan(tuple(c["channels"]), tuple(c["dilations"]), c["kernel"], c["out_dim"])
        if "ssae_sizes" in d:
            d["ssae_sizes"] = tuple(d["ssae_sizes"])
        return cls(**d)


def _uniform(rng, fan_in, shape, dtype):
    b = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-b, b, shape).astype(dtype)


class TrajectoryModel:
    """All learnable parameters of the network, keyed by dotted names."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0,
                 ssae: SsaeModel | None = None, dtype=np.float64):
        if len(config.conv.channels) != len(config.conv.dilations):
            raise ConfigError("conv plan needs one dilation per layer")
        if config.use_ssae and config.ssae_sizes[0] != config.input_dim:
            raise ConfigError("SSAE input size must equal the feature count")
        self.config = config
        self.seed = seed
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        c = config
        e, d = c.encoder_dim, c.decoder_dim
        p: dict[str, Tensor] = {}

        def add(name, arr):
            p[name] = Tensor(arr, requires_grad=True, name=name)

        din = c.lstm_input_dim
        add("enc.weight", _uniform(rng, e, (din + e, 4 * e), dtype))
        add("enc.bias", _uniform(rng, e, (4 * e,), dtype))
        p.update(init_social_params(rng, e, c.grid, c.conv, dtype))
        add("cls.weight", _uniform(rng, c.context_dim, (c.context_dim, N_MANEUVERS), dtype))
        add("cls.bias", _uniform(rng, c.context_dim, (N_MANEUVERS,), dtype))
        dec_in = c.context_dim + N_MANEUVERS
        add("dec.weight", _uniform(rng, d, (dec_in + d, 4 * d), dtype))
        add("dec.bias", _uniform(rng, d, (4 * d,), dtype))
        add("head.weight", _uniform(rng, d, (d, 5), dtype))
        add("head.bias", _uniform(rng, d, (5,), dtype))
        self.core = p
        # per-frame output standardization, fitted from training futures
        self.buffers = {"out.offset": np.zeros((c.n_future, 2), dtype=dtype),
                        "out.scale": np.ones((c.n_future, 2), dtype=dtype)}
        if c.use_ssae:
            self.ssae = ssae if ssae is not None else SsaeModel(c.ssae_sizes, seed=seed + 17, dtype=dtype)
            if self.ssae.sizes != tuple(c.ssae_sizes):
                raise ConfigError(f"SSAE sizes {self.ssae.sizes} differ from config {c.ssae_sizes}")
        else:
            self.ssae = None

    def params(self, trainable_only: bool = False) -> dict[str, Tensor]:
        out = dict(self.core)
        if self.ssae is not None and not (trainable_only and self.config.freeze_ssae):
            out.update(self.ssae.params())
        return out

    def zero_(self) -> "TrajectoryModel":
        for t in self.params().values():
            t.data[...] = 0.0
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: v.data.copy() for k, v in self.params().items()}
        out.update({k: v.copy() for k, v in self.buffers.items()})
        return out

    def fit_output_norm(self, futures: np.ndarray, floor: float = 1.0) -> None:
        """Centre and scale the decoder's mean outputs on (n, n_future, 2) training futures."""
        f = np.asarray(futures, dtype=np.float64)
        if f.ndim != 3 or f.shape[1:] != (self.config.n_future, 2):
            raise DimensionError(f"futures must be (n, {self.config.n_future}, 2), got {f.shape}")
        self.buffers["out.offset"] = f.mean(axis=0).astype(self.dtype)
        self.buffers["out.scale"] = np.maximum(f.std(axis=0), floor).astype(self.dtype)

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.params()
        missing = set(params) - set(state)
        if missing:
            raise ConfigError(f"checkpoint lacks parameters {sorted(missing)}")
        for k, t in params.items():
            arr = np.asarray(state[k], dtype=t.data.dtype)
            if arr.shape != t.shape:
                raise DimensionError(f"{k}: checkpoint shape {arr.shape} vs model {t.shape}")
            t.data = arr.copy()
        for k, ref in self.buffers.items():
            if k in state:
                arr = np.asarray(state[k], dtype=ref.dtype)
                if arr.shape != ref.shape:
                    raise DimensionError(f"{k}: checkpoint shape {arr.shape} vs model {ref.shape}")
                self.buffers[k] = arr.copy()


# ------------------------------------------------------------- components

def _descriptors(model: TrajectoryModel, inputs: Tensor) -> Tensor:
    if model.ssae is None:
        return inputs
    if model.config.freeze_ssae:
        with no_record():
            return Tensor(model.ssae.encode(inputs.data).data)
    return model.ssae.encode(inputs)


def run_encoder(model: TrajectoryModel, seq: Tensor) -> Tensor:
    """Final hidden state for a (V, T, D) batch of descriptor sequences."""
    hs, _ = lstm_sequence(seq, model.core["enc.weight"], model.core["enc.bias"])
    return hs[-1]


def encode_history(model: TrajectoryModel, descriptors) -> Tensor:
    """Single-vehicle context vector for a (T, D) descriptor history (oldest first)."""
    seq = descriptors if isinstance(descriptors, Tensor) else Tensor(np.asarray(descriptors, model.dtype))
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise DimensionError(f"encode_history needs a non-empty (T, D) sequence, got {seq.shape}")
    return run_encoder(model, seq.reshape(1, *seq.shape)).reshape(-1)


def maneuver_logits(model: TrajectoryModel, context: Tensor) -> Tensor:
    return linear(context, model.core["cls.weight"], model.core["cls.bias"])


def classify_maneuver(model: TrajectoryModel, social_context, ego_encoding=None) -> np.ndarray:
    """P(keep), P(left), P(right) from the social context (and ego encoding)."""
    parts = [np.asarray(getattr(social_context, "data", social_context), dtype=np.float64)]
    if model.config.ego_concat:
        if ego_encoding is None:
            raise UsageError("model concatenates the ego encoding; pass it")
        parts.append(np.asarray(getattr(ego_encoding, "data", ego_encoding), dtype=np.float64))
    with no_record():
        logits = maneuver_logits(model, Tensor(np.concatenate(parts)[None]))
        return softmax(logits).data[0]


def argmax_maneuver(probs: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. keep > left > right on ties
    return int(np.argmax(probs))


def output_transform(raw: Tensor, offset=None, scale=None) -> tuple[Tensor, Tensor, Tensor]:
    """Map raw (..., n_future, 5) head outputs to (mu, sigma, rho) in feet.

    ``offset``/``scale`` (n_future, 2) undo the output standardization; with
    the defaults (0 and 1) the means pass through and sigma = exp(raw).
    """
    mu, log_sigma = raw[..., 0:2], clip(raw[..., 2:4], -30.0, 30.0)
    if scale is not None:
        mu = mu * scale
        log_sigma = log_sigma + np.log(scale)
    if offset is not None:
        mu = mu + offset
    sigma = clip(exp(log_sigma), SIGMA_MIN, None)
    rho = tanh(raw[..., 4]) * RHO_MAX
    return mu, sigma, rho


def run_decoder(model: TrajectoryModel, complete: Tensor) -> Tensor:
    """Raw (N, n_future, 5) outputs; the complete context is the input at every step."""
    c = model.config
    N = complete.shape[0]
    hs, _ = lstm_sequence(complete, model.core["dec.weight"], model.core["dec.bias"], steps=c.n_future)
    H = stack(hs, axis=1).reshape(N * c.n_future, c.decoder_dim)
    raw = linear(H, model.core["head.weight"], model.core["head.bias"])
    return raw.reshape(N, c.n_future, 5)


def decode_trajectory(model: TrajectoryModel, complete_context) -> np.ndarray:
    """(n_future, 5) Gaussian parameters (muX, muY, sigmaX, sigmaY, rho) for one context."""
    ctx = np.asarray(getattr(complete_context, "data", complete_context), dtype=model.dtype)
    if ctx.shape != (model.config.context_dim + N_MANEUVERS,):
        raise DimensionError(f"complete context must have {model.config.context_dim + N_MANEUVERS} entries")
    with no_record():
        raw = run_decoder(model, Tensor(ctx[None]))
        mu, sigma, rho = output_transform(raw, model.buffers["out.offset"], model.buffers["out.scale"])
        return np.concatenate([mu.data, sigma.data, rho.data[..., None]], axis=-1)[0]


# ---------------------------------------------------------------- density

def bvn_log_pdf_t(mu: Tensor, sigma: Tensor, rho: Tensor, points) -> Tensor:
    """Elementwise bivariate-normal log density; mu/sigma (..., 2), rho (...), points (..., 2)."""
    pts = points if isinstance(points, Tensor) else Tensor(np.asarray(points))
    zx = (pts[..., 0] - mu[..., 0]) / sigma[..., 0]
    zy = (pts[..., 1] - mu[..., 1]) / sigma[..., 1]
    one_m = 1.0 - square(rho)
    q = (square(zx) + square(zy) - 2.0 * rho * zx * zy) / one_m
    return (-LOG_2PI) - log(sigma[..., 0]) - log(sigma[..., 1]) - 0.5 * log(one_m) - 0.5 * q


def bvn_log_pdf(params: GaussianParams, point) -> float:
    params.validate()
    x, y = float(point[0]), float(point[1])
    zx = (x - params.mu_x) / params.sigma_x
    zy = (y - params.mu_y) / params.sigma_y
    one_m = 1.0 - params.rho * params.rho
    q = (zx * zx + zy * zy - 2.0 * params.rho * zx * zy) / one_m
    return -LOG_2PI - math.log(params.sigma_x) - math.log(params.sigma_y) - 0.5 * math.log(one_m) - 0.5 * q


def branch_log_likelihood(params: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Σ over frames of log N(truth | branch) for (M, T, 5) params, (T, 2) truth → (M,)."""
    p = np.asarray(params, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if np.any(p[..., 2:4] < SIGMA_MIN) or np.any(np.abs(p[..., 4]) > RHO_MAX):
        raise NumericError("Gaussian parameters outside their valid range")
    with no_record():
        lp = bvn_log_pdf_t(Tensor(p[..., 0:2]), Tensor(p[..., 2:4]), Tensor(p[..., 4]),
                           Tensor(np.broadcast_to(t, p.shape[:-1] + (2,))))
    return lp.data.sum(axis=-1)


def mixture_nll(pred: TrajectoryDistribution, truth) -> float:
    """−log Σ_i P(m_i) Π_t N(truth_t | branch i), via log-sum-exp."""
    truth = np.asarray(truth, dtype=np.float64)
    if pred.params.shape[0] != N_MANEUVERS or truth.shape != (pred.params.shape[1], 2):
        raise DimensionError(f"expected {N_MANEUVERS} branches and ({pred.params.shape[1]}, 2) truth")
    ll = branch_log_likelihood(pred.params, truth)
    with np.errstate(divide="ignore"):
        terms = ll + np.log(pred.maneuver_probs)
    m = np.max(terms)
    return float(-(m + np.log(np.sum(np.exp(terms - m)))))


# --------------------------------------------------------------- pipeline

@dataclass
class FeaturePipeline:
    """Column selection, Min-Max scaling and optional ZCA whitening of raw states."""

    columns: tuple[int, ...]
    minmax: NormalizationParams | None = None
    zca: WhiteningParams | None = None

    @property
    def dim(self) -> int:
        return len(self.columns)

    @property
    def fitted(self) -> bool:
        return self.minmax is not None

    def transform(self, states: np.ndarray) -> np.ndarray:
        if self.minmax is None:
            raise ConfigError("feature pipeline has not been fitted")
        x = np.asarray(states, dtype=np.float64)[..., list(self.columns)]
        shape = x.shape
        flat = apply_minmax(x.reshape(-1, shape[-1]), self.minmax)
        if self.zca is not None:
            flat = apply_zca(flat, self.zca)
        return flat.reshape(shape)

    def to_dict(self) -> dict:
        return {"columns": list(self.columns),
                "minmax": self.minmax.to_dict() if self.minmax else None,
                "zca": self.zca.to_dict() if self.zca else None}

    @classmethod
    def from_dict(cls, d: dict) -> "FeaturePipeline":
        return cls(tuple(d["columns"]),
                   NormalizationParams.from_dict(d["minmax"]) if d.get("minmax") else None,
                   WhiteningParams.from_dict(d["zca"]) if d.get("zca") else None)


@dataclass
class Batch:
    inputs: np.ndarray       # (V, T, F) transformed features of every vehicle
    ego_index: np.ndarray    # (B,)
    owner: np.ndarray        # (B * n_cells,) vehicle index per grid cell or -1
    future: np.ndarray       # (B, n_future, 2)
    labels: np.ndarray       # (B,)
    window_ids: list[str] = field(default_factory=list)
    collisions: int = 0

    @property
    def size(self) -> int:
        return len(self.ego_index)


def collate(windows: Sequence[Window], pipeline: FeaturePipeline, grid: GridSpec = GridSpec()) -> Batch:
    if not windows:
        raise UsageError("empty batch")
    inputs, ego, owners, fut, labels, ids = [], [], [], [], [], []
    offset = 0
    collisions = 0
    for w in windows:
        owner, n_col = resolve_cells(w.cells, w.distances, grid)
        collisions += n_col
        owners.append(np.where(owner >= 0, owner + offset, -1))
        inputs.append(pipeline.transform(w.states))
        ego.append(offset)
        offset += w.n_vehicles
        fut.append(w.future)
        labels.append(MANEUVERS.index(w.label) if w.label is not None else 0)
        ids.append(w.window_id)
    return Batch(np.concatenate(inputs, axis=0), np.array(ego, dtype=np.int64),
                 np.concatenate(owners), np.stack(fut), np.array(labels, dtype=np.int64), ids, collisions)


@dataclass
class ForwardOutput:
    log_probs: Tensor    # (B, 3)
    mu: Tensor           # (3, B, n_future, 2)
    sigma: Tensor        # (3, B, n_future, 2)
    rho: Tensor          # (3, B, n_future)

    def distributions(self) -> list[TrajectoryDistribution]:
        probs = np.exp(self.log_probs.data)
        probs = probs / probs.sum(axis=1, keepdims=True)
        params = np.concatenate([self.mu.data, self.sigma.data, self.rho.data[..., None]], axis=-1)
        return [TrajectoryDistribution(probs[b], params[:, b]) for b in range(probs.shape[0])]


def forward(model: TrajectoryModel, batch: Batch) -> ForwardOutput:
    c = model.config
    V, T, F = batch.inputs.shape
    B = batch.size
    x = Tensor(batch.inputs.reshape(V * T, F).astype(model.dtype))
    desc = _descriptors(model, x)
    enc = run_encoder(model, desc.reshape(V, T, desc.shape[-1]))
    grid = gather_rows(enc, batch.owner).reshape(B, c.grid.rows, c.grid.cols, c.encoder_dim)
    social = social_pool(grid, model.core, c.conv, c.alpha)
    if c.ego_concat:
        context = concat([social, gather_rows(enc, batch.ego_index)], axis=1)
    else:
        context = social
    log_probs = log_softmax(maneuver_logits(model, context))
    onehots = np.repeat(np.eye(N_MANEUVERS, dtype=model.dtype), B, axis=0)
    complete = concat([concat([context] * N_MANEUVERS, axis=0), Tensor(onehots)], axis=1)
    raw = run_decoder(model, complete).reshape(N_MANEUVERS, B, c.n_future, 5)
    mu, sigma, rho = output_transform(raw, model.buffers["out.offset"], model.buffers["out.scale"])
    return ForwardOutput(log_probs, mu, sigma, rho)


def branch_loglik_t(out: ForwardOutput, future: np.ndarray) -> Tensor:
    """(3, B) summed log-likelihood of the true futures under each branch."""
    pts = Tensor(np.broadcast_to(future, out.mu.shape).copy())
    return tsum(bvn_log_pdf_t(out.mu, out.sigma, out.rho, pts), axis=2)


def mixture_loss(out: ForwardOutput, batch: Batch) -> Tensor:
    """Batch mean of −log Σ_i P(m_i|I) P_θ(O|m_i, I)."""
    ll = branch_loglik_t(out, batch.future)
    joint = transpose(ll) + out.log_probs
    return -(tsum(logsumexp(joint, axis=1)) * (1.0 / batch.size))


def teacher_loss(out: ForwardOutput, batch: Batch) -> Tensor:
    """Labelled branch NLL plus maneuver cross-entropy."""
    ll = branch_loglik_t(out, batch.future)
    idx = (batch.labels, np.arange(batch.size))
    picked = ll[idx]
    ce = out.log_probs[(np.arange(batch.size), batch.labels)]
    return -(tsum(picked + ce) * (1.0 / batch.size))


def loss_fn(mode: str):
    if mode == "mixture":
        return mixture_loss
    if mode == "teacher":
        return teacher_loss
    raise ConfigError(f"unknown loss mode {mode!r}")


# ------------------------------------------------------------- inference

def predict_batch(model: TrajectoryModel, batch: Batch) -> list[TrajectoryDistribution]:
    with no_record():
        return forward(model, batch).distributions()


def predict(window: Window, model: TrajectoryModel, pipeline: FeaturePipeline | None) -> TrajectoryDistribution:
    """Full forward pass for one window."""
    if pipeline is None or not pipeline.fitted:
        raise ConfigError("prediction needs fitted preprocessing parameters")
    return predict_batch(model, collate([window], pipeline, model.config.grid))[0]


def point_forecast(pred: TrajectoryDistribution, weighted: bool = False) -> np.ndarray:
    """(n_future, 2) means of the most probable maneuver branch.

    With ``weighted`` the probability-weighted mean over branches is returned instead.
    """
    if weighted:
        p = pred.maneuver_probs / pred.maneuver_probs.sum()
        return np.einsum("m,mtk->tk", p, pred.params[..., 0:2])
    return pred.params[argmax_maneuver(pred.maneuver_probs), :, 0:2].copy()
