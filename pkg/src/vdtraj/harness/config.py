from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from ..data import SyntheticConfig
from ..errors import ConfigError
from ..predictor import ModelConfig
from ..preprocess import FEATURES
from ..ssae import SsaeConfig

# variant tag -> (state columns fed to the network, SSAE descriptor path)
VARIANTS: dict[str, tuple[tuple[str, ...], bool]] = {
    "DCS-LSTM": (("x", "y"), False),
    "K-Model": (("x", "y", "dx", "v", "a", "psi", "laneId"), False),
    "MM-Model": (("x", "y", "dx", "v", "a", "psi", "laneId", "W", "L", "C"), False),
    "VD+DCS-LSTM": (FEATURES, True),
}


def variant_columns(variant: str) -> tuple[int, ...]:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    return tuple(FEATURES.index(f) for f in VARIANTS[variant][0])


@dataclass
class DataConfig:
    source: str = "synthetic"          # synthetic | tracks | ngsim
    path: str | None = None
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    seed: int = 0
    rate: int = 2
    t_h: float = 3.0
    t_f: float = 5.0
    stride: int = 5
    lane_width: float = 12.0
    lane_centers: dict | None = None
    heading_lag: int = 3
    lane_change_fraction: float | None = None
    min_lateral_cue_ft: float = 0.0
    max_windows: int | None = None
    split_fraction: float = 0.8
    split_seed: int = 0


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    loss_mode: str = "mixture"
    val_fraction: float = 0.1
    patience: int | None = None
    clip_norm: float | None = None
    lr_schedule: str = "constant"      # constant | cosine
    lr_min: float = 1e-5
    dtype: str = "float64"
    pretrain_ssae: bool = True


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    zca_eps: float = 1e-5
    ssae: SsaeConfig = field(default_factory=SsaeConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    variant: str = "VD+DCS-LSTM"

    def resolved(self) -> "ExperimentConfig":
        """Copy whose model/SSAE dimensions agree with the variant's feature mask."""
        cols = variant_columns(self.variant)
        use_ssae = VARIANTS[self.variant][1]
        sizes = (len(cols),) + tuple(self.ssae.sizes[1:])
        ssae = replace(self.ssae, sizes=sizes)
        model = replace(self.model, input_dim=len(cols), use_ssae=use_ssae, ssae_sizes=sizes)
        return replace(self, ssae=ssae, model=model)

    def with_variant(self, variant: str) -> "ExperimentConfig":
        variant_columns(variant)
        return replace(self, variant=variant).resolved()

    def to_dict(self) -> dict:
        d = {
            "data": asdict(self.data),
            "zca_eps": self.zca_eps,
            "ssae": asdict(self.ssae),
            "model": self.model.to_dict(),
            "train": asdict(self.train),
            "variant": self.variant,
        }
        d["ssae"]["sizes"] = list(self.ssae.sizes)
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {"data", "zca_eps", "ssae", "model", "train", "variant"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        data = dict(d.get("data", {}))
        syn = SyntheticConfig.from_dict(data.pop("synthetic", {}))
        try:
            cfg = cls(
                data=DataConfig(synthetic=syn, **data),
                zca_eps=float(d.get("zca_eps", 1e-5)),
                ssae=SsaeConfig.from_dict(d.get("ssae", {})),
                model=ModelConfig.from_dict(d.get("model", {})),
                train=TrainConfig(**d.get("train", {})),
                variant=d.get("variant", "VD+DCS-LSTM"),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        if cfg.train.loss_mode not in ("mixture", "teacher"):
            raise ConfigError(f"unknown loss mode {cfg.train.loss_mode!r}")
        if cfg.data.source not in ("synthetic", "tracks", "ngsim"):
            raise ConfigError(f"unknown data source {cfg.data.source!r}")
        return cfg.resolved()

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
