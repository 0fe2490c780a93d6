"""Controlled comparison of the input-feature variants on one shared split."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..errors import ConfigError
from .config import VARIANTS, ExperimentConfig
from .datasets import load_split, windows_hash
from .evaluation import HORIZONS_S, MetricsReport, evaluate
from .training import train_on

log = logging.getLogger(__name__)

# row order of the comparison table
VARIANT_ORDER = ("K-Model", "MM-Model", "DCS-LSTM", "VD+DCS-LSTM")


@dataclass
class AblationResult:
    reports: dict[str, MetricsReport]
    test_hash: str
    train_hash: str

    def table(self) -> str:
        head = "model".ljust(14) + "".join(f"{h}s".rjust(9) for h in HORIZONS_S)
        rows = [head]
        for name in VARIANT_ORDER:
            if name in self.reports:
                rows.append(name.ljust(14) + "".join(f"{v:9.3f}" for v in self.reports[name].rmse_m))
        return "\n".join(rows)

    def to_dict(self) -> dict:
        return {
            "test_hash": self.test_hash,
            "train_hash": self.train_hash,
            "reports": {k: r.to_dict() for k, r in self.reports.items()},
        }

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(json.dumps(self.to_dict(), indent=2))
        (out / "ablation.txt").write_text(self.table() + "\n")
        for name, rep in self.reports.items():
            rep.write(out / f"{name.replace('+', '_')}.json")


def check_variants(variants: Sequence[str]) -> list[str]:
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variant(s) {bad}; choose from {sorted(VARIANTS)}")
    return list(variants)


def ablate(config: ExperimentConfig, variants: Sequence[str] = VARIANT_ORDER,
           seed: int | None = None) -> AblationResult:
    """Train and evaluate each variant with the same seed, windows and split."""
    variants = check_variants(variants)
    data_split = load_split(config.data, config.model.grid)
    test_hash = windows_hash(data_split.test)
    reports = {}
    for name in variants:
        cfg = config.with_variant(name)
        log.info("ablation: training %s", name)
        ckpt = train_on(cfg, data_split.train, seed=seed)
        reports[name] = evaluate(ckpt, data_split.test)
    return AblationResult(reports, test_hash, windows_hash(data_split.train))
