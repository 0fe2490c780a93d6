"""Command-line entry point: ``vdtraj <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..data import gen_synthetic, load_tracks, write_tracks
from ..errors import VdtrajError
from ..preprocess import LaneTable, build_windows, fit_minmax, fit_zca, apply_minmax, save_params, window_states
from .ablation import VARIANT_ORDER, ablate
from .config import ExperimentConfig
from .datasets import is_window_store, load_split, read_windows, save_windows
from .evaluation import evaluate, evaluate_cv, plot_rmse
from .training import Checkpoint, fit_pipeline, pretrain_descriptor, train

log = logging.getLogger("vdtraj")


def _load_config(path: str | None) -> ExperimentConfig:
    return ExperimentConfig.load(path) if path else ExperimentConfig().resolved()


def _windows_from(path: str, cfg: ExperimentConfig):
    """Windows from a window store, or cut from a track/NGSIM file with ``cfg``'s settings."""
    if is_window_store(path):
        return read_windows(path)
    d = cfg.data
    return build_windows(load_tracks(path), d.rate, d.t_h, d.t_f, d.stride,
                         LaneTable(d.lane_width, d.lane_centers), cfg.model.grid, d.heading_lag)


def cmd_gen_data(args) -> None:
    cfg = _load_config(args.config)
    tracks = gen_synthetic(cfg.data.synthetic, args.seed)
    write_tracks(tracks, args.out)
    print(f"wrote {len(tracks)} tracks to {args.out}")


def cmd_preprocess(args) -> None:
    cfg = _load_config(args.config)
    d = cfg.data
    windows = build_windows(load_tracks(args.input), args.rate, d.t_h, d.t_f, d.stride,
                            LaneTable(d.lane_width, d.lane_centers), cfg.model.grid, d.heading_lag)
    save_windows(windows, args.out)
    states = window_states(windows)
    mm = fit_minmax(states)
    save_params(Path(args.out).with_suffix(".params.json"), mm, fit_zca(apply_minmax(states, mm), cfg.zca_eps))
    print(f"wrote {len(windows)} windows to {args.out}")


def cmd_pretrain_ssae(args) -> None:
    cfg = _load_config(args.config)
    data_split = load_split(cfg.data, cfg.model.grid)
    pipeline = fit_pipeline(cfg, data_split.train)
    model = pretrain_descriptor(cfg, pipeline, data_split.train, cfg.train.seed)
    model.save(args.out)
    print(f"wrote SSAE to {args.out}")


def cmd_train(args) -> None:
    cfg = _load_config(args.config)
    if args.loss_mode:
        cfg.train.loss_mode = args.loss_mode

    def progress(rec):
        log.info("epoch %(epoch)d train %(train_loss).4f", rec)

    ckpt = train(cfg, seed=args.seed, progress=progress)
    ckpt.save(args.out)
    print(f"wrote checkpoint {args.out} (config {ckpt.config_hash})")


def cmd_evaluate(args) -> None:
    ckpt = Checkpoint.load(args.checkpoint)
    if args.data:
        windows = _windows_from(args.data, ckpt.config)
    else:
        windows = load_split(ckpt.config.data, ckpt.config.model.grid).test
    rep = evaluate(ckpt, windows, weighted=args.weighted)
    rep.write(args.report)
    if args.plot:
        plot_rmse({rep.model: rep}, args.plot)
    print(json.dumps(rep.to_dict(), indent=2))


def cmd_baseline_cv(args) -> None:
    cfg = _load_config(args.config)
    windows = (_windows_from(args.data, cfg) if args.data
               else load_split(cfg.data, cfg.model.grid).test)
    rep = evaluate_cv(windows, hz=10.0 / cfg.data.rate)
    rep.write(args.report)
    print(json.dumps(rep.to_dict(), indent=2))


def cmd_ablate(args) -> None:
    cfg = _load_config(args.config)
    variants = args.variants.split(",") if args.variants else list(VARIANT_ORDER)
    result = ablate(cfg, variants, seed=args.seed)
    result.write(args.out)
    if args.plot:
        plot_rmse(result.reports, Path(args.out) / "rmse.svg")
    print(result.table())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vdtraj", description="Trajectory forecasting experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="generate a synthetic highway track store")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("preprocess", help="cut windows from tracks and fit normalization")
    s.add_argument("--input", required=True, help="NGSIM CSV or track store")
    s.add_argument("--out", required=True, help="window store to write")
    s.add_argument("--rate", type=int, default=2, help="downsampling factor")
    s.add_argument("--config")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("pretrain-ssae", help="greedy + fine-tuned SSAE pretraining")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain_ssae)

    s = sub.add_parser("train", help="end-to-end training")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--loss-mode", choices=("mixture", "teacher"))
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="RMSE/NLL/accuracy of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", help="window store or track file (default: the config's test split)")
    s.add_argument("--report", required=True)
    s.add_argument("--weighted", action="store_true", help="probability-weighted point forecast")
    s.add_argument("--plot", help="optional SVG path")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", help="train and compare input variants")
    s.add_argument("--config")
    s.add_argument("--variants", help="comma-separated variant tags")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--plot", action="store_true")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("baseline-cv", help="constant-velocity baseline")
    s.add_argument("--data")
    s.add_argument("--config")
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_baseline_cv)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except VdtrajError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0
