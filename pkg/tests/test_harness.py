import csv
import json
import math

import numpy as np
import pytest

from vdtraj.data import SyntheticConfig
from vdtraj.errors import ConfigError, EvaluationError, TrainingError
from vdtraj.harness import (
    FT_TO_M, VARIANT_ORDER, Checkpoint, ExperimentConfig, ablate, cv_baseline, evaluate, evaluate_cv,
    evaluate_forecaster, horizon_indices, load_split, load_windows, read_windows, rmse_from_errors,
    save_windows, train, train_on, variant_columns, windows_hash,
)
from vdtraj.harness import training
from vdtraj.harness.cli import main
from vdtraj.harness.datasets import lateral_cue, select_windows
from vdtraj.harness.training import clip_global_norm, scheduled_lr
from vdtraj.predictor import mixture_loss, point_forecast, predict
from vdtraj.preprocess import FEATURES, build_windows
from vdtraj.ssae import SsaeConfig

from helpers import make_track, small_model_config, straight_track


def tiny_config(**train):
    cfg = ExperimentConfig()
    cfg.data.synthetic = SyntheticConfig(n_vehicles=10, duration_s=15.0, lane_change_prob=0.4)
    cfg.data.max_windows = 24
    cfg.ssae = SsaeConfig(sizes=(10, 6, 4), layer_epochs=2, finetune_epochs=2, batch_size=64)
    cfg.model = small_model_config()
    cfg.train.epochs = 3
    cfg.train.batch_size = 8
    for k, v in train.items():
        setattr(cfg.train, k, v)
    return cfg.resolved()


@pytest.fixture(scope="module")
def tiny_split():
    cfg = tiny_config()
    return cfg, load_split(cfg.data, cfg.model.grid)


# ----------------------------------------------------------------- config

def test_variant_masks():
    assert [FEATURES[i] for i in variant_columns("DCS-LSTM")] == ["x", "y"]
    assert [FEATURES[i] for i in variant_columns("K-Model")] == ["x", "y", "dx", "v", "a", "psi", "laneId"]
    assert len(variant_columns("MM-Model")) == 10 == len(variant_columns("VD+DCS-LSTM"))
    with pytest.raises(ConfigError):
        variant_columns("S-LSTM")


def test_config_resolution_per_variant():
    cfg = ExperimentConfig().with_variant("K-Model")
    assert cfg.model.input_dim == 7 and not cfg.model.use_ssae
    vd = ExperimentConfig().with_variant("VD+DCS-LSTM")
    assert vd.model.use_ssae and vd.model.lstm_input_dim == 16
    assert vd.model.encoder_dim == 64 and vd.model.decoder_dim == 128 and vd.train.lr == 1e-3


def test_config_round_trip_and_hash(tmp_path):
    cfg = tiny_config()
    back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back.hash() == cfg.hash()
    cfg.save(tmp_path / "cfg.json")
    assert ExperimentConfig.load(tmp_path / "cfg.json").hash() == cfg.hash()
    assert tiny_config(lr=2e-3).hash() != cfg.hash()


def test_config_errors():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"train": {"loss_mode": "bogus"}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"extra": {}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"train": {"nope": 1}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"variant": "X"})


# -------------------------------------------------------------- datasets

def test_window_selection_hits_fraction():
    cfg = tiny_config()
    cfg.data.synthetic.n_vehicles = 40
    cfg.data.max_windows = None
    cfg.data.lane_change_fraction = 0.3
    ws, _ = load_windows(cfg.data, cfg.model.grid)
    frac = np.mean([w.label != "keep" for w in ws])
    assert abs(frac - 0.3) < 0.05


def test_lateral_cue_filter():
    tracks = [make_track(1, 18.0 + np.linspace(0, 12, 120) ** 1, np.arange(120) * 5.0)]
    ws = build_windows(tracks, stride=10)
    assert all(lateral_cue(w) > 0 for w in ws)
    assert select_windows(ws, None, 0, min_lateral_cue_ft=1e6) == [w for w in ws if w.label == "keep"]


def test_window_store_round_trip(tmp_path, tiny_split):
    _, sp = tiny_split
    save_windows(sp.test, tmp_path / "w.ndjson")
    back = read_windows(tmp_path / "w.ndjson")
    assert windows_hash(back) == windows_hash(sp.test)


# ------------------------------------------------------------ evaluation

def test_horizon_indices_five_hz():
    assert horizon_indices(5.0) == [4, 9, 14, 19, 24]


def test_perfect_and_offset_predictors(tiny_split):
    _, sp = tiny_split
    perfect = evaluate_forecaster(lambda w: w.future, sp.test, 5.0, "oracle")
    assert perfect.rmse_m == [0.0] * 5
    one_metre = evaluate_forecaster(lambda w: w.future + [1.0 / FT_TO_M, 0.0], sp.test, 5.0, "shift")
    np.testing.assert_allclose(one_metre.rmse_m, 1.0, rtol=0, atol=1e-12)


def test_rmse_recomputed_from_dumped_errors(tmp_path, tiny_split):
    _, sp = tiny_split
    rep = evaluate_cv(sp.test)
    rep.write(tmp_path / "cv.json")
    with open(tmp_path / "cv_errors.csv") as fh:
        rows = list(csv.reader(fh))[1:]
    errs = np.array([[float(v) for v in r[1:]] for r in rows])
    brute = [math.sqrt(sum(e * e for e in errs[:, k]) / len(errs)) * 0.3048 for k in range(5)]
    np.testing.assert_allclose(rep.rmse_m, brute, rtol=0, atol=1e-9)
    table = list(csv.reader(open(tmp_path / "cv.csv")))
    assert table[0] == ["horizon", "rmse_m"] and [int(r[0]) for r in table[1:]] == [1, 2, 3, 4, 5]
    assert set(json.loads((tmp_path / "cv.json").read_text())) >= {"rmse_m", "nll", "maneuver_accuracy"}


def test_rmse_from_errors_units():
    m, ft = rmse_from_errors(np.array([[3.0] * 5, [4.0] * 5]))
    assert ft[0] == pytest.approx(math.sqrt(12.5)) and m[0] == pytest.approx(ft[0] * 0.3048)


def test_cv_baseline_examples():
    w = build_windows([straight_track(1, 2, 0.0, 55.0, 120)], stride=20)[0]
    np.testing.assert_allclose(cv_baseline(w), w.future, atol=1e-9)
    still = build_windows([make_track(1, np.full(120, 18.0), np.full(120, 40.0), lane=2, v=0.0)], stride=20)[0]
    assert not cv_baseline(still).any()
    still.padded[0, -2] = True
    with pytest.raises(EvaluationError):
        cv_baseline(still)


def test_empty_test_set():
    with pytest.raises(EvaluationError):
        evaluate_cv([])


# --------------------------------------------------------------- training

def test_schedule_and_clipping():
    cfg = tiny_config(epochs=11, lr_schedule="cosine", lr_min=1e-5)
    assert scheduled_lr(cfg.train, 0) == pytest.approx(1e-3)
    assert scheduled_lr(cfg.train, 10) == pytest.approx(1e-5)
    assert scheduled_lr(tiny_config().train, 7) == 1e-3
    with pytest.raises(ConfigError):
        scheduled_lr(tiny_config(lr_schedule="step").train, 0)
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_global_norm(g, 1.0) == 5.0
    assert math.hypot(g["a"][0], g["b"][0]) == pytest.approx(1.0)


def test_train_deterministic(tiny_split):
    cfg, sp = tiny_split
    a = train_on(cfg, sp.train)
    b = train_on(cfg, sp.train)
    assert a.history == b.history and len(a.history) == 3
    assert all("val_loss" in r for r in a.history)
    for k, v in a.model.state_dict().items():
        assert np.array_equal(v, b.model.state_dict()[k])


def test_loss_modes_give_different_checkpoints(tiny_split):
    cfg, sp = tiny_split
    a = train_on(cfg, sp.train).model.state_dict()
    b = train_on(tiny_config(loss_mode="teacher"), sp.train).model.state_dict()
    assert any(not np.array_equal(a[k], b[k]) for k in a)


def test_nan_loss_names_epoch_and_batch(tiny_split, monkeypatch):
    cfg, sp = tiny_split
    monkeypatch.setattr(training, "loss_fn", lambda mode: lambda out, batch: mixture_loss(out, batch) * math.nan)
    with pytest.raises(TrainingError, match="epoch 0, batch 0"):
        train_on(cfg, sp.train)


def test_checkpoint_round_trip(tmp_path, tiny_split):
    cfg, sp = tiny_split
    ck = train_on(cfg, sp.train)
    ck.save(tmp_path / "ck.json")
    back = Checkpoint.load(tmp_path / "ck.json")
    doc = json.loads((tmp_path / "ck.json").read_text())
    assert doc["version"] == 1 and doc["config_hash"] == cfg.hash() and "enc.weight" in doc["params"]
    assert evaluate(back, sp.test).to_dict() == evaluate(ck, sp.test).to_dict()
    doc["version"] = 99
    with pytest.raises(ConfigError):
        Checkpoint.from_dict(doc)


def test_train_and_evaluate_reports_bit_identical(tiny_split):
    cfg, sp = tiny_split
    r1 = evaluate(train(cfg), sp.test).to_dict()
    r2 = evaluate(train(cfg), sp.test).to_dict()
    assert json.dumps(r1) == json.dumps(r2)
    assert r1["n_windows"] == len(sp.test) and len(r1["rmse_m"]) == 5
    assert all(v >= 0 for v in r1["rmse_m"])


def test_constant_velocity_training_learns_speed():
    """Trained on straight cruising, the +1 s mean tracks each vehicle's own speed."""
    cfg = tiny_config(epochs=200, batch_size=4, lr=3e-3, clip_norm=3.0, val_fraction=0.0,
                      lr_schedule="cosine", lr_min=1e-4)
    # without position noise the lateral sigma collapses and its gradients swamp the clipped step
    cfg.data.synthetic = SyntheticConfig(n_vehicles=40, duration_s=12.0, lane_change_prob=0.0,
                                         speed_range=(30.0, 70.0), noise_std=0.15)
    cfg.data.max_windows = None
    sp = load_split(cfg.data, cfg.model.grid)
    ck = train_on(cfg, sp.train)
    k = horizon_indices(5.0)[0]
    for w in sp.test:
        speed = w.states[0, -1, FEATURES.index("v")]
        mu_y = point_forecast(predict(w, ck.model, ck.pipeline))[k, 1]
        assert abs(mu_y - speed) <= 0.1 * speed


# ---------------------------------------------------------------- ablation

def test_ablation_shares_test_split(tiny_split):
    cfg, _ = tiny_split
    res = ablate(cfg, ["DCS-LSTM", "K-Model"])
    assert list(res.reports) == ["DCS-LSTM", "K-Model"]
    assert len({r.n_windows for r in res.reports.values()}) == 1
    assert "DCS-LSTM" in res.table() and res.test_hash
    with pytest.raises(ConfigError):
        ablate(cfg, ["GAIL-GRU"])
    assert VARIANT_ORDER == ("K-Model", "MM-Model", "DCS-LSTM", "VD+DCS-LSTM")


# -------------------------------------------------------------------- CLI

def test_cli_end_to_end(tmp_path, capsys):
    cfg = tiny_config()
    cfg_path = tmp_path / "cfg.json"
    cfg.save(cfg_path)
    tracks = tmp_path / "tracks.ndjson"
    assert main(["gen-data", "--config", str(cfg_path), "--seed", "1", "--out", str(tracks)]) == 0
    store = tmp_path / "windows.ndjson"
    assert main(["preprocess", "--input", str(tracks), "--out", str(store), "--rate", "2"]) == 0
    assert (tmp_path / "windows.params.json").exists()
    assert main(["pretrain-ssae", "--config", str(cfg_path), "--out", str(tmp_path / "ssae.json")]) == 0
    ck = tmp_path / "ck.json"
    assert main(["train", "--config", str(cfg_path), "--out", str(ck), "--seed", "0",
                 "--loss-mode", "teacher"]) == 0
    rep = tmp_path / "rep.json"
    assert main(["evaluate", "--checkpoint", str(ck), "--data", str(store), "--report", str(rep)]) == 0
    assert len(json.loads(rep.read_text())["rmse_m"]) == 5
    assert main(["baseline-cv", "--data", str(store), "--report", str(tmp_path / "cv.json")]) == 0
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(cfg_path), "--variants", "DCS-LSTM", "--out", str(out)]) == 0
    assert (out / "ablation.json").exists()


def test_cli_reports_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"variant": "nope"}))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x.json")]) == 2
    assert "nope" in capsys.readouterr().err
