"""From synthetic traffic to a maneuver-aware forecast, in one short run.

Run with ``python3 demos/02_forecast.py`` (a few minutes on one core). The
script generates highway tracks, cuts 8 s windows, trains the descriptor
model briefly and compares it with constant-velocity extrapolation.
"""

from vdtraj.data import MANEUVERS
from vdtraj.harness import ExperimentConfig, evaluate, evaluate_cv, load_split, train_on
from vdtraj.predictor import point_forecast, predict

cfg = ExperimentConfig()
syn = cfg.data.synthetic
syn.n_vehicles, syn.lane_change_prob, syn.noise_std, syn.speed_range = 150, 0.8, 0.15, (50.0, 65.0)
cfg.data.lane_change_fraction = 0.3     # three in ten windows contain a lane change
cfg.data.min_lateral_cue_ft = 2.0       # the change must already be visible in the history
cfg.ssae.layer_epochs = cfg.ssae.finetune_epochs = 20
tc = cfg.train
tc.epochs, tc.batch_size, tc.loss_mode, tc.dtype = 60, 8, "teacher", "float32"
tc.clip_norm, tc.lr_schedule, tc.lr_min, tc.val_fraction = 3.0, "cosine", 1e-4, 0.0
cfg = cfg.resolved()

data = load_split(cfg.data, cfg.model.grid)
labels = [w.label for w in data.train]
print(f"{len(data.train)} training / {len(data.test)} test windows; "
      + ", ".join(f"{m}: {labels.count(m)}" for m in MANEUVERS))

# Each window holds the ego plus every neighbour that lands on the 9x5 grid.
w = data.test[0]
on_grid = [tuple(c) for c in w.cells.tolist() if c[0] >= 0]
print(f"window {w.window_id}: {w.n_vehicles} vehicles, ego label {w.label!r}, "
      f"{len(set(on_grid))} of 45 cells occupied ({len(on_grid) - len(set(on_grid))} share a cell)")

ckpt = train_on(cfg, data.train, seed=0,
                progress=lambda r: r["epoch"] % 10 == 0 and print(f"  epoch {r['epoch']:3d}  loss {r['train_loss']:8.2f}"))

model, cv = evaluate(ckpt, data.test), evaluate_cv(data.test)
print("\nRMSE (m)   " + "".join(f"{k}s".rjust(8) for k in model.horizons_s))
print("model      " + "".join(f"{v:8.2f}" for v in model.rmse_m))
print("const. vel " + "".join(f"{v:8.2f}" for v in cv.rmse_m))
print(f"maneuver accuracy {model.accuracy:.3f}")

# One forecast in detail: branch probabilities and the +5 s point estimate.
lc = next((x for x in data.test if x.label != "keep"), data.test[0])
dist = predict(lc, ckpt.model, ckpt.pipeline)
probs = ", ".join(f"{m} {p:.2f}" for m, p in zip(MANEUVERS, dist.maneuver_probs))
end = point_forecast(dist)[-1]
print(f"\n{lc.window_id} (true {lc.label}): {probs}")
print(f"+5 s forecast ({end[0]:.1f}, {end[1]:.1f}) ft vs truth "
      f"({lc.future[-1, 0]:.1f}, {lc.future[-1, 1]:.1f}) ft")
