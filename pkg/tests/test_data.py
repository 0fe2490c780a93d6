import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vdtraj.data import (
    NGSIM_COLUMNS, SyntheticConfig, Track, gen_synthetic, label_maneuver, lane_change_profile,
    load_tracks, parse_ngsim, read_tracks, split, write_ngsim_csv, write_tracks,
)
from vdtraj.errors import ConfigError, FormatError, SplitError

from helpers import make_track, straight_track

HEADER = ",".join(NGSIM_COLUMNS)


def _row(vid, frame, x=10.0, y=100.0, lane=2):
    # same column order as HEADER
    return f"{vid},{frame},{x},{y},40.0,0.0,{lane},2,6.0,15.0"


def _csv(tmp_path, *rows, header=HEADER, name="trk.csv"):
    path = tmp_path / name
    path.write_text("\n".join([header, *rows]) + "\n")
    return path


# ----------------------------------------------------------------- parsing

def test_parse_two_rows_one_track(tmp_path):
    res = parse_ngsim(_csv(tmp_path, _row(7, 1), _row(7, 2, y=104.0)))
    assert len(res.tracks) == 1 and res.skipped_rows == 0
    tr = res.tracks[0]
    assert tr.vehicle_id == 7 and len(tr) == 2
    assert tr.y.tolist() == [100.0, 104.0]
    assert tr.site == "trk"


def test_parse_skips_non_numeric(tmp_path):
    bad = _row(7, 2).replace(",10.0,", ",abc,", 1)
    res = parse_ngsim(_csv(tmp_path, _row(7, 1), bad, _row(7, 3)))
    assert res.skipped_rows == 1
    # the skipped row leaves a gap, which splits the vehicle
    assert [len(t) for t in res.tracks] == [1, 1]


def test_parse_gap_splits_runs(tmp_path):
    frames = [1, 2, 3, 7, 8, 20]
    res = parse_ngsim(_csv(tmp_path, *(_row(3, f) for f in frames)))
    assert [t.frame.tolist() for t in res.tracks] == [[1, 2, 3], [7, 8], [20]]


def test_parse_column_order_free(tmp_path):
    cols = list(NGSIM_COLUMNS)[::-1]
    vals = dict(zip(NGSIM_COLUMNS, _row(5, 9).split(",")))
    path = _csv(tmp_path, ",".join(vals[c] for c in cols), header=",".join(cols + ["Extra"]))
    tr = parse_ngsim(path).tracks[0]
    assert (tr.vehicle_id, int(tr.frame[0]), tr.x[0]) == (5, 9, 10.0)


def test_parse_errors(tmp_path):
    with pytest.raises(FormatError, match="Lane_ID"):
        parse_ngsim(_csv(tmp_path, header=HEADER.replace("Lane_ID", "Lane")))
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(FormatError):
        parse_ngsim(empty)
    with pytest.raises(FormatError):
        parse_ngsim(_csv(tmp_path, name="header_only.csv"))


def test_csv_round_trip(tmp_path):
    tracks = gen_synthetic(SyntheticConfig(n_vehicles=4, duration_s=3.0, noise_std=0.3), seed=2)
    path = tmp_path / "rt.csv"
    write_ngsim_csv(tracks, path)
    back = parse_ngsim(path, site="synthetic").tracks
    assert len(back) == len(tracks)
    assert all(a.same_as(b) for a, b in zip(tracks, back))


def test_track_store_round_trip(tmp_path):
    tracks = gen_synthetic(SyntheticConfig(n_vehicles=3, duration_s=2.0), seed=0)
    path = tmp_path / "tracks.ndjson"
    write_tracks(tracks, path)
    back = load_tracks(path)
    assert all(a.same_as(b) for a, b in zip(tracks, back))
    path.write_text('{"vehicleId": 1}\n')
    with pytest.raises(FormatError):
        read_tracks(path)


def test_track_rejects_unordered_frames():
    with pytest.raises(ValueError):
        make_track(1, [0.0, 0.0], [0.0, 1.0], frame0=0).__class__(
            1, [2, 1], [0, 0], [0, 1], [0, 0], [0, 0], [1, 1], [6, 6], [15, 15], [2, 2])


# ------------------------------------------------------------------ labels

def _lane_track(lanes):
    n = len(lanes)
    return make_track(1, np.full(n, 10.0), np.arange(n) * 5.0, lane=np.array(lanes))


@pytest.mark.parametrize("lanes, label", [
    ([3, 3, 3], "keep"),
    ([3, 3, 2], "left"),
    ([2, 3, 4], "right"),
    ([4, 3, 2], "left"),
])
def test_label_rules(lanes, label):
    assert label_maneuver(_lane_track(lanes), 0, 2) == label


def test_label_needs_future():
    assert label_maneuver(_lane_track([3, 3, 3]), 1, 5) is None


@settings(max_examples=25, deadline=None)
@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.lists(st.integers(1, 6), min_size=4, max_size=4))
def test_label_translation_invariant(dx, dy, lanes):
    tr = _lane_track(lanes)
    moved = Track(1, tr.frame, tr.x + dx, tr.y + dy, tr.v, tr.a, tr.lane, tr.width, tr.length, tr.vclass)
    assert label_maneuver(moved, 0, 3) == label_maneuver(tr, 0, 3)


# --------------------------------------------------------------- synthetic

def test_synthetic_constant_velocity():
    cfg = SyntheticConfig(n_vehicles=6, lane_change_prob=0.0, noise_std=0.0, duration_s=5.0)
    for tr in gen_synthetic(cfg, seed=1):
        t = (tr.frame - tr.frame[0]) / 10.0
        np.testing.assert_allclose(tr.y, tr.y[0] + tr.v[0] * t, rtol=0, atol=1e-9)
        assert np.all(tr.lane == tr.lane[0])


def test_synthetic_lane_change_one_lane_width():
    cfg = SyntheticConfig(n_vehicles=20, lane_change_prob=1.0, duration_s=20.0)
    changed = 0
    for tr in gen_synthetic(cfg, seed=3):
        if tr.lane[0] == tr.lane[-1]:
            continue   # onset late enough that the transition was cut off
        changed += 1
        assert abs(int(tr.lane[-1]) - int(tr.lane[0])) == 1
        np.testing.assert_allclose(abs(tr.x[-1] - tr.x[0]), 12.0, atol=0.12 + 1e-9)
    assert changed > 10


def test_lane_change_profile_closed_form():
    tau = np.array([-1.0, 0.0, 1.5, 3.0, 4.0])
    prof = lane_change_profile(tau, 3.0, 12.0)
    assert prof[0] == 0.0 and prof[-1] == 12.0 and prof[3] == 12.0
    assert prof[2] == pytest.approx(6.0)
    inner = lane_change_profile(np.linspace(0.01, 2.99, 50), 3.0, 12.0)
    assert np.all(np.diff(inner) > 0)


def test_synthetic_deterministic():
    cfg = SyntheticConfig(n_vehicles=8, noise_std=0.5)
    a, b = gen_synthetic(cfg, 11), gen_synthetic(cfg, 11)
    assert all(x.same_as(y) for x, y in zip(a, b))
    c = gen_synthetic(cfg, 12)
    assert not all(x.same_as(y) for x, y in zip(a, c))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.floats(0.0, 0.5))
def test_synthetic_speed_consistent_with_positions(seed, sigma):
    cfg = SyntheticConfig(n_vehicles=3, noise_std=sigma, duration_s=4.0)
    for tr in gen_synthetic(cfg, seed):
        fd = np.hypot(np.diff(tr.x), np.diff(tr.y)) * 10.0
        mid = 0.5 * (tr.v[1:] + tr.v[:-1])
        # 3 sigma of position noise on each endpoint, scaled by the rate, plus curvature slack
        assert np.all(np.abs(fd - mid) <= 2 * 3 * sigma * 10.0 + 0.5)


def test_synthetic_config_errors():
    with pytest.raises(ConfigError):
        gen_synthetic(SyntheticConfig(n_lanes=0), 0)
    with pytest.raises(ConfigError):
        SyntheticConfig.from_dict({"lanes": 3})


# ------------------------------------------------------------------- split

class _W:
    def __init__(self, ego_id, k, site="s"):
        self.ego_id, self.k, self.site = ego_id, k, site


def test_split_eighty_twenty():
    ws = [_W(v, k) for v in range(10) for k in range(3)]
    sp = split(ws, 0.8, seed=0)
    assert len(sp.train_vehicles) == 8 and len(sp.test_vehicles) == 2
    assert len(sp.train) + len(sp.test) == 30


def test_split_half_two_vehicles_and_errors():
    sp = split([_W(1, 0), _W(2, 0)], 0.5, seed=4)
    assert len(sp.train) == 1 and len(sp.test) == 1
    with pytest.raises(SplitError):
        split([_W(1, 0), _W(1, 1)], 0.8)
    with pytest.raises(SplitError):
        split([_W(1, 0), _W(2, 0)], 1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 5)), min_size=2, max_size=80, unique=True),
       st.floats(0.05, 0.95), st.integers(0, 100))
def test_split_disjoint_and_complete(pairs, fraction, seed):
    ws = [_W(v, k) for v, k in pairs]
    if len({w.ego_id for w in ws}) < 2:
        return
    sp = split(ws, fraction, seed)
    train_ids = {id(w) for w in sp.train}
    test_ids = {id(w) for w in sp.test}
    assert not train_ids & test_ids
    assert train_ids | test_ids == {id(w) for w in ws}
    assert not {w.ego_id for w in sp.train} & {w.ego_id for w in sp.test}
    again = split(ws, fraction, seed)
    assert [id(w) for w in again.train] == [id(w) for w in sp.train]


def test_split_keeps_sites_apart():
    ws = [_W(1, 0, "a"), _W(1, 0, "b"), _W(2, 0, "a")]
    sp = split(ws, 0.5, seed=0)
    assert len(sp.train_vehicles) + len(sp.test_vehicles) == 3


def test_straight_helper_is_ten_hz():
    tr = straight_track(1, 2, 0.0, 50.0, 11)
    assert tr.y[-1] == pytest.approx(50.0)
