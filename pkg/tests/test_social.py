import inspect

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import vdtraj.social as social
from vdtraj.errors import DimensionError
from vdtraj.numerics import Tensor, check_gradients, dilated_conv2d, leaky_relu, square, tsum
from vdtraj.social import (
    ConvPlan, GridSpec, assign_cell, build_social_tensor, init_social_params, resolve_cells, social_pool,
)

from oracles import conv_oracle

SPEC = GridSpec()


def _state(y=0.0, lane=3):
    s = np.zeros(10)
    s[1], s[9] = y, lane
    return s


def _leaky(x, alpha=0.1):
    return np.where(x > 0, x, alpha * x)


def _params(seed=0, cin=64):
    return init_social_params(np.random.default_rng(seed), cin, SPEC, ConvPlan())


# -------------------------------------------------------------- grid spec

def test_grid_spec_geometry():
    assert SPEC.center == (4, 2)
    assert SPEC.rows * SPEC.cell_length == 135.0
    assert SPEC.reach == 67.5
    assert GridSpec.from_dict(SPEC.to_dict()) == SPEC


# ------------------------------------------------------------- assign_cell

def test_assign_cell_examples():
    ego = _state()
    assert assign_cell(ego, ego) == (4, 2)
    assert assign_cell(_state(30.0), ego) == (6, 2)
    assert assign_cell(_state(70.0), ego) is None
    assert assign_cell(_state(-60.0), ego) == (0, 2)


def test_assign_cell_lanes():
    ego = _state(lane=3)
    assert assign_cell(_state(lane=1), ego) == (4, 0)
    assert assign_cell(_state(lane=5), ego) == (4, 4)
    assert assign_cell(_state(lane=6), ego) is None


def test_assign_cell_half_cell_ties_round_away():
    ego = _state()
    assert assign_cell(_state(7.5), ego) == (5, 2)
    assert assign_cell(_state(-7.5), ego) == (3, 2)
    # 67.5 ft would round to row 9 and leaves the grid; just inside stays on row 8
    assert assign_cell(_state(67.5), ego) is None
    assert assign_cell(_state(67.4), ego) == (8, 2)


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.integers(1, 7), st.integers(1, 7), st.floats(-1e4, 1e4))
def test_assign_cell_translation_consistent(dy, lane_n, lane_e, shift):
    n, e = _state(dy, lane_n), _state(0.0, lane_e)
    n2, e2 = n.copy(), e.copy()
    n2[1] += shift
    e2[1] += shift
    # shifts that perturb the rounding by float error are not meaningful here
    if abs(((n2[1] - e2[1]) / 15.0) % 1.0 - 0.5) < 1e-6:
        return
    assert assign_cell(n2, e2) == assign_cell(n, e)


# --------------------------------------------------------------- tensor

def test_social_tensor_ego_only():
    enc = Tensor(np.random.default_rng(0).normal(size=(1, 64)))
    grid, coll = build_social_tensor(enc, np.array([[4, 2]]), np.array([0.0]))
    assert grid.shape == (9, 5, 64) and coll == 0
    np.testing.assert_array_equal(grid.data[4, 2], enc.data[0])
    mask = np.ones((9, 5), bool)
    mask[4, 2] = False
    assert not grid.data[mask].any()


def test_social_tensor_collision_keeps_nearest():
    enc = Tensor(np.arange(4 * 3, dtype=float).reshape(4, 3) + 1.0)
    cells = np.array([[4, 2], [6, 2], [6, 2], [-1, -1]])
    dist = np.array([0.0, 31.0, 29.0, 500.0])
    spec = GridSpec()
    grid, coll = build_social_tensor(enc, cells, dist, spec)
    assert coll == 1
    np.testing.assert_array_equal(grid.data[6, 2], enc.data[2])
    owner, _ = resolve_cells(cells, dist, spec)
    assert sorted(owner[owner >= 0].tolist()) == [0, 2]


def test_social_tensor_sum_identity():
    rng = np.random.default_rng(1)
    enc = Tensor(rng.normal(size=(6, 8)))
    cells = np.array([[4, 2], [0, 0], [8, 4], [5, 1], [5, 1], [-1, -1]])
    dist = np.array([0.0, 60.0, 65.0, 20.0, 25.0, 200.0])
    grid, coll = build_social_tensor(enc, cells, dist)
    kept = enc.data[[0, 1, 2, 3]].sum(0)
    np.testing.assert_allclose(grid.data.sum((0, 1)), kept, atol=1e-12)
    assert coll == 1


def test_ego_wins_center_even_when_tied():
    enc = Tensor(np.eye(2))
    grid, coll = build_social_tensor(enc, np.array([[4, 2], [4, 2]]), np.array([0.0, 0.0]))
    np.testing.assert_array_equal(grid.data[4, 2], [1.0, 0.0])
    assert coll == 1


# ---------------------------------------------------------------- pooling

def test_social_pool_zero():
    params = _params()
    for p in params.values():
        p.data[...] = 0.0
    out = social_pool(Tensor(np.zeros((9, 5, 64))), params)
    assert out.shape == (64,) and not out.data.any()


def test_social_pool_matches_layer_oracle():
    params = _params(2, cin=6)
    x = np.random.default_rng(3).normal(size=(9, 5, 6))
    h = x
    for n, dil in enumerate(ConvPlan().dilations):
        h = _leaky(conv_oracle(h, params[f"social.conv{n}.kernel"].data, dil)
                   + params[f"social.conv{n}.bias"].data)
        assert h.shape[:2] == (9, 5)
    want = _leaky(h.reshape(-1) @ params["social.proj.weight"].data + params["social.proj.bias"].data)
    np.testing.assert_allclose(social_pool(Tensor(x), params).data, want, atol=1e-10, rtol=0)


def test_social_pool_channel_plan():
    params = _params()
    shapes = [params[f"social.conv{n}.kernel"].shape for n in range(3)]
    assert shapes == [(3, 3, 64, 32), (3, 3, 32, 16), (3, 3, 16, 8)]
    assert params["social.proj.weight"].shape == (360, 64)
    assert ConvPlan().dilations == (1, 2, 2)


def test_no_pooling_layer_in_pipeline():
    src = inspect.getsource(social)
    assert "max_pool" not in src and "avg_pool" not in src
    assert not [n for n in dir(social) if "pool" in n.lower() and n != "social_pool"]


def test_social_pool_receptive_field():
    """Perturbing one input cell moves exactly the conv-stack outputs within its reach."""
    plan = ConvPlan()
    params = _params(4, cin=2)
    # positive weights and inputs keep every path active, so no influence cancels
    for p in params.values():
        p.data[...] = np.abs(p.data)
    x = np.abs(np.random.default_rng(5).normal(size=(9, 5, 2))) + 0.1

    def conv_stack(inp):
        h = Tensor(inp)
        for n, dil in enumerate(plan.dilations):
            h = leaky_relu(dilated_conv2d(h, params[f"social.conv{n}.kernel"], dil)
                           + params[f"social.conv{n}.bias"], 0.1)
        return h.data

    reach = sum(plan.dilations)   # half-width of the stacked receptive field
    base = conv_stack(x)
    for r in range(9):
        for c in range(5):
            bumped = x.copy()
            bumped[r, c] += 1.0
            moved = np.any(conv_stack(bumped) != base, axis=-1)
            rows, cols = np.indices((9, 5))
            np.testing.assert_array_equal(moved, (abs(rows - r) <= reach) & (abs(cols - c) <= reach))
    # the centre output sees all nine rows
    seen = {r for r in range(9) if abs(r - SPEC.center[0]) <= reach}
    assert seen == set(range(9))


def test_social_pool_batched_and_errors():
    params = _params(6, cin=4)
    x = np.random.default_rng(7).normal(size=(3, 9, 5, 4))
    batched = social_pool(Tensor(x), params).data
    for b in range(3):
        np.testing.assert_allclose(batched[b], social_pool(Tensor(x[b]), params).data, atol=1e-12)
    with pytest.raises(DimensionError):
        social_pool(Tensor(np.zeros((9, 5, 5))), params)


def test_social_pool_gradients():
    params = init_social_params(np.random.default_rng(8), 2, SPEC, ConvPlan((3, 2, 2), (1, 2, 2), 3, 4))
    x = Tensor(np.random.default_rng(9).normal(size=(9, 5, 2)), requires_grad=True)
    plan = ConvPlan((3, 2, 2), (1, 2, 2), 3, 4)
    err = check_gradients(lambda: tsum(square(social_pool(x, params, plan))), [x, *params.values()],
                          max_entries=20)
    assert err < 1e-4


def test_empty_grid_finite_and_deterministic():
    params = _params(10)
    a = social_pool(Tensor(np.zeros((9, 5, 64))), params).data
    b = social_pool(Tensor(np.zeros((9, 5, 64))), params).data
    assert np.all(np.isfinite(a)) and np.array_equal(a, b)
