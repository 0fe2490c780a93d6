"""Road occupancy grid and dilated-convolution social pooling."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionError
from .numerics import Tensor, dilated_conv2d, gather_rows, leaky_relu, linear

# column positions inside a 10-feature state vector
_Y, _LANE = 1, 9


@dataclass(frozen=True)
class GridSpec:
    rows: int = 9
    cols: int = 5
    cell_length: float = 15.0
    lane_width: float = 12.0

    @property
    def center(self) -> tuple[int, int]:
        return self.rows // 2, self.cols // 2

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def reach(self) -> float:
        """Largest |Δy| (exclusive) that still maps into the grid."""
        return (self.rows // 2 + 0.5) * self.cell_length

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(**d)


def _round_half_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def assign_cell(neighbor, ego, spec: GridSpec = GridSpec()) -> tuple[int, int] | None:
    """Grid cell of ``neighbor`` relative to ``ego`` (both 10-feature states at t).

    Columns index lanes (ego lane in the middle), rows index 15 ft slices along
    the road with row ``rows-1`` farthest ahead.
    """
    neighbor, ego = np.asarray(neighbor), np.asarray(ego)
    r0, c0 = spec.center
    col = c0 + int(round(neighbor[_LANE] - ego[_LANE]))
    if not 0 <= col < spec.cols:
        return None
    row = r0 + _round_half_away((neighbor[_Y] - ego[_Y]) / spec.cell_length)
    if not 0 <= row < spec.rows:
        return None
    return row, col


def resolve_cells(cells: np.ndarray, distances: np.ndarray, spec: GridSpec = GridSpec()):
    """Map each grid cell to at most one vehicle, nearest to the ego winning.

    ``cells`` is (n, 2) with -1 rows for vehicles outside the grid; vehicle 0 is
    the ego.  Returns (owner, collisions) where ``owner`` is a flat array of
    length rows*cols holding a vehicle index or -1.
    """
    owner = np.full(spec.n_cells, -1, dtype=np.int64)
    best = np.full(spec.n_cells, np.inf)
    collisions = 0
    # ego first so it always owns the centre cell
    order = [0] + sorted(range(1, len(cells)), key=lambda i: (distances[i], i))
    for i in order:
        r, c = cells[i]
        if r < 0:
            continue
        k = r * spec.cols + c
        if owner[k] >= 0:
            collisions += 1
            continue
        owner[k] = i
        best[k] = distances[i]
    return owner, collisions


def build_social_tensor(encodings: Tensor, cells: np.ndarray, distances: np.ndarray,
                        spec: GridSpec = GridSpec()) -> tuple[Tensor, int]:
    """Scatter per-vehicle encodings (n×E) into a rows×cols×E grid.

    Returns the grid tensor and the number of vehicles dropped by cell collisions.
    """
    owner, collisions = resolve_cells(np.asarray(cells), np.asarray(distances), spec)
    grid = gather_rows(encodings, owner).reshape(spec.rows, spec.cols, encodings.shape[1])
    return grid, collisions


@dataclass(frozen=True)
class ConvPlan:
    channels: tuple[int, ...] = (32, 16, 8)
    dilations: tuple[int, ...] = (1, 2, 2)
    kernel: int = 3
    out_dim: int = 64


def init_social_params(rng: np.random.Generator, in_channels: int, spec: GridSpec, plan: ConvPlan,
                       dtype=np.float64) -> dict[str, Tensor]:
    params = {}
    cin = in_channels
    for n, cout in enumerate(plan.channels):
        bound = 1.0 / math.sqrt(plan.kernel * plan.kernel * cin)
        params[f"social.conv{n}.kernel"] = rng.uniform(-bound, bound, (plan.kernel, plan.kernel, cin, cout))
        params[f"social.conv{n}.bias"] = rng.uniform(-bound, bound, cout)
        cin = cout
    flat = spec.n_cells * cin
    bound = 1.0 / math.sqrt(flat)
    params["social.proj.weight"] = rng.uniform(-bound, bound, (flat, plan.out_dim))
    params["social.proj.bias"] = rng.uniform(-bound, bound, plan.out_dim)
    return {k: Tensor(v.astype(dtype), requires_grad=True, name=k) for k, v in params.items()}


def social_pool(grid: Tensor, params: dict[str, Tensor], plan: ConvPlan = ConvPlan(),
                alpha: float = 0.1) -> Tensor:
    """Conv stack over a (B,)rows×cols×E social tensor, flattened and projected.

    Every conv keeps the spatial extent; there is no pooling/subsampling step.
    """
    single = grid.ndim == 3
    x = grid.reshape((1,) + grid.shape) if single else grid
    k0 = params["social.conv0.kernel"]
    if x.ndim != 4 or x.shape[-1] != k0.shape[2]:
        raise DimensionError(f"social tensor shape {grid.shape} does not fit kernels {k0.shape}")
    for n, dil in enumerate(plan.dilations):
        x = dilated_conv2d(x, params[f"social.conv{n}.kernel"], dilation=dil, padding="same")
        x = leaky_relu(x + params[f"social.conv{n}.bias"], alpha)
    B = x.shape[0]
    flat = x.reshape(B, -1)
    out = leaky_relu(linear(flat, params["social.proj.weight"], params["social.proj.bias"]), alpha)
    return out.reshape(-1) if single else out
