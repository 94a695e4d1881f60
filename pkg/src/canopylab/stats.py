"""Sliding-circle rasterization of a point cloud into statistics layers.

For every cell the neighbourhood is the closed disk of ``radius`` around the
cell centre.  Over the points in that disk we accumulate min, max, mean and
population standard deviation of elevation, returns-per-pulse and intensity,
plus the point count.  Cells with an empty neighbourhood are nodata.

Points are visited in a canonical order (sorted by their field values) so the
accumulation order per cell does not depend on input order, banding or
thread count; this makes the output bit-reproducible.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ._parallel import for_each_band
from .errors import InputError, ParameterError
from .pointcloud import PointCloud
from .raster import GridSpec, MultibandRaster

logger = logging.getLogger(__name__)

QUANTITIES = ("elevation", "num_returns", "intensity")
STATISTICS = ("min", "max", "mean", "std")
COUNT_BAND = "count"
BAND_NAMES = tuple(f"{q}.{s}" for q in QUANTITIES for s in STATISTICS) + (COUNT_BAND,)
PSEUDO_RGB_BANDS = ("elevation.mean", "num_returns.max", "intensity.std")

DEFAULT_CELL_SIZE = 0.5
DEFAULT_RADIUS = 0.75


@dataclass(frozen=True, eq=False)
class StatsStack:
    multiband: MultibandRaster
    radius: float | None = None

    def __post_init__(self):
        if self.multiband.names != BAND_NAMES:
            raise InputError(
                f"statistics stack needs bands {list(BAND_NAMES)}, got {list(self.multiband.names)}"
            )

    @property
    def spec(self) -> GridSpec:
        return self.multiband.spec

    @property
    def nodata(self) -> np.ndarray:
        return self.multiband.nodata

    @property
    def valid(self) -> np.ndarray:
        return self.multiband.valid

    def band(self, name: str) -> np.ndarray:
        return self.multiband.band(name)


def _canonical_order(cloud: PointCloud) -> np.ndarray:
    return np.lexsort(
        (cloud.return_number, cloud.num_returns, cloud.intensity, cloud.z, cloud.y, cloud.x)
    )


def _neighbour_offsets(spec: GridSpec, radius: float) -> list[tuple[int, int]]:
    """Cell offsets from a point's home cell whose centre can lie within radius."""
    cs = spec.cell_size
    ring = math.ceil(radius / cs + 0.5)
    slack = radius + 1e-6 * cs
    offsets = []
    for dr in range(-ring, ring + 1):
        for dc in range(-ring, ring + 1):
            gap_r = max(0.0, abs(dr) * cs - cs / 2)
            gap_c = max(0.0, abs(dc) * cs - cs / 2)
            if math.hypot(gap_r, gap_c) <= slack:
                offsets.append((dr, dc))
    return offsets


def rasterize_stats(
    cloud: PointCloud,
    spec: GridSpec,
    radius: float = DEFAULT_RADIUS,
    threads: int | None = 1,
) -> StatsStack:
    if not (radius > 0 and math.isfinite(radius)):
        raise ParameterError(f"radius must be > 0, got {radius}")

    order = _canonical_order(cloud)
    px = cloud.x[order]
    py = cloud.y[order]
    quantities = [
        cloud.z[order],
        cloud.num_returns[order].astype(np.float64),
        cloud.intensity[order].astype(np.float64),
    ]
    n_pts = len(px)
    home_r, home_c = spec.cells_of(px, py)
    offsets = _neighbour_offsets(spec, radius)
    reach = max(abs(dr) for dr, _ in offsets)
    r2 = radius * radius
    W, H = spec.width, spec.height

    out = np.zeros((len(BAND_NAMES),) + spec.shape)
    nodata = np.ones(spec.shape, bool)

    def work(r0: int, r1: int) -> None:
        idx = np.flatnonzero((home_r >= r0 - reach) & (home_r < r1 + reach))
        cells, members = [], []
        for dr, dc in offsets:
            r = home_r[idx] + dr
            c = home_c[idx] + dc
            keep = (r >= r0) & (r < r1) & (c >= 0) & (c < W)
            r, c, pts = r[keep], c[keep], idx[keep]
            dx = px[pts] - spec.center_x(c)
            dy = py[pts] - spec.center_y(r)
            hit = dx * dx + dy * dy <= r2
            cells.append((r[hit] - r0) * W + c[hit])
            members.append(pts[hit])
        cell = np.concatenate(cells) if cells else np.zeros(0, np.int64)
        pts = np.concatenate(members) if members else np.zeros(0, np.int64)
        # sort by (cell, canonical point index): per-cell accumulation order is fixed
        srt = np.argsort(cell * max(n_pts, 1) + pts, kind="stable")
        cell, pts = cell[srt], pts[srt]

        ncell = (r1 - r0) * W
        n = np.bincount(cell, minlength=ncell).astype(np.float64)
        empty = n == 0
        safe_n = np.where(empty, 1.0, n)
        planes = []
        for q in quantities:
            v = q[pts]
            total = np.zeros(ncell)
            np.add.at(total, cell, v)
            mean = total / safe_n
            dev = v - mean[cell]
            sq = np.zeros(ncell)
            np.add.at(sq, cell, dev * dev)
            std = np.sqrt(sq / safe_n)
            lo = np.full(ncell, np.inf)
            hi = np.full(ncell, -np.inf)
            np.minimum.at(lo, cell, v)
            np.maximum.at(hi, cell, v)
            # rounding in total/n can step outside [min, max] for near-constant sets
            mean = np.minimum(np.maximum(mean, lo), hi)
            planes += [lo, hi, mean, std]
        planes.append(n)
        block = np.stack(planes)
        block[:, empty] = 0.0
        out[:, r0:r1, :] = block.reshape(len(BAND_NAMES), r1 - r0, W)
        nodata[r0:r1, :] = empty.reshape(r1 - r0, W)

    for_each_band(work, H, threads)
    logger.debug(
        "rasterized %d points onto %dx%d grid (radius %.3g m): %d valid cells",
        n_pts, H, W, radius, int((~nodata).sum()),
    )
    return StatsStack(MultibandRaster(spec, BAND_NAMES, out, nodata), radius)


def grid_for_cloud(cloud: PointCloud, cell_size: float = DEFAULT_CELL_SIZE) -> GridSpec:
    """Smallest grid aligned to multiples of ``cell_size`` covering the cloud."""
    b = cloud.bounds
    if b is None:
        raise InputError("cannot derive a grid from an empty point cloud")
    x0 = math.floor(b.min_x / cell_size) * cell_size
    y0 = (math.floor(b.max_y / cell_size) + 1) * cell_size
    width = max(1, math.floor((b.max_x - x0) / cell_size) + 1)
    height = max(1, math.floor((y0 - b.min_y) / cell_size) + 1)
    return GridSpec(x0, y0, cell_size, width, height)


def stack_to_pseudo_rgb(stack: StatsStack) -> MultibandRaster:
    """Red: mean elevation, green: max returns per pulse, blue: intensity std."""
    return stack.multiband.select(PSEUDO_RGB_BANDS)
