"""Desk-scale synthetic urban scenes: LiDAR returns, 4-band imagery and truth.

A scene is a flat ground plane with circular tree crowns and rectangular flat
roofs.  Pulses over a crown penetrate it: with some probability a pulse yields
several returns spread down through the canopy, the last one possibly reaching
the ground.  Roofs and ground give one return at constant height, except for a
small chance of a roof/ground double return right at a roof edge.

Imagery is rendered per epoch on a coarser grid (pixel value = class spectrum
at the pixel centre + Gaussian noise, rounded to 8 bits).  Between epochs a
chosen fraction of tree pixels is removed (whole crowns at a time), standing
in for storm damage; removed crowns render as ground.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SceneSpecError
from .pointcloud import PointCloud
from .raster import BinaryMask, GridSpec, MultibandRaster
from .svm import IMAGE_BANDS

logger = logging.getLogger(__name__)

TREE, BUILDING, GROUND = "tree", "building", "ground"

DEFAULT_SPECTRA = {
    TREE: (150.0, 55.0, 80.0, 55.0),
    BUILDING: (110.0, 125.0, 120.0, 130.0),
    GROUND: (90.0, 100.0, 95.0, 80.0),
}

INTENSITY = {TREE: (40.0, 12.0), BUILDING: (140.0, 15.0), GROUND: (90.0, 12.0)}

_PLACEMENT_TRIES = 2000


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Scene geometry, physics and imagery parameters.

    ``width``/``height`` count LiDAR statistics cells of ``cell_size`` metres;
    imagery uses ``image_cell_size``.  Explicit ``trees`` are
    ``(cx, cy, radius)`` and explicit ``buildings`` are
    ``(xmin, ymin, xmax, ymax)``; when given they replace random placement.
    ``removal_fractions[k]`` is the share of tree pixels removed between epoch
    ``k`` and ``k + 1``.
    """

    width: int = 256
    height: int = 256
    cell_size: float = 0.5
    image_cell_size: float = 1.0
    origin_x: float = 0.0
    origin_y: float | None = None
    tree_count: int = 30
    tree_radius: tuple[float, float] = (4.0, 7.5)
    canopy_height: tuple[float, float] = (9.0, 16.0)
    canopy_spread: float = 6.0
    multi_return_prob: float = 0.6
    ground_hit_prob: float = 0.5
    building_count: int = 8
    building_size: tuple[float, float] = (8.0, 18.0)
    building_height: tuple[float, float] = (6.0, 20.0)
    edge_multi_return_prob: float = 0.1
    edge_width: float = 0.25
    ground_z: float = 2.0
    pulse_density: float = 10.0
    spectra: dict = field(default_factory=lambda: dict(DEFAULT_SPECTRA))
    noise_sigma: float = 20.0
    years: tuple[int, ...] = (2017,)
    removal_fractions: tuple[float, ...] = ()
    lidar_epoch: int = 0
    trees: tuple | None = None
    buildings: tuple | None = None
    margin: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or not self.cell_size > 0:
            raise SceneSpecError("grid must be non-empty with positive cell size")
        extent_x = self.width * self.cell_size
        extent_y = self.height * self.cell_size
        ratio = self.image_cell_size / self.cell_size
        if not (ratio > 0 and abs(extent_x / self.image_cell_size - round(extent_x / self.image_cell_size)) < 1e-9
                and abs(extent_y / self.image_cell_size - round(extent_y / self.image_cell_size)) < 1e-9):
            raise SceneSpecError("image grid must tile the scene extent exactly")
        names = set(self.spectra)
        if names != {TREE, BUILDING, GROUND}:
            raise SceneSpecError(f"spectra needed for {TREE}, {BUILDING}, {GROUND}; got {sorted(names)}")
        means = [tuple(self.spectra[k]) for k in (TREE, BUILDING, GROUND)]
        if any(len(m) != 4 for m in means) or len(set(means)) != 3:
            raise SceneSpecError("class spectra must be four-band and pairwise distinct")
        if self.canopy_height[0] < self.canopy_spread:
            raise SceneSpecError("minimum canopy height must be at least the canopy spread")
        if not 0 <= self.lidar_epoch < len(self.years):
            raise SceneSpecError("lidar_epoch must index into years")
        if list(self.years) != sorted(set(self.years)):
            raise SceneSpecError("years must be strictly increasing")
        if len(self.removal_fractions) != len(self.years) - 1:
            raise SceneSpecError("need one removal fraction per consecutive pair of years")
        if any(not 0 <= f <= 1 for f in self.removal_fractions):
            raise SceneSpecError("removal fractions must lie in [0, 1]")
        for p in (self.multi_return_prob, self.ground_hit_prob, self.edge_multi_return_prob):
            if not 0 <= p <= 1:
                raise SceneSpecError("probabilities must lie in [0, 1]")

    @property
    def top(self) -> float:
        return self.height * self.cell_size if self.origin_y is None else self.origin_y

    def stats_grid(self) -> GridSpec:
        return GridSpec(self.origin_x, self.top, self.cell_size, self.width, self.height)

    def image_grid(self) -> GridSpec:
        return GridSpec(
            self.origin_x, self.top, self.image_cell_size,
            round(self.width * self.cell_size / self.image_cell_size),
            round(self.height * self.cell_size / self.image_cell_size),
        )


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    spec: SyntheticSceneSpec
    cloud: PointCloud
    trees: np.ndarray          # (T, 3): cx, cy, radius
    buildings: np.ndarray      # (B, 4): xmin, ymin, xmax, ymax
    present: np.ndarray        # (epochs, T) bool: crown standing in epoch
    images: dict[int, MultibandRaster]
    truths: dict[int, BinaryMask]

    @property
    def years(self) -> tuple[int, ...]:
        return self.spec.years

    def truth_on(self, grid: GridSpec, year: int) -> BinaryMask:
        """Tree truth for ``year`` rasterized at cell centres of ``grid``."""
        k = self.years.index(year)
        xs, ys = _centres(grid)
        return BinaryMask(grid, _in_trees(xs, ys, self.trees[self.present[k]]))


def _centres(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    return np.meshgrid(grid.center_x(np.arange(grid.width)), grid.center_y(np.arange(grid.height)))


def _tree_index(x: np.ndarray, y: np.ndarray, trees: np.ndarray) -> np.ndarray:
    """Index of the crown covering each point, -1 where none."""
    out = np.full(x.shape, -1, dtype=np.int64)
    for k, (cx, cy, r) in enumerate(trees):
        out[((x - cx) ** 2 + (y - cy) ** 2 <= r * r) & (out < 0)] = k
    return out


def _in_trees(x, y, trees) -> np.ndarray:
    return _tree_index(x, y, trees) >= 0


def _building_index(x: np.ndarray, y: np.ndarray, buildings: np.ndarray) -> np.ndarray:
    out = np.full(x.shape, -1, dtype=np.int64)
    for k, (x0, y0, x1, y1) in enumerate(buildings):
        out[(x >= x0) & (x < x1) & (y >= y0) & (y < y1) & (out < 0)] = k
    return out


def _disk_rect_gap(tree, rect) -> float:
    cx, cy, r = tree
    x0, y0, x1, y1 = rect
    dx = max(x0 - cx, 0.0, cx - x1)
    dy = max(y0 - cy, 0.0, cy - y1)
    return math.hypot(dx, dy) - r


def _rect_gap(a, b) -> float:
    dx = max(b[0] - a[2], a[0] - b[2], 0.0)
    dy = max(b[1] - a[3], a[1] - b[3], 0.0)
    if dx == 0.0 and dy == 0.0:
        return -1.0
    return math.hypot(dx, dy)


def _check_layout(trees, buildings, margin: float = 0.0) -> None:
    for i in range(len(trees)):
        for j in range(i + 1, len(trees)):
            (x1, y1, r1), (x2, y2, r2) = trees[i], trees[j]
            if math.hypot(x1 - x2, y1 - y2) < r1 + r2 + margin:
                raise SceneSpecError(f"tree footprints {i} and {j} overlap")
    for i, t in enumerate(trees):
        for j, b in enumerate(buildings):
            if _disk_rect_gap(t, b) < margin:
                raise SceneSpecError(f"tree {i} overlaps building {j}")
    for i in range(len(buildings)):
        for j in range(i + 1, len(buildings)):
            if _rect_gap(buildings[i], buildings[j]) < margin:
                raise SceneSpecError(f"building footprints {i} and {j} overlap")


def _place(spec: SyntheticSceneSpec, rng: np.random.Generator):
    x0, x1 = spec.origin_x, spec.origin_x + spec.width * spec.cell_size
    y1 = spec.top
    y0 = y1 - spec.height * spec.cell_size
    m = spec.margin
    buildings: list[tuple] = []
    trees: list[tuple] = []
    if spec.buildings is not None:
        buildings = [tuple(map(float, b)) for b in spec.buildings]
    else:
        for _ in range(spec.building_count):
            for _try in range(_PLACEMENT_TRIES):
                w, h = rng.uniform(*spec.building_size, size=2)
                bx = rng.uniform(x0 + m, x1 - m - w)
                by = rng.uniform(y0 + m, y1 - m - h)
                cand = (bx, by, bx + w, by + h)
                if all(_rect_gap(cand, b) >= m for b in buildings):
                    buildings.append(cand)
                    break
            else:
                raise SceneSpecError("could not place all buildings without overlap")
    if spec.trees is not None:
        trees = [tuple(map(float, t)) for t in spec.trees]
    else:
        for _ in range(spec.tree_count):
            for _try in range(_PLACEMENT_TRIES):
                r = rng.uniform(*spec.tree_radius)
                cx = rng.uniform(x0 + r + m, x1 - r - m)
                cy = rng.uniform(y0 + r + m, y1 - r - m)
                cand = (cx, cy, r)
                if all(math.hypot(cx - t[0], cy - t[1]) >= r + t[2] + m for t in trees) and all(
                    _disk_rect_gap(cand, b) >= m for b in buildings
                ):
                    trees.append(cand)
                    break
            else:
                raise SceneSpecError("could not place all trees without overlap")
    _check_layout(trees, buildings)
    return np.array(trees, float).reshape(-1, 3), np.array(buildings, float).reshape(-1, 4)


def _removals(spec, trees, rng) -> np.ndarray:
    """Crowns standing per epoch, removing whole crowns to hit each fraction."""
    grid = spec.image_grid()
    xs, ys = _centres(grid)
    owner = _tree_index(xs, ys, trees)
    sizes = np.bincount(owner[owner >= 0], minlength=len(trees))
    present = np.ones((len(spec.years), len(trees)), bool)
    for k, frac in enumerate(spec.removal_fractions):
        standing = present[k].copy()
        target = frac * sizes[standing].sum()
        removed = 0
        for t in rng.permutation(np.flatnonzero(standing)):
            if abs(removed + sizes[t] - target) < abs(removed - target):
                standing[t] = False
                removed += sizes[t]
        present[k + 1] = standing
    return present


def _lidar(spec, trees, buildings, heights, roof_z, rng) -> PointCloud:
    x0 = spec.origin_x
    y1 = spec.top
    ex, ey = spec.width * spec.cell_size, spec.height * spec.cell_size
    n = rng.poisson(spec.pulse_density * ex * ey)
    px = x0 + rng.uniform(0, ex, n)
    py = y1 - ey + rng.uniform(0, ey, n)
    tree_id = _tree_index(px, py, trees)
    bld_id = _building_index(px, py, buildings)
    bld_id[tree_id >= 0] = -1
    gz = spec.ground_z

    xs, ys, zs, cls, ret, nret = [], [], [], [], [], []

    def emit(x, y, z, kind, r, nr):
        xs.append(x); ys.append(y); zs.append(z)
        cls.append(np.full(len(x), kind)); ret.append(r); nret.append(nr)

    # ground: one return at ground level
    g = (tree_id < 0) & (bld_id < 0)
    ones = np.ones(int(g.sum()), np.int64)
    emit(px[g], py[g], np.full(ones.size, gz), 2, ones, ones)

    # roofs: one return; a thin edge band sometimes splits roof/ground
    b = np.flatnonzero(bld_id >= 0)
    rect = buildings[bld_id[b]]
    edge_dist = np.minimum.reduce(
        [px[b] - rect[:, 0], rect[:, 2] - px[b], py[b] - rect[:, 1], rect[:, 3] - py[b]]
    )
    split = (edge_dist < spec.edge_width) & (rng.random(b.size) < spec.edge_multi_return_prob)
    roof = roof_z[bld_id[b]]
    one = np.ones(b.size, np.int64)
    nr = np.where(split, 2, 1)
    emit(px[b], py[b], roof, 1, one, nr)
    s = b[split]
    two = np.full(s.size, 2, np.int64)
    emit(px[s], py[s], np.full(s.size, gz), 2, two, two)

    # crowns: canopy returns spread over canopy_spread below the crown top
    t = np.flatnonzero(tree_id >= 0)
    top = gz + heights[tree_id[t]]
    multi = rng.random(t.size) < spec.multi_return_prob
    k = np.where(multi, rng.integers(2, 5, t.size), 1)
    hits_ground = multi & (rng.random(t.size) < spec.ground_hit_prob)
    for j in range(4):
        sel = k > j
        depth = rng.uniform(0, spec.canopy_spread, t.size)
        # successive returns come from deeper in the crown
        depth = np.minimum(spec.canopy_spread, depth * (j + 1) / k)
        z = top - depth
        last = sel & (k == j + 1) & hits_ground
        z = np.where(last, gz, z)
        emit(px[t[sel]], py[t[sel]], z[sel], 0, np.full(int(sel.sum()), j + 1), k[sel])

    kind = np.concatenate(cls)
    names = (TREE, BUILDING, GROUND)
    mu = np.array([INTENSITY[c][0] for c in names])[kind]
    sd = np.array([INTENSITY[c][1] for c in names])[kind]
    intensity = np.clip(np.rint(rng.normal(mu, sd)), 0, 65535).astype(np.int64)
    return PointCloud(
        np.concatenate(xs), np.concatenate(ys), np.concatenate(zs), intensity,
        np.concatenate(ret), np.concatenate(nret),
        source_description=f"synthetic scene seed={spec.seed}",
    )


def _image(spec, trees, buildings, rng) -> MultibandRaster:
    grid = spec.image_grid()
    xs, ys = _centres(grid)
    label = np.full(grid.shape, 2)
    label[_building_index(xs, ys, buildings) >= 0] = 1
    label[_in_trees(xs, ys, trees)] = 0
    means = np.array([spec.spectra[c] for c in (TREE, BUILDING, GROUND)], float)
    data = means[label].transpose(2, 0, 1)
    data = data + rng.normal(0.0, spec.noise_sigma, data.shape)
    data = np.clip(np.rint(data), 0, 255)
    return MultibandRaster(grid, IMAGE_BANDS, data)


def generate_synthetic_scene(spec: SyntheticSceneSpec) -> SyntheticScene:
    seeds = np.random.SeedSequence(spec.seed).spawn(4 + len(spec.years))
    layout_rng, lidar_rng, removal_rng, height_rng = (np.random.default_rng(s) for s in seeds[:4])
    trees, buildings = _place(spec, layout_rng)
    heights = height_rng.uniform(*spec.canopy_height, size=len(trees))
    roof_z = spec.ground_z + height_rng.uniform(*spec.building_height, size=len(buildings))
    present = _removals(spec, trees, removal_rng)

    lidar_trees = trees[present[spec.lidar_epoch]]
    cloud = _lidar(spec, lidar_trees, buildings, heights[present[spec.lidar_epoch]], roof_z, lidar_rng)

    images, truths = {}, {}
    grid = spec.image_grid()
    xs, ys = _centres(grid)
    for k, year in enumerate(spec.years):
        standing = trees[present[k]]
        images[year] = _image(spec, standing, buildings, np.random.default_rng(seeds[4 + k]))
        truths[year] = BinaryMask(grid, _in_trees(xs, ys, standing))
    logger.debug(
        "synthetic scene: %d trees, %d buildings, %d points", len(trees), len(buildings), len(cloud)
    )
    return SyntheticScene(spec, cloud, trees, buildings, present, images, truths)
