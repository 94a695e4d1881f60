"""Random inputs shared by the unit and acceptance tests."""

from __future__ import annotations

import numpy as np

from canopylab.raster import BinaryMask, GridSpec, MultibandRaster
from canopylab.rules import And, Comparison, Not, Or
from canopylab.stats import BAND_NAMES, StatsStack

OPS = ("<", "<=", ">", ">=", "==", "!=")


def random_stack(rng, height=6, width=7, nodata_rate=0.15) -> StatsStack:
    spec = GridSpec(0.0, float(height), 1.0, width, height)
    # small integer values so that equality comparisons fire
    data = rng.integers(0, 5, size=(len(BAND_NAMES), height, width)).astype(float)
    nodata = rng.random((height, width)) < nodata_rate
    return StatsStack(MultibandRaster(spec, BAND_NAMES, np.where(nodata, 0.0, data), nodata))


def random_rule(rng, depth: int = 4):
    if depth == 0 or rng.random() < 0.25:
        layer = BAND_NAMES[rng.integers(len(BAND_NAMES))]
        value = float(rng.integers(0, 5)) if rng.random() < 0.7 else round(float(rng.uniform(-1, 6)), 3)
        return Comparison(layer, OPS[rng.integers(len(OPS))], value)
    kind = rng.integers(3)
    if kind == 0:
        return Not(random_rule(rng, depth - 1))
    cls = And if kind == 1 else Or
    return cls(random_rule(rng, depth - 1), random_rule(rng, depth - 1))


def random_mask_pair(rng, height=16, width=16, density=(0.2, 0.7)):
    spec = GridSpec(0.0, float(height), 1.0, width, height)
    masks = []
    for _ in range(2):
        p = rng.uniform(*density)
        masks.append(BinaryMask(spec, rng.random((height, width)) < p, rng.random((height, width)) < 0.9))
    return masks
