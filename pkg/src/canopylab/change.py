"""Tree-cover change between two epochs and fallen-tree overlays.

Only cells valid in both epochs count toward either area, so the baseline is
never biased by one-sided gaps.  Relative change is taken against the first
epoch's tree area.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, UndefinedBaselineError
from .raster import (
    BinaryMask,
    GridSpec,
    MultibandRaster,
    encode_png,
    require_same_grid,
    to_rgb_bytes,
)

RED = np.array([255.0, 0.0, 0.0])
IMAGE_RANGE = (0.0, 255.0)


@dataclass(frozen=True)
class Window:
    """Rectangular AOI in cell units: first column, first row, width, height."""

    col0: int
    row0: int
    width: int
    height: int

    @classmethod
    def parse(cls, text: str) -> "Window":
        try:
            parts = [int(p) for p in text.split(",")]
        except ValueError:
            raise ParameterError(f"AOI must be 'col0,row0,width,height', got {text!r}") from None
        if len(parts) != 4:
            raise ParameterError(f"AOI must be 'col0,row0,width,height', got {text!r}")
        return cls(*parts)

    def check(self, spec: GridSpec) -> None:
        spec.window(self.col0, self.row0, self.width, self.height)

    def cells(self, spec: GridSpec) -> np.ndarray:
        self.check(spec)
        sel = np.zeros(spec.shape, bool)
        sel[self.row0:self.row0 + self.height, self.col0:self.col0 + self.width] = True
        return sel

    def as_text(self) -> str:
        return f"{self.col0},{self.row0},{self.width},{self.height}"


@dataclass(frozen=True, eq=False)
class ChangeReport:
    area_t1_px: int
    area_t2_px: int
    relative_change_pct: float
    loss_mask: BinaryMask
    gain_mask: BinaryMask
    window: Window | None = None

    def to_dict(self) -> dict:
        return {
            "area_t1_px": self.area_t1_px,
            "area_t2_px": self.area_t2_px,
            "relative_change_pct": self.relative_change_pct,
            "loss_px": self.loss_mask.count(),
            "gain_px": self.gain_mask.count(),
            "aoi": None if self.window is None else self.window.as_text(),
        }


def relative_change(area_t1: int, area_t2: int) -> float:
    if area_t1 <= 0:
        raise UndefinedBaselineError("no tree pixels in the first epoch; relative change undefined")
    return 100.0 * (area_t2 - area_t1) / area_t1


def change(mask_t1: BinaryMask, mask_t2: BinaryMask, aoi: Window | None = None) -> ChangeReport:
    require_same_grid(mask_t1.spec, mask_t2.spec, "change masks")
    spec = mask_t1.spec
    region = mask_t1.valid & mask_t2.valid
    if aoi is not None:
        region &= aoi.cells(spec)
    t1 = mask_t1.bits & region
    t2 = mask_t2.bits & region
    a1, a2 = int(t1.sum()), int(t2.sum())
    pct = relative_change(a1, a2)
    return ChangeReport(
        a1, a2, pct,
        loss_mask=BinaryMask(spec, t1 & ~t2, region),
        gain_mask=BinaryMask(spec, ~t1 & t2, region),
        window=aoi,
    )


def blend_overlay(rgb: np.ndarray, loss: np.ndarray, alpha: float) -> np.ndarray:
    """Blend ``loss`` pixels of an 8-bit RGB array toward pure red.

    ``out = (1 - alpha) * base + alpha * (255, 0, 0)``, truncated to an
    integer byte; other pixels are returned untouched.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    out = rgb.copy()
    base = rgb[loss].astype(np.float64)
    mixed = (1.0 - alpha) * base + alpha * RED
    # guard against 49.999999... from binary fractions of alpha
    out[loss] = np.clip(np.floor(mixed + 1e-9), 0, 255).astype(np.uint8)
    return out


def overlay_png(
    base: MultibandRaster,
    loss: BinaryMask,
    alpha: float = 0.5,
    value_range=IMAGE_RANGE,
) -> bytes:
    """PNG of the first three bands of ``base`` with loss cells tinted red.

    Bands are mapped to bytes over the fixed ``value_range`` (8-bit imagery by
    default), matching :func:`canopylab.raster.export_png` with that range.
    """
    require_same_grid(base.spec, loss.spec, "overlay base and loss mask")
    rgb = to_rgb_bytes(base, value_range)
    return encode_png(blend_overlay(rgb, loss.positives, alpha))
