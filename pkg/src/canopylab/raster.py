"""Geo-referenced grids, nearest-neighbour resampling and raster file I/O.

Orientation: cell ``(0, 0)`` is the top-left cell; its top-left corner is
``(origin_x, origin_y)``.  Columns grow eastward, rows grow southward.
Cell ``(r, c)`` covers::

    x in [origin_x + c*cell, origin_x + (c+1)*cell)
    y in (origin_y - (r+1)*cell, origin_y - r*cell]

Nodata is carried as a boolean mask beside the values; sentinels exist only
inside file formats.

File formats
------------
Esri ASCII grid
    ``ncols nrows xllcorner yllcorner cellsize NODATA_value`` header, then one
    text line per row, top to bottom.
Multiband container (``.cnpy``, also used for masks)
    ``b"CNPY"``, version u16, band count u16, width u32, height u32,
    cell_size f64, origin_x f64, origin_y f64; then per band: name length u16,
    UTF-8 name, float32 values row-major, nodata bitmap (1 bit per cell,
    MSB first, bit set = nodata, each row zero-padded to a whole byte).
    Little-endian throughout.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .errors import (
    DimensionError,
    GridMismatchError,
    MalformedFileError,
    NoOverlapError,
    ParameterError,
    ShortFileError,
    TruncationError,
)

CONTAINER_MAGIC = b"CNPY"
CONTAINER_VERSION = 1
MASK_BAND = "mask"

NYC_LAND_COVER_CLASSES = {
    1: "Tree Canopy",
    2: "Grass/Shrub",
    3: "Bare Soil",
    4: "Water",
    5: "Buildings",
    6: "Roads",
    7: "Other Impervious",
    8: "Railroads",
}


@dataclass(frozen=True)
class GridSpec:
    origin_x: float
    origin_y: float
    cell_size: float
    width: int
    height: int

    def __post_init__(self):
        if not self.cell_size > 0 or not math.isfinite(self.cell_size):
            raise ParameterError(f"cell_size must be > 0, got {self.cell_size}")
        if self.width < 1 or self.height < 1:
            raise ParameterError(f"grid must be at least 1x1, got {self.width}x{self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def max_x(self) -> float:
        return self.origin_x + self.width * self.cell_size

    @property
    def min_y(self) -> float:
        return self.origin_y - self.height * self.cell_size

    def cell_of(self, x: float, y: float) -> tuple[int, int] | None:
        """Row/col of the cell containing ``(x, y)``, or ``None`` if outside."""
        col = math.floor((x - self.origin_x) / self.cell_size)
        row = math.floor((self.origin_y - y) / self.cell_size)
        if 0 <= row < self.height and 0 <= col < self.width:
            return (row, col)
        return None

    def cells_of(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised :meth:`cell_of` without range clipping (may be out of grid)."""
        col = np.floor((np.asarray(x, dtype=np.float64) - self.origin_x) / self.cell_size)
        row = np.floor((self.origin_y - np.asarray(y, dtype=np.float64)) / self.cell_size)
        return row.astype(np.int64), col.astype(np.int64)

    def inside(self, row, col) -> np.ndarray:
        return (row >= 0) & (row < self.height) & (col >= 0) & (col < self.width)

    def center_of(self, row: int, col: int) -> tuple[float, float]:
        if not (0 <= row < self.height and 0 <= col < self.width):
            raise IndexError(f"cell ({row}, {col}) outside {self.height}x{self.width} grid")
        return (
            self.origin_x + (col + 0.5) * self.cell_size,
            self.origin_y - (row + 0.5) * self.cell_size,
        )

    def center_x(self, cols) -> np.ndarray:
        return self.origin_x + (np.asarray(cols, dtype=np.float64) + 0.5) * self.cell_size

    def center_y(self, rows) -> np.ndarray:
        return self.origin_y - (np.asarray(rows, dtype=np.float64) + 0.5) * self.cell_size

    def overlaps(self, other: "GridSpec") -> bool:
        return (
            self.origin_x < other.max_x
            and other.origin_x < self.max_x
            and self.min_y < other.origin_y
            and other.min_y < self.origin_y
        )

    def window(self, col0: int, row0: int, width: int, height: int) -> "GridSpec":
        """Sub-grid starting at cell ``(row0, col0)``."""
        if (
            col0 < 0 or row0 < 0 or width < 1 or height < 1
            or col0 + width > self.width or row0 + height > self.height
        ):
            raise ParameterError(
                f"window ({col0},{row0},{width},{height}) exceeds {self.width}x{self.height} grid"
            )
        return GridSpec(
            self.origin_x + col0 * self.cell_size,
            self.origin_y - row0 * self.cell_size,
            self.cell_size, width, height,
        )


def _frozen(arr, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


def _check_shape(spec: GridSpec, arr: np.ndarray, what: str) -> None:
    if arr.shape != spec.shape:
        raise DimensionError(f"{what} shape {arr.shape} does not match grid {spec.shape}")


def require_same_grid(a: GridSpec, b: GridSpec, what: str = "inputs") -> None:
    if a != b:
        raise GridMismatchError(f"{what} are on different grids: {a} vs {b}")


@dataclass(frozen=True, eq=False)
class Raster:
    spec: GridSpec
    values: np.ndarray
    nodata: np.ndarray = None

    def __post_init__(self):
        values = _frozen(self.values, np.float64)
        _check_shape(self.spec, values, "values")
        nodata = np.zeros(self.spec.shape, bool) if self.nodata is None else self.nodata
        nodata = _frozen(nodata, bool)
        _check_shape(self.spec, nodata, "nodata mask")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "nodata", nodata)

    @property
    def valid(self) -> np.ndarray:
        return ~self.nodata

    def equals(self, other: "Raster") -> bool:
        return (
            self.spec == other.spec
            and np.array_equal(self.nodata, other.nodata)
            and np.array_equal(self.values[self.valid], other.values[other.valid])
        )


@dataclass(frozen=True, eq=False)
class MultibandRaster:
    """Named value planes on one grid with one shared nodata mask."""

    spec: GridSpec
    names: tuple[str, ...]
    data: np.ndarray
    nodata: np.ndarray = None

    def __post_init__(self):
        names = tuple(self.names)
        if len(set(names)) != len(names):
            raise ParameterError(f"band names must be unique: {names}")
        data = _frozen(self.data, np.float64)
        if data.ndim != 3 or data.shape[0] != len(names):
            raise DimensionError(f"data shape {data.shape} does not match {len(names)} bands")
        if data.shape[1:] != self.spec.shape:
            raise DimensionError(f"band shape {data.shape[1:]} does not match grid {self.spec.shape}")
        nodata = np.zeros(self.spec.shape, bool) if self.nodata is None else self.nodata
        nodata = _frozen(nodata, bool)
        _check_shape(self.spec, nodata, "nodata mask")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "nodata", nodata)

    @classmethod
    def from_bands(cls, spec: GridSpec, bands: Mapping[str, np.ndarray], nodata=None):
        names = tuple(bands)
        return cls(spec, names, np.stack([np.asarray(bands[n], float) for n in names]), nodata)

    @property
    def valid(self) -> np.ndarray:
        return ~self.nodata

    def __len__(self) -> int:
        return len(self.names)

    def band_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no band {name!r}; have {list(self.names)}") from None

    def band(self, name: str) -> np.ndarray:
        return self.data[self.band_index(name)]

    def raster(self, name: str) -> Raster:
        return Raster(self.spec, self.band(name), self.nodata)

    def select(self, names: Sequence[str]) -> "MultibandRaster":
        idx = [self.band_index(n) for n in names]
        return MultibandRaster(self.spec, tuple(names), self.data[idx], self.nodata)

    def equals(self, other: "MultibandRaster") -> bool:
        return (
            self.spec == other.spec
            and self.names == other.names
            and np.array_equal(self.nodata, other.nodata)
            and np.array_equal(self.data[:, self.valid], other.data[:, other.valid])
        )


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Tree (``bits``) / non-tree segmentation; invalid cells are neither."""

    spec: GridSpec
    bits: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        bits = _frozen(self.bits, bool)
        _check_shape(self.spec, bits, "mask bits")
        valid = np.ones(self.spec.shape, bool) if self.valid is None else self.valid
        valid = _frozen(valid, bool)
        _check_shape(self.spec, valid, "valid mask")
        # invalid cells carry no bit
        bits = _frozen(bits & valid, bool)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "valid", valid)

    @property
    def positives(self) -> np.ndarray:
        return self.bits & self.valid

    @property
    def negatives(self) -> np.ndarray:
        return ~self.bits & self.valid

    def count(self) -> int:
        return int(self.positives.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (
            self.spec == other.spec
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.bits, other.bits)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class CategoricalRaster:
    spec: GridSpec
    classes: np.ndarray
    class_names: Mapping[int, str] = field(default_factory=lambda: dict(NYC_LAND_COVER_CLASSES))
    nodata_id: int = 0

    def __post_init__(self):
        classes = _frozen(self.classes, np.int64)
        _check_shape(self.spec, classes, "classes")
        if classes.size and classes.min() < 0:
            raise ParameterError("class ids must be non-negative")
        known = set(self.class_names) | {self.nodata_id}
        unknown = sorted(set(np.unique(classes).tolist()) - known)
        if unknown:
            raise ParameterError(f"class ids {unknown} missing from class_names")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "class_names", dict(self.class_names))

    @property
    def valid(self) -> np.ndarray:
        return self.classes != self.nodata_id

    def to_mask(self, positive_class: int = 1) -> BinaryMask:
        """Binary mask of ``positive_class`` (default Tree Canopy) vs all other classes."""
        return BinaryMask(self.spec, self.classes == positive_class, self.valid)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def _source_index(src: GridSpec, target: GridSpec):
    if not src.overlaps(target):
        raise NoOverlapError(f"grids do not overlap: {src} vs {target}")
    rows = np.arange(target.height)
    cols = np.arange(target.width)
    sr, _ = src.cells_of(np.zeros(1), target.center_y(rows))
    _, sc = src.cells_of(target.center_x(cols), np.zeros(1))
    rr, cc = np.meshgrid(sr, sc, indexing="ij")
    inside = src.inside(rr, cc)
    return np.where(inside, rr, 0), np.where(inside, cc, 0), inside


def resample_nearest(src, target: GridSpec):
    """Nearest-neighbour resample of any grid kind onto ``target``.

    Each target cell takes the source cell containing its centre; target cells
    whose centre falls outside the source, or on source nodata, become
    nodata/invalid.
    """
    if src.spec == target:
        return src
    rr, cc, inside = _source_index(src.spec, target)
    if isinstance(src, Raster):
        nodata = ~inside | src.nodata[rr, cc]
        return Raster(target, np.where(nodata, 0.0, src.values[rr, cc]), nodata)
    if isinstance(src, MultibandRaster):
        nodata = ~inside | src.nodata[rr, cc]
        data = np.where(nodata[None], 0.0, src.data[:, rr, cc])
        return MultibandRaster(target, src.names, data, nodata)
    if isinstance(src, BinaryMask):
        valid = inside & src.valid[rr, cc]
        return BinaryMask(target, src.bits[rr, cc] & valid, valid)
    if isinstance(src, CategoricalRaster):
        classes = np.where(inside, src.classes[rr, cc], src.nodata_id)
        return CategoricalRaster(target, classes, src.class_names, src.nodata_id)
    raise TypeError(f"cannot resample {type(src).__name__}")


# ---------------------------------------------------------------------------
# Esri ASCII grid
# ---------------------------------------------------------------------------

_ASCII_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def write_ascii_grid(raster: Raster, nodata_value: float = -9999, precision: int = 6) -> str:
    spec = raster.spec
    lines = [
        f"ncols {spec.width}",
        f"nrows {spec.height}",
        f"xllcorner {spec.origin_x!r}",
        f"yllcorner {spec.min_y!r}",
        f"cellsize {spec.cell_size!r}",
        f"NODATA_value {nodata_value:g}",
    ]
    fmt = f"{{:.{precision}g}}"
    sentinel = f"{nodata_value:g}"
    for r in range(spec.height):
        vals = raster.values[r]
        nd = raster.nodata[r]
        lines.append(" ".join(sentinel if nd[c] else fmt.format(vals[c]) for c in range(spec.width)))
    return "\n".join(lines) + "\n"


def read_ascii_grid(text: str) -> Raster:
    lines = text.splitlines()
    header: dict[str, float] = {}
    i = 0
    while i < len(lines):
        s = lines[i].strip()
        if not s:
            i += 1
            continue
        parts = s.split()
        key = parts[0].lower()
        if not key[0].isalpha():
            break  # first data row
        i += 1
        if key not in _ASCII_KEYS + ("xllcenter", "yllcenter") or len(parts) != 2:
            raise MalformedFileError(f"line {i}: unexpected header line {s!r}")
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise MalformedFileError(f"line {i}: non-numeric header value {parts[1]!r}") from None
    for key in ("ncols", "nrows", "cellsize"):
        if key not in header:
            raise MalformedFileError(f"ASCII grid header lacks {key}")
    if ("xllcorner" in header) == ("xllcenter" in header) or (
        ("yllcorner" in header) == ("yllcenter" in header)
    ):
        raise MalformedFileError("ASCII grid header needs exactly one of xllcorner/xllcenter and yllcorner/yllcenter")
    ncols, nrows, cell = int(header["ncols"]), int(header["nrows"]), header["cellsize"]
    xll = header.get("xllcorner", header.get("xllcenter", 0.0) - cell / 2)
    yll = header.get("yllcorner", header.get("yllcenter", 0.0) - cell / 2)
    spec = GridSpec(xll, yll + nrows * cell, cell, ncols, nrows)
    sentinel = header.get("nodata_value")

    values = np.zeros(spec.shape)
    rows = [(n + 1, ln) for n, ln in enumerate(lines[i:], start=i) if ln.strip()]
    if len(rows) < nrows:
        raise ShortFileError(f"expected {nrows} data rows, found {len(rows)}", len(lines))
    if len(rows) > nrows:
        raise DimensionError(f"expected {nrows} data rows, found {len(rows)}", rows[nrows][0])
    for r, (lineno, ln) in enumerate(rows):
        parts = ln.split()
        if len(parts) != ncols:
            raise DimensionError(f"expected {ncols} values, found {len(parts)}", lineno)
        try:
            values[r] = [float(p) for p in parts]
        except ValueError as exc:
            raise MalformedFileError(f"line {lineno}: {exc}") from None
    nodata = values == sentinel if sentinel is not None else np.zeros(spec.shape, bool)
    return Raster(spec, np.where(nodata, 0.0, values), nodata)


def read_categorical_ascii_grid(
    text: str, class_names: Mapping[int, str] | None = None, nodata_id: int = 0
) -> CategoricalRaster:
    raster = read_ascii_grid(text)
    classes = np.where(raster.nodata, nodata_id, raster.values)
    if not np.all(classes == np.round(classes)):
        raise MalformedFileError("categorical grid holds non-integer values")
    names = NYC_LAND_COVER_CLASSES if class_names is None else class_names
    return CategoricalRaster(raster.spec, classes.astype(np.int64), names, nodata_id)


# ---------------------------------------------------------------------------
# Multiband container
# ---------------------------------------------------------------------------

_HEAD = struct.Struct("<4sHHIIddd")


def write_container(mb: MultibandRaster) -> bytes:
    spec = mb.spec
    out = [_HEAD.pack(CONTAINER_MAGIC, CONTAINER_VERSION, len(mb), spec.width, spec.height,
                      spec.cell_size, spec.origin_x, spec.origin_y)]
    bitmap = np.packbits(mb.nodata, axis=1).tobytes()
    for k, name in enumerate(mb.names):
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(np.where(mb.nodata, 0.0, mb.data[k]).astype("<f4").tobytes())
        out.append(bitmap)
    return b"".join(out)


def read_container(data: bytes) -> MultibandRaster:
    """Parse a container; per-band nodata bitmaps are merged by union."""
    if len(data) < 4 or data[:4] != CONTAINER_MAGIC:
        raise MalformedFileError("missing 'CNPY' magic")
    if len(data) < _HEAD.size:
        raise TruncationError("container header incomplete", len(data))
    _, version, nbands, width, height, cell, ox, oy = _HEAD.unpack_from(data, 0)
    if version != CONTAINER_VERSION:
        raise MalformedFileError(f"unsupported container version {version}")
    spec = GridSpec(ox, oy, cell, width, height)
    ncell = width * height
    row_bytes = (width + 7) // 8
    pos = _HEAD.size
    names, planes = [], []
    nodata = np.zeros(spec.shape, bool)
    for _ in range(nbands):
        if pos + 2 > len(data):
            raise TruncationError("band name length missing", pos)
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        need = nlen + 4 * ncell + row_bytes * height
        if pos + need > len(data):
            raise TruncationError(f"band {len(names)} incomplete", pos)
        names.append(data[pos:pos + nlen].decode("utf-8"))
        pos += nlen
        planes.append(np.frombuffer(data, "<f4", ncell, pos).reshape(spec.shape).astype(np.float64))
        pos += 4 * ncell
        bits = np.frombuffer(data, np.uint8, row_bytes * height, pos).reshape(height, row_bytes)
        nodata |= np.unpackbits(bits, axis=1, count=width).astype(bool)
        pos += row_bytes * height
    if pos != len(data):
        raise MalformedFileError(f"{len(data) - pos} trailing bytes after last band")
    data3 = np.stack(planes) if planes else np.zeros((0,) + spec.shape)
    return MultibandRaster(spec, tuple(names), np.where(nodata[None], 0.0, data3), nodata)


def mask_to_container(mask: BinaryMask) -> bytes:
    return write_container(
        MultibandRaster(mask.spec, (MASK_BAND,), mask.bits[None].astype(float), ~mask.valid)
    )


def mask_from_container(data: bytes) -> BinaryMask:
    mb = read_container(data)
    if len(mb) != 1:
        raise MalformedFileError(f"mask container must hold 1 band, found {len(mb)}")
    return BinaryMask(mb.spec, mb.data[0] != 0, mb.valid)


def save_container(path: str | Path, mb: MultibandRaster) -> None:
    Path(path).write_bytes(write_container(mb))


def load_container(path: str | Path) -> MultibandRaster:
    return read_container(Path(path).read_bytes())


def save_mask(path: str | Path, mask: BinaryMask) -> None:
    Path(path).write_bytes(mask_to_container(mask))


def load_mask(path: str | Path) -> BinaryMask:
    return mask_from_container(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------


def scale_to_uint8(values: np.ndarray, nodata: np.ndarray, value_range=None) -> np.ndarray:
    """Linear map to 0..255, rounding half up; nodata -> 0.

    Without ``value_range`` the band's own min/max over valid cells is used; a
    constant band maps to 0.
    """
    valid = ~nodata
    if value_range is None:
        if not valid.any():
            return np.zeros(values.shape, np.uint8)
        lo, hi = float(values[valid].min()), float(values[valid].max())
    else:
        lo, hi = map(float, value_range)
    if hi <= lo:
        scaled = np.zeros(values.shape)
    else:
        scaled = np.floor((values - lo) / (hi - lo) * 255.0 + 0.5)
    out = np.clip(scaled, 0, 255).astype(np.uint8)
    out[nodata] = 0
    return out


def to_rgb_bytes(image: MultibandRaster, value_range=None) -> np.ndarray:
    if len(image) < 3:
        raise DimensionError(f"RGB composite needs 3 bands, image has {len(image)}")
    return np.dstack([scale_to_uint8(image.data[k], image.nodata, value_range) for k in range(3)])


def encode_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def export_png(obj, value_range=None) -> bytes:
    """8-bit PNG: grayscale for one band / masks, RGB from the first three bands.

    Masks render tree as 255, non-tree as 0 and invalid as 128.
    """
    if isinstance(obj, BinaryMask):
        px = np.where(obj.valid, np.where(obj.bits, 255, 0), 128).astype(np.uint8)
    elif isinstance(obj, Raster):
        px = scale_to_uint8(obj.values, obj.nodata, value_range)
    elif isinstance(obj, MultibandRaster):
        if len(obj) == 1:
            px = scale_to_uint8(obj.data[0], obj.nodata, value_range)
        else:
            px = to_rgb_bytes(obj, value_range)
    else:
        raise TypeError(f"cannot export {type(obj).__name__} as PNG")
    return encode_png(px)


def decode_png(data: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(data)))
