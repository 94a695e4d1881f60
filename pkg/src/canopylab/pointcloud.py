"""LiDAR point-cloud ingestion: LAS 1.2-1.4 binary and a plain-text fallback.

Points are held column-wise in numpy arrays; :class:`LidarPoint` is the
per-record view.  LAS layout follows the ASPRS public specification
(little-endian throughout).  LAZ is rejected.
"""

from __future__ import annotations

import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import (
    EmptyInputError,
    MalformedFileError,
    ParseError,
    TruncationError,
    UnsupportedFormatError,
    ValidationError,
)

logger = logging.getLogger(__name__)

LAS_SIGNATURE = b"LASF"

# bytes needed by the fields we decode, per point data record format
_MIN_RECORD_LENGTH = {0: 20, 1: 28, 2: 26, 3: 34, 6: 30, 7: 36}
_LEGACY_FORMATS = (0, 1, 2, 3)


class LidarPoint(NamedTuple):
    x: float
    y: float
    z: float
    intensity: int
    return_number: int
    num_returns: int


@dataclass(frozen=True)
class BoundingBox:
    min_x: float
    min_y: float
    max_x: float
    max_y: float


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable column store of LiDAR returns, in file order."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    intensity: np.ndarray
    return_number: np.ndarray
    num_returns: np.ndarray
    source_description: str = ""
    _bounds: BoundingBox | None = field(default=None, repr=False)

    def __post_init__(self):
        cols = {
            "x": np.asarray(self.x, dtype=np.float64),
            "y": np.asarray(self.y, dtype=np.float64),
            "z": np.asarray(self.z, dtype=np.float64),
            "intensity": np.asarray(self.intensity, dtype=np.int64),
            "return_number": np.asarray(self.return_number, dtype=np.int64),
            "num_returns": np.asarray(self.num_returns, dtype=np.int64),
        }
        n = len(cols["x"])
        for name, arr in cols.items():
            if arr.ndim != 1 or len(arr) != n:
                raise ValueError(f"column {name!r} must be 1-D of length {n}")
            arr = arr.copy() if arr.flags.writeable else arr
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if n:
            object.__setattr__(
                self,
                "_bounds",
                BoundingBox(
                    float(self.x.min()), float(self.y.min()),
                    float(self.x.max()), float(self.y.max()),
                ),
            )

    @classmethod
    def from_points(cls, points, source_description: str = "") -> "PointCloud":
        pts = list(points)
        if not pts:
            return cls.empty(source_description)
        cols = list(zip(*pts))
        return cls(*cols, source_description=source_description)

    @classmethod
    def empty(cls, source_description: str = "") -> "PointCloud":
        z = np.zeros(0)
        i = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, i, i, i, source_description=source_description)

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, i: int) -> LidarPoint:
        return LidarPoint(
            float(self.x[i]), float(self.y[i]), float(self.z[i]),
            int(self.intensity[i]), int(self.return_number[i]), int(self.num_returns[i]),
        )

    def __iter__(self) -> Iterator[LidarPoint]:
        for i in range(len(self)):
            yield self[i]

    @property
    def bounds(self) -> BoundingBox | None:
        """Tight x/y extent, or ``None`` for an empty cloud."""
        return self._bounds

    def take(self, index) -> "PointCloud":
        return PointCloud(
            self.x[index], self.y[index], self.z[index], self.intensity[index],
            self.return_number[index], self.num_returns[index],
            source_description=self.source_description,
        )

    def translated(self, dx: float, dy: float) -> "PointCloud":
        return PointCloud(
            self.x + dx, self.y + dy, self.z, self.intensity,
            self.return_number, self.num_returns,
            source_description=self.source_description,
        )


def compute_bounds(cloud: PointCloud) -> BoundingBox:
    if len(cloud) == 0:
        raise EmptyInputError("cannot compute bounds of an empty point cloud")
    return cloud.bounds


# ---------------------------------------------------------------------------
# LAS
# ---------------------------------------------------------------------------


def _record_dtype(fmt: int, record_length: int) -> np.dtype:
    names = ["X", "Y", "Z", "intensity", "flags"]
    formats = ["<i4", "<i4", "<i4", "<u2", "u1"]
    offsets = [0, 4, 8, 12, 14]
    return np.dtype(
        {"names": names, "formats": formats, "offsets": offsets, "itemsize": record_length}
    )


def parse_las(data: bytes, source_description: str = "LAS") -> PointCloud:
    """Decode a LAS 1.2-1.4 file held in memory."""
    data = bytes(data)
    if len(data) < 4 or data[:4] != LAS_SIGNATURE:
        raise MalformedFileError("missing 'LASF' signature")
    if len(data) < 227:
        raise TruncationError("LAS public header incomplete", len(data))

    major, minor = data[24], data[25]
    if major != 1 or minor > 4:
        raise UnsupportedFormatError(f"unsupported LAS version {major}.{minor}")
    (header_size,) = struct.unpack_from("<H", data, 94)
    offset_to_points, _n_vlr = struct.unpack_from("<II", data, 96)
    raw_fmt, record_length = struct.unpack_from("<BH", data, 104)
    (legacy_count,) = struct.unpack_from("<I", data, 107)
    scale = struct.unpack_from("<3d", data, 131)
    offset = struct.unpack_from("<3d", data, 155)

    if raw_fmt & 0xC0:
        raise UnsupportedFormatError(
            f"compressed (LAZ) point data format {raw_fmt} is not supported"
        )
    fmt = raw_fmt
    if fmt not in _MIN_RECORD_LENGTH:
        raise UnsupportedFormatError(f"unsupported point data record format {fmt}")
    if record_length < _MIN_RECORD_LENGTH[fmt]:
        raise MalformedFileError(
            f"record length {record_length} too short for point format {fmt}"
        )

    count = legacy_count
    if minor >= 4:
        if len(data) < 375:
            raise TruncationError("LAS 1.4 header incomplete", len(data))
        if header_size < 375:
            raise MalformedFileError(f"LAS 1.4 header size {header_size} < 375")
        (count64,) = struct.unpack_from("<Q", data, 247)
        count = count64 or legacy_count

    if offset_to_points < header_size:
        raise MalformedFileError(
            f"point data offset {offset_to_points} lies inside the header ({header_size} bytes)"
        )
    end = offset_to_points + count * record_length
    if len(data) < end:
        complete = max(0, (len(data) - offset_to_points) // record_length)
        raise TruncationError(
            f"expected {count} point records, file holds {complete}",
            offset_to_points + complete * record_length,
        )

    rec = np.frombuffer(
        data, dtype=_record_dtype(fmt, record_length), count=count, offset=offset_to_points
    )
    flags = rec["flags"].astype(np.int64)
    if fmt in _LEGACY_FORMATS:
        return_number = flags & 0x07
        num_returns = (flags >> 3) & 0x07
    else:
        return_number = flags & 0x0F
        num_returns = (flags >> 4) & 0x0F

    bad = np.flatnonzero(
        (return_number < 1) | (num_returns < 1) | (return_number > num_returns)
    )
    if bad.size:
        i = int(bad[0])
        raise ValidationError(
            f"point {i} at byte offset {offset_to_points + i * record_length}: "
            f"return {int(return_number[i])} of {int(num_returns[i])} is invalid"
        )

    x = rec["X"].astype(np.float64) * scale[0] + offset[0]
    y = rec["Y"].astype(np.float64) * scale[1] + offset[1]
    z = rec["Z"].astype(np.float64) * scale[2] + offset[2]
    logger.debug("decoded %d LAS %d.%d format-%d points", count, major, minor, fmt)
    return PointCloud(
        x, y, z, rec["intensity"], return_number, num_returns,
        source_description=source_description,
    )


# ---------------------------------------------------------------------------
# Text
# ---------------------------------------------------------------------------

_SPLIT = re.compile(r"[\s,]+")


def parse_xyz_text(text: str, source_description: str = "text") -> PointCloud:
    """Parse ``x y z [intensity] [return_number] [num_returns]`` lines.

    Blank lines and lines starting with ``#`` are skipped.  Fields may be
    separated by whitespace and/or commas.
    """
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        fields = [f for f in _SPLIT.split(s) if f]
        if not 3 <= len(fields) <= 6:
            raise ParseError(f"expected 3 to 6 fields, got {len(fields)}", lineno)
        try:
            x, y, z = (float(f) for f in fields[:3])
            ints = [_parse_int(f) for f in fields[3:]]
        except ValueError as exc:
            raise ParseError(f"non-numeric field ({exc})", lineno) from None
        if not all(np.isfinite((x, y, z))):
            raise ValidationError("non-finite coordinate", lineno)
        ints += [0, 1, 1][len(ints):]
        intensity, ret, nret = ints
        if ret < 1 or nret < 1 or ret > nret:
            raise ValidationError(f"return {ret} of {nret} is invalid", lineno)
        if not 0 <= intensity <= 65535:
            raise ValidationError(f"intensity {intensity} outside 0..65535", lineno)
        rows.append((x, y, z, intensity, ret, nret))
    return PointCloud.from_points(rows, source_description=source_description)


def _parse_int(field: str) -> int:
    value = float(field)
    if not value.is_integer():
        raise ValueError(f"{field!r} is not an integer")
    return int(value)


def format_xyz_text(cloud: PointCloud, precision: int = 3) -> str:
    lines = [f"# x y z intensity return_number num_returns ({len(cloud)} points)"]
    fmt = f"{{:.{precision}f}} {{:.{precision}f}} {{:.{precision}f}} {{}} {{}} {{}}"
    for p in cloud:
        lines.append(fmt.format(*p))
    return "\n".join(lines) + "\n"


def read_point_cloud(path: str | Path) -> PointCloud:
    """Read a LAS or text point cloud, sniffing the 4-byte signature."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == LAS_SIGNATURE:
        return parse_las(data, source_description=str(path))
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedFileError(f"{path}: neither LAS nor UTF-8 text") from None
    return parse_xyz_text(text, source_description=str(path))
