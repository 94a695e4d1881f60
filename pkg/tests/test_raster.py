import math

import numpy as np
import pytest

from canopylab.errors import (
    DimensionError,
    GridMismatchError,
    MalformedFileError,
    NoOverlapError,
    ParameterError,
    ShortFileError,
    TruncationError,
)
from canopylab.raster import (
    BinaryMask,
    CategoricalRaster,
    GridSpec,
    MultibandRaster,
    Raster,
    decode_png,
    export_png,
    mask_from_container,
    mask_to_container,
    read_ascii_grid,
    read_categorical_ascii_grid,
    read_container,
    require_same_grid,
    resample_nearest,
    write_ascii_grid,
    write_container,
)

SPEC = GridSpec(0.0, 10.0, 1.0, 10, 10)


def test_gridspec_validation():
    with pytest.raises(ParameterError):
        GridSpec(0, 0, 0.0, 3, 3)
    with pytest.raises(ParameterError):
        GridSpec(0, 0, 1.0, 0, 3)


def test_cell_of_first_cell():
    assert SPEC.cell_of(0.5, 9.5) == (0, 0)


def test_cell_of_right_open_boundary():
    assert SPEC.cell_of(10.0, 10.0) is None
    # top edge is closed, left edge is closed
    assert SPEC.cell_of(0.0, 10.0) == (0, 0)
    # bottom edge is open
    assert SPEC.cell_of(0.5, 0.0) is None


def test_cell_of_matches_floor_oracle():
    spec = GridSpec(-3.25, 17.5, 0.5, 40, 30)
    rng = np.random.default_rng(0)
    xs = rng.uniform(-6, 20, 10_000)
    ys = rng.uniform(-2, 22, 10_000)
    for x, y in zip(xs, ys):
        c = math.floor((x - spec.origin_x) / spec.cell_size)
        r = math.floor((spec.origin_y - y) / spec.cell_size)
        expect = (r, c) if 0 <= r < spec.height and 0 <= c < spec.width else None
        assert spec.cell_of(x, y) == expect


def test_center_of():
    assert SPEC.center_of(0, 0) == (0.5, 9.5)


def test_center_roundtrip_every_cell():
    spec = GridSpec(100.0, 50.0, 0.5, 7, 5)
    for r in range(spec.height):
        for c in range(spec.width):
            assert spec.cell_of(*spec.center_of(r, c)) == (r, c)


def test_center_of_out_of_range():
    with pytest.raises(IndexError):
        SPEC.center_of(SPEC.height, 0)
    with pytest.raises(IndexError):
        SPEC.center_of(0, -1)


def test_window_geometry():
    w = SPEC.window(2, 3, 4, 5)
    assert (w.origin_x, w.origin_y, w.width, w.height) == (2.0, 7.0, 4, 5)
    with pytest.raises(ParameterError):
        SPEC.window(8, 0, 4, 1)


# ---------------------------------------------------------------------------
# resampling


def test_resample_identity_is_copy():
    rng = np.random.default_rng(1)
    r = Raster(SPEC, rng.normal(size=SPEC.shape), rng.random(SPEC.shape) < 0.2)
    out = resample_nearest(r, SPEC)
    assert out.equals(r)
    np.testing.assert_array_equal(out.values, r.values)


def test_resample_half_to_one_metre():
    src = GridSpec(0.0, 4.0, 0.5, 8, 8)
    dst = GridSpec(0.0, 4.0, 1.0, 4, 4)
    vals = np.arange(64, dtype=float).reshape(8, 8)
    out = resample_nearest(Raster(src, vals), dst)
    # target (0,0) centre (0.5, 3.5) lies in the 0.5 m cell (1,1)
    assert src.cell_of(*dst.center_of(0, 0)) == (1, 1)
    assert out.values[0, 0] == vals[1, 1]
    for r in range(4):
        for c in range(4):
            sr, sc = src.cell_of(*dst.center_of(r, c))
            assert out.values[r, c] == vals[sr, sc]


def test_resample_all_nodata():
    src = Raster(GridSpec(0, 4, 0.5, 8, 8), np.zeros((8, 8)), np.ones((8, 8), bool))
    out = resample_nearest(src, GridSpec(0, 4, 1.0, 4, 4))
    assert out.nodata.all()


def test_resample_partial_overlap_marks_outside_invalid():
    src = BinaryMask(GridSpec(0, 4, 1.0, 4, 4), np.ones((4, 4), bool))
    out = resample_nearest(src, GridSpec(2, 4, 1.0, 4, 4))
    assert out.valid[:, :2].all() and not out.valid[:, 2:].any()
    assert out.bits[:, :2].all()


def test_resample_disjoint_raises():
    src = Raster(GridSpec(0, 4, 1.0, 4, 4), np.zeros((4, 4)))
    with pytest.raises(NoOverlapError):
        resample_nearest(src, GridSpec(100, 4, 1.0, 4, 4))


def test_resample_multiband_and_categorical():
    src = GridSpec(0, 2, 0.5, 4, 4)
    dst = GridSpec(0, 2, 1.0, 2, 2)
    mb = MultibandRaster(src, ("a", "b"), np.stack([np.arange(16.0).reshape(4, 4)] * 2))
    out = resample_nearest(mb, dst)
    np.testing.assert_array_equal(out.band("b"), [[5, 7], [13, 15]])
    cat = CategoricalRaster(src, np.arange(16).reshape(4, 4) % 9)
    np.testing.assert_array_equal(resample_nearest(cat, dst).classes, [[5, 7], [4, 6]])


def test_resample_idempotent_on_same_grid():
    m = BinaryMask(SPEC, np.eye(10, dtype=bool))
    assert resample_nearest(resample_nearest(m, SPEC), SPEC) == m


def test_require_same_grid():
    with pytest.raises(GridMismatchError):
        require_same_grid(SPEC, GridSpec(0, 10, 1.0, 9, 10))


# ---------------------------------------------------------------------------
# types


def test_mask_bits_cleared_on_invalid_cells():
    m = BinaryMask(GridSpec(0, 1, 1, 2, 1), [[True, True]], [[True, False]])
    assert m.bits.tolist() == [[True, False]]
    assert m.count() == 1


def test_categorical_rejects_unknown_ids():
    with pytest.raises(ParameterError):
        CategoricalRaster(GridSpec(0, 1, 1, 2, 1), [[1, 42]])


def test_multiband_unique_names():
    with pytest.raises(ParameterError):
        MultibandRaster(GridSpec(0, 1, 1, 1, 1), ("a", "a"), np.zeros((2, 1, 1)))


# ---------------------------------------------------------------------------
# ASCII grid


def test_ascii_small_roundtrip():
    spec = GridSpec(0, 2, 1.0, 2, 2)
    r = Raster(spec, [[1, 2], [-1, 0]], [[False, False], [False, True]])
    text = write_ascii_grid(r)
    assert "NODATA_value -9999" in text
    assert text.splitlines()[-1].split() == ["-1", "-9999"]
    assert read_ascii_grid(text).equals(r)


def test_ascii_random_roundtrip_within_six_digits():
    rng = np.random.default_rng(2)
    spec = GridSpec(583000.25, 4507000.5, 0.5, 13, 7)
    r = Raster(spec, rng.normal(0, 1000, spec.shape), rng.random(spec.shape) < 0.1)
    back = read_ascii_grid(write_ascii_grid(r))
    assert back.spec == spec
    np.testing.assert_array_equal(back.nodata, r.nodata)
    np.testing.assert_allclose(back.values[r.valid], r.values[r.valid], rtol=5e-6)


def test_ascii_ncols_mismatch():
    text = "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2 3\n4 5\n"
    with pytest.raises(DimensionError) as info:
        read_ascii_grid(text)
    assert info.value.line == 8


def test_ascii_short_file():
    text = "ncols 2\nnrows 3\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3 4\n"
    with pytest.raises(ShortFileError):
        read_ascii_grid(text)


def test_ascii_malformed_header():
    with pytest.raises(MalformedFileError):
        read_ascii_grid("ncols two\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n")
    with pytest.raises(MalformedFileError):
        read_ascii_grid("nrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n")


def test_ascii_cell_centre_header():
    text = "ncols 1\nnrows 1\nxllcenter 0.5\nyllcenter 0.5\ncellsize 1\n7\n"
    r = read_ascii_grid(text)
    assert (r.spec.origin_x, r.spec.origin_y) == (0.0, 1.0)


def test_categorical_ascii_to_mask():
    text = "ncols 3\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value 0\n1 2 0\n"
    m = read_categorical_ascii_grid(text).to_mask(1)
    assert m.bits.tolist() == [[True, False, False]]
    assert m.valid.tolist() == [[True, True, False]]


# ---------------------------------------------------------------------------
# container


def test_container_three_band_roundtrip():
    rng = np.random.default_rng(3)
    spec = GridSpec(10.0, 20.0, 0.5, 4, 4)
    data = rng.normal(size=(3, 4, 4)).astype(np.float32).astype(float)
    nodata = rng.random((4, 4)) < 0.25
    mb = MultibandRaster(spec, ("nir", "red", "elevation.mean"), data, nodata)
    back = read_container(write_container(mb))
    assert back.equals(mb)


def test_container_odd_width_bitmap_padding():
    spec = GridSpec(0, 3, 1.0, 11, 3)
    nodata = np.zeros((3, 11), bool)
    nodata[:, -1] = True
    nodata[1, 0] = True
    mb = MultibandRaster(spec, ("v",), np.ones((1, 3, 11)), nodata)
    back = read_container(write_container(mb))
    np.testing.assert_array_equal(back.nodata, nodata)


def test_container_errors():
    mb = MultibandRaster(GridSpec(0, 2, 1, 2, 2), ("a",), np.zeros((1, 2, 2)))
    data = write_container(mb)
    with pytest.raises(MalformedFileError):
        read_container(b"XXXX" + data[4:])
    with pytest.raises(TruncationError):
        read_container(data[:-1])
    with pytest.raises(MalformedFileError):
        read_container(data + b"\0")


def test_mask_container_roundtrip():
    rng = np.random.default_rng(4)
    spec = GridSpec(0, 9, 1.0, 9, 9)
    m = BinaryMask(spec, rng.random((9, 9)) < 0.5, rng.random((9, 9)) < 0.8)
    assert mask_from_container(mask_to_container(m)) == m


# ---------------------------------------------------------------------------
# PNG


def test_png_mask_styling():
    m = BinaryMask(GridSpec(0, 1, 1, 3, 1), [[True, False, False]], [[True, True, False]])
    px = decode_png(export_png(m))
    assert px.tolist() == [[255, 0, 128]]


def test_png_rgb_minmax_scaling():
    spec = GridSpec(0, 1, 1, 3, 1)
    data = np.array([[[0, 5, 10]], [[1, 1, 1]], [[2, 4, 3]]], float)
    px = decode_png(export_png(MultibandRaster(spec, ("r", "g", "b"), data)))
    assert px.shape == (1, 3, 3)
    assert px[0, :, 0].tolist() == [0, 128, 255]
    assert px[0, :, 1].tolist() == [0, 0, 0]
    assert px[0, :, 2].tolist() == [0, 255, 128]


def test_png_fixed_range_and_single_band():
    spec = GridSpec(0, 1, 1, 2, 1)
    px = decode_png(export_png(Raster(spec, [[0.0, 255.0]], [[False, False]]), value_range=(0, 255)))
    assert px.tolist() == [[0, 255]]
