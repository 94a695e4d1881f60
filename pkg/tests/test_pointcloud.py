import numpy as np
import pytest

from canopylab.errors import (
    EmptyInputError,
    MalformedFileError,
    ParseError,
    TruncationError,
    UnsupportedFormatError,
    ValidationError,
)
from canopylab.pointcloud import (
    BoundingBox,
    PointCloud,
    compute_bounds,
    format_xyz_text,
    parse_las,
    parse_xyz_text,
    read_point_cloud,
)
from oracles import las_bytes

FORMATS = (0, 1, 2, 3, 6, 7)


def random_las_fields(rng, n, max_returns=5):
    raw = rng.integers(-2_000_000, 2_000_000, size=(n, 3))
    intensity = rng.integers(0, 65536, size=n)
    nr = rng.integers(1, max_returns + 1, size=n)
    rn = np.array([rng.integers(1, k + 1) for k in nr])
    return raw, intensity, rn, nr


def test_minimal_las_decodes_scale_and_offset():
    data = las_bytes([(150, 250, 3050)], [7], [1], [1], offset=(1000.0, 2000.0, 0.0))
    cloud = parse_las(data)
    assert len(cloud) == 1
    p = cloud[0]
    assert p.x == pytest.approx(1001.50, abs=1e-9)
    assert p.y == pytest.approx(2002.50, abs=1e-9)
    assert p.z == pytest.approx(30.50, abs=1e-9)
    assert (p.intensity, p.return_number, p.num_returns) == (7, 1, 1)


@pytest.mark.parametrize("fmt", FORMATS)
def test_hundred_point_roundtrip_every_format(fmt):
    rng = np.random.default_rng(fmt)
    max_ret = 15 if fmt >= 6 else 7
    raw, inten, rn, nr = random_las_fields(rng, 100, max_ret)
    scale = (0.01, 0.001, 0.005)
    offset = (5e5, 4.5e6, -10.0)
    version = (1, 4) if fmt >= 6 else (1, 2)
    cloud = parse_las(las_bytes(raw, inten, rn, nr, fmt=fmt, version=version, scale=scale, offset=offset))
    assert len(cloud) == 100
    expect = raw * np.array(scale) + np.array(offset)
    np.testing.assert_allclose(cloud.x, expect[:, 0], rtol=0, atol=1e-9)
    np.testing.assert_allclose(cloud.y, expect[:, 1], rtol=0, atol=1e-9)
    np.testing.assert_allclose(cloud.z, expect[:, 2], rtol=0, atol=1e-9)
    np.testing.assert_array_equal(cloud.intensity, inten)
    np.testing.assert_array_equal(cloud.return_number, rn)
    np.testing.assert_array_equal(cloud.num_returns, nr)


@pytest.mark.parametrize("version", [(1, 2), (1, 3), (1, 4)])
def test_versions_vlr_and_extra_bytes(version):
    rng = np.random.default_rng(3)
    raw, inten, rn, nr = random_las_fields(rng, 20)
    data = las_bytes(raw, inten, rn, nr, fmt=1, version=version, vlr_payload=b"x" * 37, extra_bytes=5)
    cloud = parse_las(data)
    np.testing.assert_array_equal(cloud.return_number, rn)
    np.testing.assert_allclose(cloud.x, raw[:, 0] * 0.01, atol=1e-9)


def test_order_is_record_order():
    raw = np.array([[3, 0, 0], [1, 0, 0], [2, 0, 0]])
    cloud = parse_las(las_bytes(raw, [0, 0, 0], [1, 1, 1], [1, 1, 1], scale=(1, 1, 1)))
    assert list(cloud.x) == [3.0, 1.0, 2.0]


def test_las14_uses_64bit_count():
    rng = np.random.default_rng(9)
    raw, inten, rn, nr = random_las_fields(rng, 4)
    cloud = parse_las(las_bytes(raw, inten, rn, nr, fmt=6, version=(1, 4)))
    assert len(cloud) == 4


def test_empty_input_is_malformed():
    with pytest.raises(MalformedFileError):
        parse_las(b"")


def test_bad_signature():
    data = bytearray(las_bytes([(0, 0, 0)], [0], [1], [1]))
    data[:4] = b"LASX"
    with pytest.raises(MalformedFileError):
        parse_las(bytes(data))


@pytest.mark.parametrize("fmt", [4, 5, 8, 10])
def test_unsupported_format_names_id(fmt):
    data = bytearray(las_bytes([(0, 0, 0)], [0], [1], [1]))
    data[104] = fmt
    with pytest.raises(UnsupportedFormatError, match=str(fmt)):
        parse_las(bytes(data))


def test_laz_rejected():
    data = bytearray(las_bytes([(0, 0, 0)], [0], [1], [1]))
    data[104] = 0x80 | 1
    with pytest.raises(UnsupportedFormatError):
        parse_las(bytes(data))


def test_truncated_points_report_offset():
    data = las_bytes(np.zeros((10, 3), int), [0] * 10, [1] * 10, [1] * 10)
    with pytest.raises(TruncationError) as info:
        parse_las(data[:-7])
    assert info.value.offset is not None


def test_header_truncation():
    data = las_bytes([(0, 0, 0)], [0], [1], [1])
    with pytest.raises(TruncationError):
        parse_las(data[:100])


def test_count_larger_than_body():
    data = las_bytes([(0, 0, 0)], [0], [1], [1], point_count=5)
    with pytest.raises(TruncationError):
        parse_las(data)


def test_invalid_return_fields_are_located():
    data = las_bytes([(0, 0, 0), (1, 1, 1)], [0, 0], [1, 3], [1, 2])
    with pytest.raises(ValidationError, match="1"):
        parse_las(data)


# ---------------------------------------------------------------------------
# text format


def test_text_defaults():
    cloud = parse_xyz_text("1.0 2.0 3.0")
    assert tuple(cloud[0]) == (1.0, 2.0, 3.0, 0, 1, 1)


def test_text_full_fields():
    cloud = parse_xyz_text("0 0 5 120 2 3")
    assert tuple(cloud[0]) == (0.0, 0.0, 5.0, 120, 2, 3)


def test_text_comments_commas_and_blank_lines():
    cloud = parse_xyz_text("# header\n\n1,2,3\n4, 5, 6, 7\n")
    assert len(cloud) == 2
    assert tuple(cloud[1]) == (4.0, 5.0, 6.0, 7, 1, 1)


def test_text_non_numeric_reports_line():
    with pytest.raises(ParseError) as info:
        parse_xyz_text("1 2 three")
    assert info.value.line == 1


def test_text_return_validation_reports_line():
    with pytest.raises(ValidationError) as info:
        parse_xyz_text("1 2 3\n1 2 3 0 4 2\n")
    assert info.value.line == 2


def test_text_roundtrip_and_sniffing(tmp_path):
    rng = np.random.default_rng(1)
    n = 50
    nr = rng.integers(1, 4, n)
    cloud = PointCloud(
        np.round(rng.uniform(0, 100, n), 3), np.round(rng.uniform(0, 100, n), 3),
        np.round(rng.uniform(0, 30, n), 3), rng.integers(0, 300, n), np.ones(n, int), nr,
    )
    p = tmp_path / "c.txt"
    p.write_text(format_xyz_text(cloud))
    back = read_point_cloud(p)
    np.testing.assert_allclose(back.x, cloud.x, atol=1e-9)
    np.testing.assert_array_equal(back.num_returns, nr)

    q = tmp_path / "c.las"
    q.write_bytes(las_bytes([(100, 200, 300)], [1], [1], [1]))
    assert read_point_cloud(q)[0].x == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# bounds


def test_bounds_two_points():
    cloud = PointCloud.from_points([(0, 0, 1, 0, 1, 1), (2, 3, 1, 0, 1, 1)])
    assert compute_bounds(cloud) == BoundingBox(0, 0, 2, 3)


def test_bounds_singleton():
    cloud = PointCloud.from_points([(5, 5, 0, 0, 1, 1)])
    assert compute_bounds(cloud) == BoundingBox(5, 5, 5, 5)


def test_bounds_empty_raises():
    assert PointCloud.empty().bounds is None
    with pytest.raises(EmptyInputError):
        compute_bounds(PointCloud.empty())


def test_bounds_match_linear_scan():
    rng = np.random.default_rng(5)
    pts = [(float(a), float(b), 0.0, 0, 1, 1) for a, b in rng.normal(0, 100, size=(1000, 2))]
    min_x = min_y = float("inf")
    max_x = max_y = float("-inf")
    for x, y, *_ in pts:
        min_x, max_x = min(min_x, x), max(max_x, x)
        min_y, max_y = min(min_y, y), max(max_y, y)
    assert compute_bounds(PointCloud.from_points(pts)) == BoundingBox(min_x, min_y, max_x, max_y)


def test_cloud_is_immutable():
    cloud = parse_xyz_text("1 2 3")
    with pytest.raises(ValueError):
        cloud.x[0] = 9.0
