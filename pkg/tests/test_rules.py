import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canopylab.errors import RuleSyntaxError, UnknownLayerError
from canopylab.pointcloud import PointCloud
from canopylab.raster import GridSpec
from canopylab.rules import (
    DEFAULT_TREE_RULE,
    And,
    Comparison,
    Not,
    Or,
    default_tree_rule,
    evaluate_rule,
    format_rule,
    parse_rule,
    read_rule_file,
    referenced_layers,
)
from canopylab.stats import BAND_NAMES, rasterize_stats
from fixtures import OPS, random_rule, random_stack
from oracles import fully_parenthesized, interpret


def test_parse_default_rule():
    assert parse_rule("num_returns.max >= 2 && elevation.std >= 1.0") == And(
        Comparison("num_returns.max", ">=", 2.0), Comparison("elevation.std", ">=", 1.0)
    )


def test_unknown_layer_names_token():
    with pytest.raises(UnknownLayerError, match="a.b"):
        parse_rule("a.b > 1")


def test_not_binds_tighter_than_or():
    e = parse_rule("!(elevation.mean < 3) || intensity.std != 0")
    assert e == Or(Not(Comparison("elevation.mean", "<", 3.0)), Comparison("intensity.std", "!=", 0.0))


def test_and_binds_tighter_than_or():
    a, b, c = (f"count > {k}" for k in (1, 2, 3))
    assert parse_rule(f"{a} || {b} && {c}") == parse_rule(f"{a} || ({b} && {c})")
    assert parse_rule(f"{a} && {b} || {c}") == parse_rule(f"({a} && {b}) || {c}")


def test_left_associative():
    e = parse_rule("count > 1 && count > 2 && count > 3")
    assert isinstance(e, And) and isinstance(e.left, And)


@pytest.mark.parametrize(
    "text,pos",
    [
        ("count >", 7),
        ("count > 1 &&", 12),
        ("(count > 1", 10),
        ("count > 1)", 9),
        ("count = 1", 6),
        ("count > 1 $", 10),
        ("", 0),
    ],
)
def test_syntax_errors_carry_position(text, pos):
    with pytest.raises(RuleSyntaxError) as info:
        parse_rule(text)
    assert info.value.position == pos


def test_numbers_accept_sign_and_exponent():
    assert parse_rule("elevation.min > -1.5e1").value == -15.0
    assert parse_rule("elevation.min > .5").value == 0.5


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_precedence_matches_full_parenthesization(seed):
    expr = random_rule(np.random.default_rng(seed))
    assert parse_rule(fully_parenthesized(expr)) == expr
    assert parse_rule(format_rule(expr)) == expr


def test_printer_is_minimal_on_simple_cases():
    assert format_rule(parse_rule("(count > 1) && (count < 5)")) == "count > 1 && count < 5"
    assert format_rule(parse_rule("!(count > 1 || count < 0)")) == "!(count > 1 || count < 0)"
    assert format_rule(parse_rule("count > 1 || (count > 2 || count > 3)")) == \
        "count > 1 || (count > 2 || count > 3)"


def test_evaluator_matches_interpreter():
    rng = np.random.default_rng(0)
    for _ in range(200):
        stack = random_stack(rng)
        expr = random_rule(rng)
        mask = evaluate_rule(expr, stack)
        np.testing.assert_array_equal(mask.valid, stack.valid)
        for r in range(stack.spec.height):
            for c in range(stack.spec.width):
                if not stack.valid[r, c]:
                    assert not mask.bits[r, c]
                    continue
                cell = {n: float(stack.band(n)[r, c]) for n in BAND_NAMES}
                assert bool(mask.bits[r, c]) == interpret(expr, cell)


def test_de_morgan_cell_for_cell():
    rng = np.random.default_rng(1)
    for _ in range(100):
        stack = random_stack(rng)
        a, b = random_rule(rng, 3), random_rule(rng, 3)
        assert evaluate_rule(Not(And(a, b)), stack) == evaluate_rule(Or(Not(a), Not(b)), stack)
        assert evaluate_rule(Not(Or(a, b)), stack) == evaluate_rule(And(Not(a), Not(b)), stack)


def test_std_nonnegative_rule_true_on_valid_cells():
    rng = np.random.default_rng(2)
    stack = random_stack(rng)
    mask = evaluate_rule(parse_rule("elevation.std >= 0"), stack)
    np.testing.assert_array_equal(mask.bits, stack.valid)


def test_count_rule_on_single_point_stack():
    spec = GridSpec(0.0, 5.0, 0.5, 10, 10)
    cx, cy = spec.center_of(3, 3)
    stack = rasterize_stats(PointCloud.from_points([(cx, cy, 1.0, 0, 1, 1)]), spec)
    mask = evaluate_rule(parse_rule("count == 1"), stack)
    np.testing.assert_array_equal(mask.bits, stack.valid)
    assert mask.count() == 9


def _stack_for(points):
    spec = GridSpec(0.0, 1.5, 0.5, 3, 3)
    return rasterize_stats(PointCloud.from_points(points), spec), spec


def test_default_rule_tree_like_neighbourhood():
    # multi-return points scattered over 3 m in z around the centre cell
    zs = [10.0, 11.0, 12.0, 13.0]
    pts = [(0.75 + 0.05 * k, 0.75, z, 50, 1 + k % 2, 2) for k, z in enumerate(zs)]
    stack, _ = _stack_for(pts)
    std = float(np.std(zs))
    assert stack.band("elevation.std")[1, 1] == pytest.approx(std)
    assert std >= 1.0
    assert stack.band("num_returns.max")[1, 1] == 2
    assert evaluate_rule(default_tree_rule(), stack).bits[1, 1]


def test_default_rule_flat_roof_false():
    pts = [(0.6 + 0.1 * k, 0.75, 15.0, 140, 1, 1) for k in range(4)]
    stack, _ = _stack_for(pts)
    mask = evaluate_rule(default_tree_rule(), stack)
    assert mask.valid[1, 1] and not mask.bits[1, 1]


def test_default_rule_nodata_cells_invalid():
    stack, _ = _stack_for([(0.1, 1.4, 1.0, 0, 1, 2)])
    mask = evaluate_rule(default_tree_rule(), stack)
    np.testing.assert_array_equal(mask.valid, stack.valid)
    assert not mask.valid.all()


def test_default_rule_text():
    assert default_tree_rule() == parse_rule(DEFAULT_TREE_RULE)
    assert referenced_layers(default_tree_rule()) == {"num_returns.max", "elevation.std"}


def test_rule_file(tmp_path):
    p = tmp_path / "r.txt"
    p.write_text("# canopy\nnum_returns.max >= 2\n  && elevation.std >= 1.0\n")
    assert parse_rule(read_rule_file(p)) == default_tree_rule()


def test_ops_vocabulary():
    for op in OPS:
        assert parse_rule(f"count {op} 1").op == op
