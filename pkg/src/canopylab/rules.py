"""Boolean threshold rules over statistics layers.

Grammar (``!`` binds tighter than ``&&``, which binds tighter than ``||``;
binary operators are left-associative)::

    expr       := or
    or         := and ("||" and)*
    and        := unary ("&&" unary)*
    unary      := "!" unary | "(" expr ")" | comparison
    comparison := layer op number
    op         := "<" | "<=" | ">" | ">=" | "==" | "!="
    layer      := quantity "." statistic | "count"

Evaluating a rule on a stack gives a :class:`BinaryMask`; cells that are
nodata in the stack are invalid in the result, never false.
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import RuleSyntaxError, UnknownLayerError
from .raster import BinaryMask, MultibandRaster
from .stats import BAND_NAMES, StatsStack

DEFAULT_TREE_RULE = "num_returns.max >= 2 && elevation.std >= 1.0"

OPERATORS = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "!=": operator.ne,
}


@dataclass(frozen=True)
class Comparison:
    layer: str
    op: str
    value: float


@dataclass(frozen=True)
class And:
    left: "RuleExpr"
    right: "RuleExpr"


@dataclass(frozen=True)
class Or:
    left: "RuleExpr"
    right: "RuleExpr"


@dataclass(frozen=True)
class Not:
    inner: "RuleExpr"


RuleExpr = Union[Comparison, And, Or, Not]


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)
  | (?P<op><=|>=|==|!=|<|>)
  | (?P<punct>&&|\|\||!|\(|\))
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise RuleSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str, layers):
        self.tokens = _tokenize(text)
        self.i = 0
        self.layers = layers

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def accept(self, text: str) -> bool:
        if self.tok.kind in ("punct", "op") and self.tok.text == text:
            self.i += 1
            return True
        return False

    def fail(self, expected: str):
        got = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
        raise RuleSyntaxError(f"expected {expected}, found {got}", self.tok.pos)

    def parse(self) -> RuleExpr:
        expr = self.or_()
        if self.tok.kind != "end":
            self.fail("'&&', '||' or end of input")
        return expr

    def or_(self) -> RuleExpr:
        left = self.and_()
        while self.accept("||"):
            left = Or(left, self.and_())
        return left

    def and_(self) -> RuleExpr:
        left = self.unary()
        while self.accept("&&"):
            left = And(left, self.unary())
        return left

    def unary(self) -> RuleExpr:
        if self.accept("!"):
            return Not(self.unary())
        if self.accept("("):
            inner = self.or_()
            if not self.accept(")"):
                self.fail("')'")
            return inner
        return self.comparison()

    def comparison(self) -> Comparison:
        tok = self.tok
        if tok.kind != "name":
            self.fail("a layer name, '!' or '('")
        if tok.text not in self.layers:
            raise UnknownLayerError(tok.text, tok.pos)
        self.i += 1
        op = self.tok
        if op.kind != "op":
            self.fail("a comparison operator")
        self.i += 1
        num = self.tok
        if num.kind != "number":
            self.fail("a number")
        self.i += 1
        return Comparison(tok.text, op.text, float(num.text))


def parse_rule(text: str, layers=BAND_NAMES) -> RuleExpr:
    return _Parser(text, frozenset(layers)).parse()


def default_tree_rule() -> RuleExpr:
    """Multiple returns and metre-scale vertical spread mark canopy."""
    return parse_rule(DEFAULT_TREE_RULE)


def read_rule_file(path: str | Path) -> str:
    """Rule text from a file; ``#`` comment lines are dropped, lines joined."""
    lines = Path(path).read_text().splitlines()
    return " ".join(ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#"))


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_PREC = {Or: 1, And: 2, Not: 3, Comparison: 4}


def _number(v: float) -> str:
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def format_rule(expr: RuleExpr) -> str:
    """Minimal-parenthesis text; ``parse_rule(format_rule(e)) == e``."""
    if isinstance(expr, Comparison):
        return f"{expr.layer} {expr.op} {_number(expr.value)}"
    if isinstance(expr, Not):
        inner = format_rule(expr.inner)
        return "!" + (inner if _PREC[type(expr.inner)] >= 3 else f"({inner})")
    op = " || " if isinstance(expr, Or) else " && "
    p = _PREC[type(expr)]
    left = format_rule(expr.left)
    if _PREC[type(expr.left)] < p:
        left = f"({left})"
    right = format_rule(expr.right)
    # left-associative: an equal-precedence right child needs parentheses
    if _PREC[type(expr.right)] <= p:
        right = f"({right})"
    return left + op + right


def referenced_layers(expr: RuleExpr) -> set[str]:
    if isinstance(expr, Comparison):
        return {expr.layer}
    if isinstance(expr, Not):
        return referenced_layers(expr.inner)
    return referenced_layers(expr.left) | referenced_layers(expr.right)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _eval(expr: RuleExpr, mb: MultibandRaster) -> np.ndarray:
    if isinstance(expr, Comparison):
        return OPERATORS[expr.op](mb.band(expr.layer), expr.value)
    if isinstance(expr, Not):
        return ~_eval(expr.inner, mb)
    if isinstance(expr, And):
        return _eval(expr.left, mb) & _eval(expr.right, mb)
    if isinstance(expr, Or):
        return _eval(expr.left, mb) | _eval(expr.right, mb)
    raise TypeError(f"not a rule expression: {expr!r}")


def evaluate_rule(expr: RuleExpr, stack: StatsStack | MultibandRaster) -> BinaryMask:
    mb = stack.multiband if isinstance(stack, StatsStack) else stack
    for name in sorted(referenced_layers(expr)):
        if name not in mb.names:
            raise UnknownLayerError(name)
    valid = mb.valid
    return BinaryMask(mb.spec, _eval(expr, mb) & valid, valid)
