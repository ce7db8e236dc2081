"""Scaling-formula expression trees.

A formula is a binary parse tree over ``+ - * /``, integer constants and
named operational metrics. Trees are immutable; variation operators build
new trees and share untouched subtrees with their parents.
"""

from __future__ import annotations

import math
import random
import re
from typing import Iterator, Mapping, Sequence

ADD, SUB, MUL, DIV, CONST, METRIC = "+", "-", "*", "/", "const", "metric"
OPERATORS = (ADD, SUB, MUL, DIV)

CONST_MIN, CONST_MAX = 1, 100
DEFAULT_MAX_DEPTH = 15
MUTATION_SUBTREE_DEPTH = 4
DIV_EPSILON = 1e-9
# Intermediate values saturate here so deep products cannot overflow to inf.
VALUE_LIMIT = 1e15


class ExprError(ValueError):
    """Raised for malformed formulas, bad vocabularies or unbound metrics."""


class Expr:
    """One node of a scaling formula.

    ``kind`` is one of the operator symbols, ``"const"`` or ``"metric"``.
    Constants carry an ``int`` in ``value``; metrics carry the metric name.
    """

    __slots__ = ("kind", "value", "left", "right", "depth", "size")

    def __init__(self, kind, value=None, left=None, right=None):
        self.kind = kind
        self.value = value
        self.left = left
        self.right = right
        if kind in OPERATORS:
            if left is None or right is None:
                raise ExprError(f"operator {kind!r} needs two children")
            self.depth = 1 + max(left.depth, right.depth)
            self.size = 1 + left.size + right.size
        elif kind in (CONST, METRIC):
            self.depth = 1
            self.size = 1
        else:
            raise ExprError(f"unknown node kind {kind!r}")

    @classmethod
    def const(cls, value: int) -> "Expr":
        return cls(CONST, int(value))

    @classmethod
    def metric(cls, name: str) -> "Expr":
        return cls(METRIC, name)

    @classmethod
    def op(cls, kind: str, left: "Expr", right: "Expr") -> "Expr":
        return cls(kind, None, left, right)

    @property
    def is_leaf(self) -> bool:
        return self.kind in (CONST, METRIC)

    def __eq__(self, other):
        if not isinstance(other, Expr):
            return NotImplemented
        return to_text(self) == to_text(other)

    def __hash__(self):
        return hash(to_text(self))

    def __repr__(self):
        return f"Expr({to_text(self)!r})"

    def __str__(self):
        return to_text(self)

    def metrics(self) -> set[str]:
        return {n.value for n in iter_nodes(self) if n.kind == METRIC}


def iter_nodes(expr: Expr) -> Iterator[Expr]:
    """Pre-order traversal."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        if not node.is_leaf:
            stack.append(node.right)
            stack.append(node.left)


def _paths(expr: Expr) -> list[tuple[int, ...]]:
    """Pre-order list of node paths; a path is a tuple of 0 (left) / 1 (right)."""
    out = []
    stack = [(expr, ())]
    while stack:
        node, path = stack.pop()
        out.append(path)
        if not node.is_leaf:
            stack.append((node.right, path + (1,)))
            stack.append((node.left, path + (0,)))
    return out


def subtree_at(expr: Expr, path: Sequence[int]) -> Expr:
    node = expr
    for step in path:
        node = node.right if step else node.left
    return node


def replace_at(expr: Expr, path: Sequence[int], new: Expr) -> Expr:
    if not path:
        return new
    if path[0]:
        return Expr.op(expr.kind, expr.left, replace_at(expr.right, path[1:], new))
    return Expr.op(expr.kind, replace_at(expr.left, path[1:], new), expr.right)


def _check_vocabulary(vocabulary: Sequence[str]) -> list[str]:
    vocab = list(vocabulary)
    if not vocab:
        raise ExprError("metric vocabulary is empty")
    for name in vocab:
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
            raise ExprError(f"invalid metric name {name!r}")
    return vocab


def _random_leaf(vocab: list[str], rng: random.Random) -> Expr:
    if rng.random() < 0.5:
        return Expr.const(rng.randint(CONST_MIN, CONST_MAX))
    return Expr.metric(rng.choice(vocab))


def grow_random(vocabulary: Sequence[str], max_depth: int, rng: random.Random) -> Expr:
    """Grow a random tree of depth at most ``max_depth``.

    Below the depth limit each node is a leaf with probability equal to the
    share of leaf kinds among all node kinds (2 of 6); at the limit only
    leaves are produced. Leaves pick constant vs metric with equal odds and
    constants are drawn uniformly from 1..100.
    """
    vocab = _check_vocabulary(vocabulary)
    if max_depth < 1:
        raise ExprError(f"max_depth must be >= 1, got {max_depth}")
    leaf_ratio = 2 / (2 + len(OPERATORS))

    def grow(depth: int) -> Expr:
        if depth >= max_depth or rng.random() < leaf_ratio:
            return _random_leaf(vocab, rng)
        kind = rng.choice(OPERATORS)
        left = grow(depth + 1)
        right = grow(depth + 1)
        return Expr.op(kind, left, right)

    return grow(1)


def _saturate(x: float) -> float:
    if x != x:  # NaN cannot arise from finite inputs, kept as a hard stop
        raise ExprError("formula produced NaN")
    if x > VALUE_LIMIT:
        return VALUE_LIMIT
    if x < -VALUE_LIMIT:
        return -VALUE_LIMIT
    return x


def evaluate(expr: Expr, ctx: Mapping[str, float]) -> float:
    """Evaluate ``expr`` with metric bindings ``ctx``.

    Division by a denominator with magnitude below 1e-9 yields 1.
    """
    kind = expr.kind
    if kind == CONST:
        return float(expr.value)
    if kind == METRIC:
        try:
            value = ctx[expr.value]
        except KeyError:
            raise ExprError(f"metric {expr.value!r} is not bound") from None
        value = float(value)
        if not math.isfinite(value):
            raise ExprError(f"metric {expr.value!r} is not finite: {value}")
        return _saturate(value)
    a = evaluate(expr.left, ctx)
    b = evaluate(expr.right, ctx)
    if kind == ADD:
        return _saturate(a + b)
    if kind == SUB:
        return _saturate(a - b)
    if kind == MUL:
        return _saturate(a * b)
    if abs(b) < DIV_EPSILON:
        return 1.0
    return _saturate(a / b)


def crossover_one_point(a: Expr, b: Expr, rng: random.Random,
                        max_depth: int = DEFAULT_MAX_DEPTH) -> tuple[Expr, Expr]:
    """Swap one uniformly chosen subtree of ``a`` with one of ``b``.

    An offspring deeper than ``max_depth`` is replaced by its own parent.
    """
    pa = rng.choice(_paths(a))
    pb = rng.choice(_paths(b))
    sa, sb = subtree_at(a, pa), subtree_at(b, pb)
    child_a = replace_at(a, pa, sb)
    child_b = replace_at(b, pb, sa)
    if child_a.depth > max_depth:
        child_a = a
    if child_b.depth > max_depth:
        child_b = b
    return child_a, child_b


def mutate_one_point(expr: Expr, vocabulary: Sequence[str], rng: random.Random,
                     max_depth: int = DEFAULT_MAX_DEPTH,
                     subtree_depth: int = MUTATION_SUBTREE_DEPTH) -> Expr:
    """Replace one uniformly chosen subtree with a freshly grown one."""
    path = rng.choice(_paths(expr))
    child = replace_at(expr, path, grow_random(vocabulary, subtree_depth, rng))
    if child.depth > max_depth:
        return expr
    return child


def to_text(expr: Expr) -> str:
    if expr.kind == CONST:
        return str(expr.value)
    if expr.kind == METRIC:
        return expr.value
    return f"({to_text(expr.left)} {expr.kind} {to_text(expr.right)})"


_TOKEN = re.compile(r"\s*(?:(\d+)|([A-Za-z_][A-Za-z0-9_]*)|(.))")


def _tokenize(text: str) -> list[str]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # pragma: no cover - the pattern matches any char
            raise ExprError(f"cannot tokenize {text!r}")
        tokens.append(m.group(1) or m.group(2) or m.group(3))
        pos = m.end()
    return tokens


def parse_text(text: str, vocabulary: Sequence[str]) -> Expr:
    """Parse the fully parenthesized form written by :func:`to_text`."""
    vocab = set(_check_vocabulary(vocabulary))
    tokens = _tokenize(text)
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else None

    def take():
        nonlocal pos
        if pos >= len(tokens):
            raise ExprError(f"unexpected end of formula in {text!r}")
        tok = tokens[pos]
        pos += 1
        return tok

    def node() -> Expr:
        tok = take()
        if tok == "(":
            left = node()
            op = take()
            if op not in OPERATORS:
                raise ExprError(f"expected operator, got {op!r} in {text!r}")
            right = node()
            if take() != ")":
                raise ExprError(f"expected ')' in {text!r}")
            return Expr.op(op, left, right)
        if tok.isdigit():
            return Expr.const(int(tok))
        if tok in vocab:
            return Expr.metric(tok)
        raise ExprError(f"unexpected token {tok!r} in {text!r}")

    if not tokens:
        raise ExprError("empty formula")
    tree = node()
    if peek() is not None:
        raise ExprError(f"trailing input {tokens[pos:]!r} in {text!r}")
    return tree
