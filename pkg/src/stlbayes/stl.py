"""Signal temporal logic over finite discrete-time trajectories.

Formulas are trees of immutable nodes over linear predicates.  Intervals on
temporal operators are integer step counts.  Boolean satisfaction and
quantitative robustness are pure functions of (trajectory, formula, time);
the until operator requires its left operand on the closed prefix ``[t, t']``
in both semantics, so the sign of a nonzero robustness always matches the
Boolean verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np


class StlError(ValueError):
    """Base class for formula construction and evaluation errors."""


class StlSyntaxError(StlError):
    """Parse failure; `position` is the character offset in the input."""

    def __init__(self, message: str, position: int):
        super().__init__(f"syntax error at offset {position}: {message}")
        self.position = position


@dataclass(frozen=True)
class LinearPredicate:
    """State predicate `offset + gradient . x >= 0`."""

    offset: float
    gradient: tuple

    def __post_init__(self):
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "gradient", tuple(float(g) for g in self.gradient))

    @property
    def gradient_array(self) -> np.ndarray:
        return np.asarray(self.gradient, dtype=float)

    def value(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (len(self.gradient),):
            raise StlError(
                f"predicate gradient has length {len(self.gradient)} but the "
                f"state has shape {x.shape}"
            )
        return self.offset + float(self.gradient_array @ x)

    def negated(self) -> "LinearPredicate":
        """Complement `{alpha >= 0}` as `{-alpha >= 0}` (boundary ignored)."""
        return LinearPredicate(-self.offset, tuple(-g for g in self.gradient))


@dataclass(frozen=True)
class OutputPredicate:
    """Predicate `offset + gradient . y >= 0` on the model output y = C(theta) x.

    Becomes a state predicate only once C(theta) is known; `bind` performs the
    fold `gradient_x = C(theta)^T gradient_y`.
    """

    offset: float
    gradient: tuple

    def __post_init__(self):
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "gradient", tuple(float(g) for g in self.gradient))

    def bind(self, c_matrix: np.ndarray) -> LinearPredicate:
        c = np.asarray(c_matrix, dtype=float)
        if c.ndim != 2 or c.shape[0] != len(self.gradient):
            raise StlError(
                f"output predicate has {len(self.gradient)} output coordinates "
                f"but C has shape {c.shape}"
            )
        return LinearPredicate(self.offset, tuple(c.T @ np.asarray(self.gradient)))


Predicate = Union[LinearPredicate, OutputPredicate]


@dataclass(frozen=True)
class TrueNode:
    def __str__(self):
        return "T"


@dataclass(frozen=True)
class Pred:
    name: str
    predicate: Predicate

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Not:
    child: "Formula"

    def __str__(self):
        return f"!{self.child}"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"

    def __str__(self):
        return f"({self.left} & {self.right})"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"

    def __str__(self):
        return f"({self.left} | {self.right})"


def _check_interval(a: int, b: int) -> None:
    if not (isinstance(a, int) and isinstance(b, int)):
        raise StlError("interval bounds must be integer step counts")
    if a < 0 or b < 0:
        raise StlError("interval bounds must be nonnegative")
    if a > b:
        raise StlError(f"invalid interval [{a},{b}]: lower bound exceeds upper")


@dataclass(frozen=True)
class Until:
    left: "Formula"
    right: "Formula"
    a: int
    b: int

    def __post_init__(self):
        _check_interval(self.a, self.b)

    def __str__(self):
        return f"({self.left} U[{self.a},{self.b}] {self.right})"


@dataclass(frozen=True)
class Eventually:
    child: "Formula"
    a: int
    b: int

    def __post_init__(self):
        _check_interval(self.a, self.b)

    def __str__(self):
        return f"F[{self.a},{self.b}] {self.child}"


@dataclass(frozen=True)
class Always:
    child: "Formula"
    a: int
    b: int

    def __post_init__(self):
        _check_interval(self.a, self.b)

    def __str__(self):
        return f"G[{self.a},{self.b}] {self.child}"


Formula = Union[TrueNode, Pred, Not, And, Or, Until, Eventually, Always]

TRUE = TrueNode()


def horizon(f: Formula) -> int:
    """Number of steps beyond t needed to decide satisfaction at t."""
    if isinstance(f, (TrueNode, Pred)):
        return 0
    if isinstance(f, Not):
        return horizon(f.child)
    if isinstance(f, (And, Or)):
        return max(horizon(f.left), horizon(f.right))
    if isinstance(f, Until):
        return f.b + max(horizon(f.left), horizon(f.right))
    if isinstance(f, (Eventually, Always)):
        return f.b + horizon(f.child)
    raise StlError(f"unknown formula node {f!r}")


def as_trajectory(xi) -> np.ndarray:
    """Validate and return a trajectory as a (T, n) float array."""
    arr = np.asarray(xi, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise StlError("trajectory must be a non-empty sequence of state vectors")
    return arr


def _require_length(xi: np.ndarray, f: Formula, t: int) -> None:
    need = t + horizon(f) + 1
    if xi.shape[0] < need:
        raise StlError(
            f"trajectory too short: need at least {need} states to evaluate "
            f"at t={t}, got {xi.shape[0]}"
        )


def _pred_value(node: Pred, x: np.ndarray) -> float:
    if isinstance(node.predicate, OutputPredicate):
        raise StlError(
            f"predicate {node.name!r} is defined on the output; bind it to a "
            "model parameter before evaluating on state trajectories"
        )
    return node.predicate.value(x)


def satisfies(xi, f: Formula, t: int = 0) -> bool:
    """Boolean satisfaction of `f` by trajectory `xi` at time `t`."""
    xi = as_trajectory(xi)
    _require_length(xi, f, t)
    return _satisfies(xi, f, t)


def _satisfies(xi: np.ndarray, f: Formula, t: int) -> bool:
    if isinstance(f, TrueNode):
        return True
    if isinstance(f, Pred):
        return _pred_value(f, xi[t]) >= 0.0
    if isinstance(f, Not):
        return not _satisfies(xi, f.child, t)
    if isinstance(f, And):
        return _satisfies(xi, f.left, t) and _satisfies(xi, f.right, t)
    if isinstance(f, Or):
        return _satisfies(xi, f.left, t) or _satisfies(xi, f.right, t)
    if isinstance(f, Until):
        for tp in range(t + f.a, t + f.b + 1):
            if _satisfies(xi, f.right, tp) and all(
                _satisfies(xi, f.left, tpp) for tpp in range(t, tp + 1)
            ):
                return True
        return False
    if isinstance(f, Eventually):
        return any(_satisfies(xi, f.child, t + i) for i in range(f.a, f.b + 1))
    if isinstance(f, Always):
        return all(_satisfies(xi, f.child, t + i) for i in range(f.a, f.b + 1))
    raise StlError(f"unknown formula node {f!r}")


def robustness(xi, f: Formula, t: int = 0) -> float:
    """Quantitative robustness margin; positive implies satisfaction."""
    xi = as_trajectory(xi)
    _require_length(xi, f, t)
    return _robustness(xi, f, t)


def _robustness(xi: np.ndarray, f: Formula, t: int) -> float:
    if isinstance(f, TrueNode):
        return math.inf
    if isinstance(f, Pred):
        return _pred_value(f, xi[t])
    if isinstance(f, Not):
        return -_robustness(xi, f.child, t)
    if isinstance(f, And):
        return min(_robustness(xi, f.left, t), _robustness(xi, f.right, t))
    if isinstance(f, Or):
        return max(_robustness(xi, f.left, t), _robustness(xi, f.right, t))
    if isinstance(f, Until):
        best = -math.inf
        prefix = math.inf
        for i in range(0, f.b + 1):
            prefix = min(prefix, _robustness(xi, f.left, t + i))
            if i >= f.a:
                best = max(best, min(_robustness(xi, f.right, t + i), prefix))
        return best
    if isinstance(f, Eventually):
        return max(_robustness(xi, f.child, t + i) for i in range(f.a, f.b + 1))
    if isinstance(f, Always):
        return min(_robustness(xi, f.child, t + i) for i in range(f.a, f.b + 1))
    raise StlError(f"unknown formula node {f!r}")


def satisfies_batch(batch, f: Formula, t: int = 0) -> np.ndarray:
    """Vectorized Boolean satisfaction over a (B, T, n) batch of trajectories."""
    arr = np.asarray(batch, dtype=float)
    if arr.ndim != 3:
        raise StlError("batch must have shape (B, T, n)")
    need = t + horizon(f) + 1
    if arr.shape[1] < need:
        raise StlError(
            f"trajectory too short: need at least {need} states, got {arr.shape[1]}"
        )
    return _satisfies_batch(arr, f, t)


def _satisfies_batch(arr: np.ndarray, f: Formula, t: int) -> np.ndarray:
    if isinstance(f, TrueNode):
        return np.ones(arr.shape[0], dtype=bool)
    if isinstance(f, Pred):
        if isinstance(f.predicate, OutputPredicate):
            raise StlError(
                f"predicate {f.name!r} is defined on the output; bind it first"
            )
        g = f.predicate.gradient_array
        return arr[:, t, :] @ g + f.predicate.offset >= 0.0
    if isinstance(f, Not):
        return ~_satisfies_batch(arr, f.child, t)
    if isinstance(f, And):
        return _satisfies_batch(arr, f.left, t) & _satisfies_batch(arr, f.right, t)
    if isinstance(f, Or):
        return _satisfies_batch(arr, f.left, t) | _satisfies_batch(arr, f.right, t)
    if isinstance(f, Until):
        out = np.zeros(arr.shape[0], dtype=bool)
        prefix = np.ones(arr.shape[0], dtype=bool)
        for i in range(0, f.b + 1):
            prefix &= _satisfies_batch(arr, f.left, t + i)
            if i >= f.a:
                out |= prefix & _satisfies_batch(arr, f.right, t + i)
        return out
    if isinstance(f, Eventually):
        out = np.zeros(arr.shape[0], dtype=bool)
        for i in range(f.a, f.b + 1):
            out |= _satisfies_batch(arr, f.child, t + i)
        return out
    if isinstance(f, Always):
        out = np.ones(arr.shape[0], dtype=bool)
        for i in range(f.a, f.b + 1):
            out &= _satisfies_batch(arr, f.child, t + i)
        return out
    raise StlError(f"unknown formula node {f!r}")


# --- parser ---------------------------------------------------------------

_PUNCT = {"(": "LPAREN", ")": "RPAREN", "!": "NOT", "&": "AND", "|": "OR",
          "[": "LBRACK", "]": "RBRACK", ",": "COMMA"}


def _tokenize(text: str):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in _PUNCT:
            tokens.append((_PUNCT[c], c, i))
            i += 1
            continue
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(("INT", text[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("WORD", text[i:j], i))
            i = j
            continue
        raise StlSyntaxError(f"unexpected character {c!r}", i)
    tokens.append(("EOF", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str, table: Mapping[str, Predicate]):
        self.text = text
        self.table = table
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str, what: str):
        tok = self.advance()
        if tok[0] != kind:
            raise StlSyntaxError(f"expected {what}", tok[2])
        return tok

    def parse_interval(self):
        self.expect("LBRACK", "'['")
        a_tok = self.expect("INT", "integer lower bound")
        self.expect("COMMA", "','")
        b_tok = self.expect("INT", "integer upper bound")
        close = self.peek()
        if close[0] != "RBRACK":
            raise StlSyntaxError("expected ']'", close[2])
        self.advance()
        a, b = int(a_tok[1]), int(b_tok[1])
        if a > b:
            raise StlSyntaxError(f"invalid interval [{a},{b}]: a > b", a_tok[2])
        return a, b

    def parse_formula(self) -> Formula:
        """Binary operators chain left-associatively with equal precedence;
        parenthesize to control grouping."""
        left = self.parse_unary()
        while True:
            kind, value, _ = self.peek()
            if kind == "AND":
                self.advance()
                left = And(left, self.parse_unary())
            elif kind == "OR":
                self.advance()
                left = Or(left, self.parse_unary())
            elif kind == "WORD" and value == "U":
                self.advance()
                a, b = self.parse_interval()
                left = Until(left, self.parse_unary(), a, b)
            else:
                return left

    def parse_unary(self) -> Formula:
        kind, value, pos = self.peek()
        if kind == "NOT":
            self.advance()
            return Not(self.parse_unary())
        if kind == "LPAREN":
            self.advance()
            node = self.parse_formula()
            self.expect("RPAREN", "')'")
            return node
        if kind == "WORD":
            self.advance()
            if value == "T":
                return TRUE
            if value in ("F", "G") and self.peek()[0] == "LBRACK":
                a, b = self.parse_interval()
                child = self.parse_unary()
                return Eventually(child, a, b) if value == "F" else Always(child, a, b)
            if value not in self.table:
                raise StlSyntaxError(f"unknown predicate name {value!r}", pos)
            return Pred(value, self.table[value])
        raise StlSyntaxError("expected a formula", pos)


def parse_stl(text: str, predicate_table: Mapping[str, Predicate]) -> Formula:
    """Parse the grammar `T | name | !f | (f & f) | (f | f) | (f U[a,b] f)
    | F[a,b] f | G[a,b] f` against a table of named predicates."""
    parser = _Parser(text, predicate_table)
    node = parser.parse_formula()
    kind, _, pos = parser.peek()
    if kind != "EOF":
        raise StlSyntaxError("unexpected trailing input", pos)
    return node


def bind_formula(f: Formula, c_matrix: np.ndarray) -> Formula:
    """Fold every output-space predicate in the tree into state space."""
    if isinstance(f, TrueNode):
        return f
    if isinstance(f, Pred):
        if isinstance(f.predicate, OutputPredicate):
            return Pred(f.name, f.predicate.bind(c_matrix))
        return f
    if isinstance(f, Not):
        return Not(bind_formula(f.child, c_matrix))
    if isinstance(f, And):
        return And(bind_formula(f.left, c_matrix), bind_formula(f.right, c_matrix))
    if isinstance(f, Or):
        return Or(bind_formula(f.left, c_matrix), bind_formula(f.right, c_matrix))
    if isinstance(f, Until):
        return Until(bind_formula(f.left, c_matrix),
                     bind_formula(f.right, c_matrix), f.a, f.b)
    if isinstance(f, Eventually):
        return Eventually(bind_formula(f.child, c_matrix), f.a, f.b)
    if isinstance(f, Always):
        return Always(bind_formula(f.child, c_matrix), f.a, f.b)
    raise StlError(f"unknown formula node {f!r}")


def to_nnf(f: Formula) -> Formula:
    """Push negations down to predicates.

    Negated temporal operators rewrite through the eventually/always duality;
    a negated until has no positive counterpart in this fragment and raises.
    """
    if isinstance(f, (TrueNode, Pred)):
        return f
    if isinstance(f, And):
        return And(to_nnf(f.left), to_nnf(f.right))
    if isinstance(f, Or):
        return Or(to_nnf(f.left), to_nnf(f.right))
    if isinstance(f, Until):
        return Until(to_nnf(f.left), to_nnf(f.right), f.a, f.b)
    if isinstance(f, Eventually):
        return Eventually(to_nnf(f.child), f.a, f.b)
    if isinstance(f, Always):
        return Always(to_nnf(f.child), f.a, f.b)
    if isinstance(f, Not):
        g = f.child
        if isinstance(g, TrueNode):
            return Not(g)
        if isinstance(g, Pred):
            return Not(g)
        if isinstance(g, Not):
            return to_nnf(g.child)
        if isinstance(g, And):
            return Or(to_nnf(Not(g.left)), to_nnf(Not(g.right)))
        if isinstance(g, Or):
            return And(to_nnf(Not(g.left)), to_nnf(Not(g.right)))
        if isinstance(g, Eventually):
            return Always(to_nnf(Not(g.child)), g.a, g.b)
        if isinstance(g, Always):
            return Eventually(to_nnf(Not(g.child)), g.a, g.b)
        if isinstance(g, Until):
            raise StlError(
                "negated until has no negation-normal form in this fragment"
            )
    raise StlError(f"unknown formula node {f!r}")
