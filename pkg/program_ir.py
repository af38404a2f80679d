#!/usr/bin/env python3
"""
Program representation for linear-algebra view programs.

Grammar (``.ivla`` files, UTF-8, ``#`` starts a line comment):

    program   := { decl | stmt | outputs }
    decl      := 'input' NAME ':' DIM 'x' DIM ';'
    stmt      := NAME ':=' expr ';'
    outputs   := 'output' NAME { ',' NAME } ';'
    expr      := term { ('+' | '-') term }
    term      := factor { '*' factor }
    factor    := primary { "'" }
    primary   := NAME | NUMBER | '-' NUMBER | 'inv' '(' expr ')' | '(' expr ')'

Numeric factors inside a term multiply into one scalar: ``2 * A * 3`` is
``Scale(6, A)``. DIM is a dimension symbol (``n``) or an integer literal.
"""

import logging
import re
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Set, Tuple, Union

import numpy as np

from errors import ConfigError, IvlaError, ParseError, ShapeError, UseBeforeDefError
from matrix_core import (
    CostLedger,
    Matrix,
    mat_add,
    mat_inverse,
    mat_mul,
    mat_scale,
    mat_sub,
    mat_transpose,
)

logger = logging.getLogger(__name__)

KEYWORDS = {"input", "output", "inv"}


# ===== EXPRESSIONS =====

class Expr:
    """Base class of expression nodes"""

    __slots__ = ()


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Add(Expr):
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class Sub(Expr):
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class Mul(Expr):
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class Scale(Expr):
    scalar: float
    expr: Expr


@dataclass(frozen=True)
class Transpose(Expr):
    expr: Expr


@dataclass(frozen=True)
class Inverse(Expr):
    expr: Expr


@dataclass(frozen=True)
class DeltaBlock(Expr):
    """Named factor block of a delta; it has ``width`` columns per unit of update rank"""

    name: str
    rows: "Dim"
    width: int


@dataclass(frozen=True)
class Zero(Expr):
    """The zero delta"""


ZERO = Zero()


@dataclass(frozen=True)
class BlockWidth:
    """Column count of a factor block: ``width`` times the update rank"""

    width: int


Dim = Union[str, int, BlockWidth]
Shape = Tuple[Dim, Dim]

LEAVES = (Var, DeltaBlock, Zero)


def is_zero(e: Expr) -> bool:
    return isinstance(e, Zero)


def children(e: Expr) -> Tuple[Expr, ...]:
    if isinstance(e, (Add, Sub, Mul)):
        return (e.lhs, e.rhs)
    if isinstance(e, (Scale, Transpose, Inverse)):
        return (e.expr,)
    return ()


def rebuild(e: Expr, new_children: Tuple[Expr, ...]) -> Expr:
    """Copy of ``e`` with its children replaced"""
    if isinstance(e, (Add, Sub, Mul)):
        return type(e)(new_children[0], new_children[1])
    if isinstance(e, Scale):
        return Scale(e.scalar, new_children[0])
    if isinstance(e, (Transpose, Inverse)):
        return type(e)(new_children[0])
    return e


def transform(e: Expr, fn: Callable[[Expr], Expr]) -> Expr:
    """Bottom-up rewrite: ``fn`` sees each node after its children were rewritten"""
    kids = children(e)
    if kids:
        e = rebuild(e, tuple(transform(k, fn) for k in kids))
    return fn(e)


def iter_nodes(e: Expr) -> Iterable[Expr]:
    """Pre-order walk"""
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children(node)))


def free_vars(e: Expr) -> Set[str]:
    return {node.name for node in iter_nodes(e) if isinstance(node, Var)}


def block_names(e: Expr) -> Set[str]:
    return {node.name for node in iter_nodes(e) if isinstance(node, DeltaBlock)}


def node_count(e: Expr) -> int:
    return sum(1 for _ in iter_nodes(e))


# ===== PROGRAMS =====

@dataclass(frozen=True)
class InputDecl:
    name: str
    rows: Dim
    cols: Dim


@dataclass(frozen=True)
class Statement:
    target: str
    expr: Expr


@dataclass(frozen=True)
class Program:
    inputs: Tuple[InputDecl, ...]
    statements: Tuple[Statement, ...]
    outputs: Tuple[str, ...] = ()

    @property
    def input_names(self) -> List[str]:
        return [decl.name for decl in self.inputs]

    @property
    def targets(self) -> List[str]:
        return [stmt.target for stmt in self.statements]

    @property
    def result_names(self) -> List[str]:
        """Declared outputs, or every statement target when none are declared"""
        return list(self.outputs) if self.outputs else self.targets

    def statement(self, target: str) -> Statement:
        for stmt in self.statements:
            if stmt.target == target:
                return stmt
        raise KeyError(target)

    def dimension_symbols(self) -> Set[str]:
        symbols = set()
        for decl in self.inputs:
            for d in (decl.rows, decl.cols):
                if isinstance(d, str):
                    symbols.add(d)
        return symbols


# ===== SHAPES =====

def format_dim(d: Dim) -> str:
    if isinstance(d, BlockWidth):
        return f"{d.width}k"
    return str(d)


def _describe(e: Expr, shape: Shape) -> str:
    return f"{format_expr(e)} ({format_dim(shape[0])}x{format_dim(shape[1])})"


def shape_of(e: Expr, shapes: Mapping[str, Shape], context: str = "") -> Shape:
    """
    Derive the shape of ``e`` given shapes for its variables.

    Works on symbolic shapes (dimension names) and numeric ones alike; a
    conformance failure raises ShapeError naming the offending sub-expression.
    """
    where = f"statement '{context}': " if context else ""

    if isinstance(e, Var):
        if e.name not in shapes:
            raise UseBeforeDefError(f"{where}unknown matrix '{e.name}'")
        return shapes[e.name]
    if isinstance(e, DeltaBlock):
        return (e.rows, BlockWidth(e.width))
    if isinstance(e, (Add, Sub)):
        left = shape_of(e.lhs, shapes, context)
        right = shape_of(e.rhs, shapes, context)
        if left != right:
            op = "add" if isinstance(e, Add) else "subtract"
            raise ShapeError(
                f"{where}cannot {op} {_describe(e.lhs, left)} and {_describe(e.rhs, right)}"
            )
        return left
    if isinstance(e, Mul):
        left = shape_of(e.lhs, shapes, context)
        right = shape_of(e.rhs, shapes, context)
        if left[1] != right[0]:
            raise ShapeError(
                f"{where}cannot multiply {_describe(e.lhs, left)} by {_describe(e.rhs, right)}"
            )
        return (left[0], right[1])
    if isinstance(e, Scale):
        return shape_of(e.expr, shapes, context)
    if isinstance(e, Transpose):
        rows, cols = shape_of(e.expr, shapes, context)
        return (cols, rows)
    if isinstance(e, Inverse):
        rows, cols = shape_of(e.expr, shapes, context)
        if rows != cols:
            raise ShapeError(f"{where}cannot invert non-square {_describe(e.expr, (rows, cols))}")
        return (rows, cols)
    raise ShapeError(f"{where}the zero delta has no shape")


def infer_shapes(program: Program) -> Dict[str, Shape]:
    """Symbolic shapes of every input and statement target"""
    shapes: Dict[str, Shape] = {decl.name: (decl.rows, decl.cols) for decl in program.inputs}
    for stmt in program.statements:
        shapes[stmt.target] = shape_of(stmt.expr, shapes, stmt.target)
    return shapes


def resolve_dim(d: Dim, dims: Mapping[str, int], rank: int = 1) -> int:
    if isinstance(d, int):
        return d
    if isinstance(d, BlockWidth):
        return d.width * rank
    if d not in dims:
        raise ConfigError(f"unbound dimension '{d}'")
    return int(dims[d])


def shape_check(program: Program, dims: Mapping[str, int]) -> Dict[str, Tuple[int, int]]:
    """
    Bind dimension symbols and verify every statement numerically.

    Returns
    -------
    dict
        name -> (rows, cols) for every input and statement target.
    """
    shapes: Dict[str, Shape] = {}
    for decl in program.inputs:
        rows = resolve_dim(decl.rows, dims)
        cols = resolve_dim(decl.cols, dims)
        if rows <= 0 or cols <= 0:
            raise ConfigError(f"input '{decl.name}' must have positive dimensions, got {rows}x{cols}")
        shapes[decl.name] = (rows, cols)
    for stmt in program.statements:
        shapes[stmt.target] = shape_of(stmt.expr, shapes, stmt.target)
    return {name: (int(r), int(c)) for name, (r, c) in shapes.items()}


# ===== EVALUATION =====

def evaluate(e: Expr, values: Mapping[str, Matrix], ledger: CostLedger) -> Matrix:
    """Evaluate ``e`` with the kernels of matrix_core, in the association the tree gives"""
    if isinstance(e, (Var, DeltaBlock)):
        try:
            return values[e.name]
        except KeyError:
            raise IvlaError(f"no value bound for '{e.name}'")
    if isinstance(e, Add):
        return mat_add(evaluate(e.lhs, values, ledger), evaluate(e.rhs, values, ledger), ledger)
    if isinstance(e, Sub):
        return mat_sub(evaluate(e.lhs, values, ledger), evaluate(e.rhs, values, ledger), ledger)
    if isinstance(e, Mul):
        return mat_mul(evaluate(e.lhs, values, ledger), evaluate(e.rhs, values, ledger), ledger)
    if isinstance(e, Scale):
        return mat_scale(e.scalar, evaluate(e.expr, values, ledger), ledger)
    if isinstance(e, Transpose):
        return mat_transpose(evaluate(e.expr, values, ledger))
    if isinstance(e, Inverse):
        return mat_inverse(evaluate(e.expr, values, ledger), ledger)
    raise IvlaError("cannot evaluate the zero delta without a shape")


def evaluate_program(
    program: Program,
    inputs: Mapping[str, Matrix],
    ledger: CostLedger,
) -> Dict[str, Matrix]:
    """Full evaluation: returns inputs plus every statement target"""
    values: Dict[str, Matrix] = {name: inputs[name] for name in program.input_names}
    for stmt in program.statements:
        with ledger.statement(stmt.target):
            values[stmt.target] = evaluate(stmt.expr, values, ledger)
    return values


# ===== PRINTING =====

def format_number(value: float) -> str:
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _atomic(e: Expr) -> bool:
    return isinstance(e, (Var, DeltaBlock, Inverse, Transpose, Zero))


def format_expr(e: Expr) -> str:
    if isinstance(e, (Var, DeltaBlock)):
        return e.name
    if isinstance(e, Zero):
        return "0"
    if isinstance(e, (Add, Sub)):
        op = "+" if isinstance(e, Add) else "-"
        rhs = format_expr(e.rhs)
        if isinstance(e.rhs, (Add, Sub)):
            rhs = f"({rhs})"
        return f"{format_expr(e.lhs)} {op} {rhs}"
    if isinstance(e, Mul):
        lhs = format_expr(e.lhs)
        if isinstance(e.lhs, (Add, Sub, Scale)):
            lhs = f"({lhs})"
        rhs = format_expr(e.rhs)
        if isinstance(e.rhs, (Add, Sub, Scale, Mul)):
            rhs = f"({rhs})"
        return f"{lhs} * {rhs}"
    if isinstance(e, Scale):
        inner = format_expr(e.expr)
        if isinstance(e.expr, (Add, Sub, Scale)):
            inner = f"({inner})"
        return f"{format_number(e.scalar)} * {inner}"
    if isinstance(e, Transpose):
        inner = format_expr(e.expr)
        return f"{inner}'" if _atomic(e.expr) else f"({inner})'"
    if isinstance(e, Inverse):
        return f"inv({format_expr(e.expr)})"
    raise IvlaError(f"unknown expression node {type(e).__name__}")


def format_program(program: Program) -> str:
    lines = []
    for decl in program.inputs:
        lines.append(f"input {decl.name}: {format_dim(decl.rows)} x {format_dim(decl.cols)};")
    for stmt in program.statements:
        lines.append(f"{stmt.target} := {format_expr(stmt.expr)};")
    if program.outputs:
        lines.append(f"output {', '.join(program.outputs)};")
    return "\n".join(lines) + "\n"


# ===== PARSER =====

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<newline>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|[:;,+\-*'()])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> List[Token]:
    tokens: List[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = match.lastgroup
        if kind == "newline":
            line += 1
            line_start = match.end()
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, match.group(), line, pos - line_start + 1))
        pos = match.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    """Recursive-descent parser over the token list"""

    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0
        self.inputs: List[InputDecl] = []
        self.statements: List[Statement] = []
        self.outputs: List[str] = []
        self.defined: Set[str] = set()

    # --- token helpers ---

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def _advance(self) -> Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def _accept(self, text: str) -> Optional[Token]:
        token = self.current
        if token.kind in ("op", "name") and token.text == text:
            return self._advance()
        return None

    def _expect(self, text: str) -> Token:
        token = self._accept(text)
        if token is None:
            found = self.current.text or "end of input"
            raise ParseError(f"expected '{text}', found '{found}'", self.current.line, self.current.col)
        return token

    def _expect_name(self) -> Token:
        token = self.current
        if token.kind != "name" or token.text in KEYWORDS:
            found = token.text or "end of input"
            raise ParseError(f"expected a name, found '{found}'", token.line, token.col)
        return self._advance()

    # --- program level ---

    def parse(self) -> Program:
        while self.current.kind != "eof":
            if self._accept("input"):
                self._input_decl()
            elif self._accept("output"):
                self._output_decl()
            else:
                self._statement()
        for name in self.outputs:
            if name not in self.defined:
                raise UseBeforeDefError(f"output '{name}' is never defined")
        return Program(tuple(self.inputs), tuple(self.statements), tuple(self.outputs))

    def _dim(self) -> Dim:
        token = self.current
        if token.kind == "number" and token.text.isdigit():
            self._advance()
            return int(token.text)
        if token.kind == "name" and token.text not in KEYWORDS:
            self._advance()
            return token.text
        raise ParseError(f"expected a dimension, found '{token.text}'", token.line, token.col)

    def _input_decl(self) -> None:
        name = self._expect_name()
        if name.text in self.defined:
            raise UseBeforeDefError(f"'{name.text}' is already defined", name.line, name.col)
        self._expect(":")
        rows = self._dim()
        self._expect("x")
        cols = self._dim()
        self._expect(";")
        self.inputs.append(InputDecl(name.text, rows, cols))
        self.defined.add(name.text)

    def _output_decl(self) -> None:
        while True:
            name = self._expect_name()
            self.outputs.append(name.text)
            if not self._accept(","):
                break
        self._expect(";")

    def _statement(self) -> None:
        target = self._expect_name()
        self._expect(":=")
        expr = self._expr()
        self._expect(";")
        if target.text in self.defined:
            raise UseBeforeDefError(
                f"'{target.text}' is already defined; each name is assigned once",
                target.line,
                target.col,
            )
        self.statements.append(Statement(target.text, expr))
        self.defined.add(target.text)

    # --- expressions ---

    def _expr(self) -> Expr:
        expr = self._term()
        while True:
            if self._accept("+"):
                expr = Add(expr, self._term())
            elif self._accept("-"):
                expr = Sub(expr, self._term())
            else:
                return expr

    def _term(self) -> Expr:
        start = self.current
        coef: Optional[float] = None
        expr: Optional[Expr] = None
        while True:
            factor = self._factor()
            if isinstance(factor, float):
                coef = factor if coef is None else coef * factor
            else:
                expr = factor if expr is None else Mul(expr, factor)
            if not self._accept("*"):
                break
        if expr is None:
            raise ParseError("a scalar must multiply a matrix", start.line, start.col)
        return expr if coef is None else Scale(coef, expr)

    def _factor(self) -> Union[Expr, float]:
        start = self.current
        base = self._primary()
        while self._accept("'"):
            if isinstance(base, float):
                raise ParseError("cannot transpose a scalar", start.line, start.col)
            base = Transpose(base)
        return base

    def _primary(self) -> Union[Expr, float]:
        token = self.current
        if token.kind == "number":
            self._advance()
            return float(token.text)
        if token.kind == "op" and token.text == "-":
            self._advance()
            number = self.current
            if number.kind != "number":
                raise ParseError("expected a number after unary '-'", number.line, number.col)
            self._advance()
            return -float(number.text)
        if self._accept("("):
            expr = self._expr()
            self._expect(")")
            return expr
        if token.kind == "name" and token.text == "inv":
            self._advance()
            self._expect("(")
            expr = self._expr()
            self._expect(")")
            return Inverse(expr)
        if token.kind == "name" and token.text not in KEYWORDS:
            self._advance()
            if token.text not in self.defined:
                raise UseBeforeDefError(f"'{token.text}' is used before it is defined", token.line, token.col)
            return Var(token.text)
        found = token.text or "end of input"
        raise ParseError(f"unexpected '{found}'", token.line, token.col)


def parse_program(text: str) -> Program:
    """
    Parse program text and check it symbolically.

    Raises ParseError (with line and column), UseBeforeDefError or ShapeError.
    """
    program = _Parser(text).parse()
    infer_shapes(program)
    logger.debug(f"Parsed program with {len(program.inputs)} inputs and {len(program.statements)} statements")
    return program


def load_program(path) -> Program:
    with open(path, "r", encoding="utf-8") as f:
        return parse_program(f.read())


def random_inputs(
    program: Program,
    dims: Mapping[str, int],
    rng: np.random.Generator,
    scale: float = 1.0,
) -> Dict[str, Matrix]:
    """Gaussian input matrices for a program, shaped by ``dims``"""
    shapes = shape_check(program, dims)
    return {
        name: scale * rng.standard_normal(shapes[name])
        for name in program.input_names
    }
