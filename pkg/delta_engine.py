#!/usr/bin/env python3
"""
Delta derivation for linear-algebra expressions.

Given rank-k changes to some input matrices, derive the exact change of an
expression symbolically, then rewrite that change as a product of two
tall-skinny block matrices U * V' so it can be applied without any
matrix-matrix product. Inverses are maintained numerically with
Sherman-Morrison steps.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import FactorizationError, ShapeError, UpdateSingularityError
from matrix_core import (
    EPS_PIVOT,
    CostLedger,
    Matrix,
    mat_add,
    mat_mul,
    mat_outer,
    mat_scale,
    mat_transpose,
    zeros,
)
from program_ir import (
    ZERO,
    Add,
    DeltaBlock,
    Expr,
    Inverse,
    Mul,
    Scale,
    Sub,
    Transpose,
    Var,
    Zero,
    format_expr,
    free_vars,
    is_zero,
)

logger = logging.getLogger(__name__)

Atoms = Tuple[Expr, ...]
Monomial = Tuple[float, Atoms]


# ===== DELTA TYPES =====

@dataclass(frozen=True)
class RankKUpdate:
    """Change ``u @ v.T`` to input matrix ``target``; u is rows x k, v is cols x k"""

    target: str
    u: Matrix
    v: Matrix

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    def check(self, shape: Tuple[int, int]) -> None:
        rows, cols = shape
        if self.u.ndim != 2 or self.v.ndim != 2 or self.u.shape[1] != self.v.shape[1]:
            raise ShapeError(f"update to '{self.target}': factors must be 2-D with equal column counts")
        if self.u.shape[0] != rows or self.v.shape[0] != cols:
            raise ShapeError(
                f"update to '{self.target}' ({rows}x{cols}) has factors "
                f"{self.u.shape[0]}x{self.rank} and {self.v.shape[0]}x{self.rank}"
            )
        if self.rank > min(rows, cols):
            raise ShapeError(f"update to '{self.target}' has rank {self.rank} > min({rows}, {cols})")

    def dense(self) -> Matrix:
        return self.u @ self.v.T


@dataclass(frozen=True)
class FactoredDelta:
    """
    Symbolic delta ``U * V'`` of matrix ``owner``.

    ``U`` and ``V`` are column groups; group ``j`` has ``widths[j]`` columns per
    unit of update rank, the same on both sides.
    """

    owner: str
    U: Tuple[Expr, ...] = ()
    V: Tuple[Expr, ...] = ()
    widths: Tuple[int, ...] = ()

    @property
    def width(self) -> int:
        return sum(self.widths)

    @property
    def is_zero(self) -> bool:
        return not self.U

    def as_expr(self) -> Expr:
        """The delta as a sum of block outer products"""
        result: Expr = ZERO
        for left, right in zip(self.U, self.V):
            term = Mul(left, Transpose(right))
            result = term if is_zero(result) else Add(result, term)
        return result


@dataclass(frozen=True)
class DenseDelta:
    """Delta of ``owner`` kept as a single materialized matrix named ``name``"""

    owner: str
    name: str

    def as_expr(self) -> Expr:
        return Var(self.name)


EnvEntry = Union[FactoredDelta, DenseDelta]


@dataclass
class DeltaEnv:
    """Deltas of every matrix affected so far, in statement order"""

    entries: List[Tuple[str, EnvEntry]] = field(default_factory=list)

    def append(self, name: str, delta: EnvEntry) -> None:
        self.entries.append((name, delta))

    def get(self, name: str) -> Optional[EnvEntry]:
        for entry_name, delta in self.entries:
            if entry_name == name:
                return delta
        return None

    def __contains__(self, name: str) -> bool:
        return self.get(name) is not None

    def __iter__(self) -> Iterator[Tuple[str, EnvEntry]]:
        return iter(self.entries)

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.entries]


@dataclass
class FactoredValue:
    """Numeric factored delta ``U @ V.T``"""

    U: Matrix
    V: Matrix

    @property
    def width(self) -> int:
        return self.U.shape[1]

    def dense(self, ledger: Optional[CostLedger] = None) -> Matrix:
        if ledger is None:
            return self.U @ self.V.T
        return mat_outer(self.U, self.V, ledger)


# ===== SYMBOLIC DERIVATION =====

def _add(a: Expr, b: Expr) -> Expr:
    if is_zero(a):
        return b
    if is_zero(b):
        return a
    return Add(a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if is_zero(b):
        return a
    if is_zero(a):
        return Scale(-1.0, b)
    return Sub(a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if is_zero(a) or is_zero(b):
        return ZERO
    return Mul(a, b)


def _derive_single(e: Expr, name: str, delta: Expr) -> Expr:
    """Delta of ``e`` when only matrix ``name`` changes by ``delta``"""
    if isinstance(e, Var):
        return delta if e.name == name else ZERO
    if isinstance(e, (DeltaBlock, Zero)):
        return ZERO
    if isinstance(e, Add):
        return _add(_derive_single(e.lhs, name, delta), _derive_single(e.rhs, name, delta))
    if isinstance(e, Sub):
        return _sub(_derive_single(e.lhs, name, delta), _derive_single(e.rhs, name, delta))
    if isinstance(e, Mul):
        d_lhs = _derive_single(e.lhs, name, delta)
        d_rhs = _derive_single(e.rhs, name, delta)
        # second-order term kept: deltas are exact
        return _add(_add(_mul(d_lhs, e.rhs), _mul(e.lhs, d_rhs)), _mul(d_lhs, d_rhs))
    if isinstance(e, Scale):
        inner = _derive_single(e.expr, name, delta)
        return ZERO if is_zero(inner) else Scale(e.scalar, inner)
    if isinstance(e, Transpose):
        inner = _derive_single(e.expr, name, delta)
        return ZERO if is_zero(inner) else Transpose(inner)
    if isinstance(e, Inverse):
        inner = _derive_single(e.expr, name, delta)
        if is_zero(inner):
            return ZERO
        return Sub(Inverse(Add(e.expr, inner)), Inverse(e.expr))
    raise FactorizationError(f"cannot derive a delta for node {type(e).__name__}")


def _derive_sequential(e: Expr, entries: List[Tuple[str, EnvEntry]]) -> Expr:
    if not entries:
        return ZERO
    (name, entry), rest = entries[0], entries[1:]
    first = _derive_single(e, name, entry.as_expr())
    if not rest:
        return first
    shifted = e if is_zero(first) else Add(e, first)
    return _add(first, _derive_sequential(shifted, rest))


def derive_delta(e: Expr, env: DeltaEnv) -> Expr:
    """
    Symbolic delta of ``e`` under every change recorded in ``env``.

    Several affected matrices are handled one at a time:
    the delta for A, plus the delta for the rest evaluated at E + delta_A(E).
    Returns ZERO when ``e`` references no affected matrix.
    """
    referenced = free_vars(e)
    relevant = [(name, entry) for name, entry in env if name in referenced]
    return _derive_sequential(e, relevant)


# ===== FACTORING =====

def transpose_atom(atom: Expr) -> Expr:
    if isinstance(atom, Transpose):
        return atom.expr
    return Transpose(atom)


def expand_monomials(e: Expr) -> List[Monomial]:
    """
    Expand ``e`` into a list of ``(coefficient, factors)`` products.

    Factors are variables, delta blocks, inverses, or transposes of those.
    Identical products are merged; their order is first appearance.
    """
    raw = _expand(e)
    merged: Dict[Atoms, float] = {}
    for coef, atoms in raw:
        merged[atoms] = merged.get(atoms, 0.0) + coef
    return [(coef, atoms) for atoms, coef in merged.items() if coef != 0.0]


def _expand(e: Expr) -> List[Monomial]:
    if isinstance(e, (Var, DeltaBlock, Inverse)):
        return [(1.0, (e,))]
    if isinstance(e, Zero):
        return []
    if isinstance(e, Add):
        return _expand(e.lhs) + _expand(e.rhs)
    if isinstance(e, Sub):
        return _expand(e.lhs) + [(-c, atoms) for c, atoms in _expand(e.rhs)]
    if isinstance(e, Scale):
        return [(e.scalar * c, atoms) for c, atoms in _expand(e.expr)]
    if isinstance(e, Mul):
        right = _expand(e.rhs)
        return [(cl * cr, al + ar) for cl, al in _expand(e.lhs) for cr, ar in right]
    if isinstance(e, Transpose):
        return [
            (c, tuple(transpose_atom(a) for a in reversed(atoms)))
            for c, atoms in _expand(e.expr)
        ]
    raise FactorizationError(f"cannot expand node {type(e).__name__}")


def _is_cut(atom: Expr) -> bool:
    return isinstance(atom, Transpose) and isinstance(atom.expr, DeltaBlock)


def product(atoms: Sequence[Expr]) -> Expr:
    """Left-associated product of factors"""
    result = atoms[0]
    for atom in atoms[1:]:
        result = Mul(result, atom)
    return result


def _linear_combination(terms: Sequence[Monomial]) -> Expr:
    result: Optional[Expr] = None
    for coef, atoms in terms:
        body = product(atoms)
        if result is None:
            result = body if coef == 1.0 else Scale(coef, body)
        elif coef < 0:
            result = Sub(result, body if coef == -1.0 else Scale(-coef, body))
        else:
            result = Add(result, body if coef == 1.0 else Scale(coef, body))
    return result if result is not None else ZERO


def factor_delta(d: Expr, owner: str = "") -> FactoredDelta:
    """
    Rewrite a delta expression as ``U * V'`` with stacked column groups.

    Each product is split at its last delta factor ``... X | Y' ...``: the part up
    to ``X`` becomes a left block, the transposed remainder a right block.
    Products whose right blocks are identical share one column group (left
    blocks summed); groups whose left sums coincide are then merged with
    their right blocks summed.
    """
    if is_zero(d):
        return FactoredDelta(owner)

    monomials = expand_monomials(d)
    keyed = []
    for index, (coef, atoms) in enumerate(monomials):
        order = sum(1 for atom in atoms if _is_cut(atom))
        keyed.append((order, index, coef, atoms))
    keyed.sort(key=lambda item: (item[0], item[1]))

    # right atoms -> [width, [left terms]]
    groups: Dict[Atoms, List] = {}
    for order, _, coef, atoms in keyed:
        if order == 0:
            raise FactorizationError(
                f"Δ{owner}: product {format_expr(product(atoms))} contains no delta factor"
            )
        cut = max(i for i, atom in enumerate(atoms) if _is_cut(atom))
        left = atoms[:cut]
        if not left or not isinstance(left[-1], DeltaBlock):
            raise FactorizationError(
                f"Δ{owner}: product {format_expr(product(atoms))} has an unpaired delta factor"
            )
        block = atoms[cut].expr
        right = tuple(transpose_atom(a) for a in reversed(atoms[cut + 1:])) + (block,)
        group = groups.setdefault(right, [block.width, []])
        group[1].append((coef, left))

    # second pass: identical left sums share a group
    merged: Dict[Tuple[Monomial, ...], List] = {}
    for right, (width, lefts) in groups.items():
        key = tuple(lefts)
        entry = merged.setdefault(key, [width, []])
        entry[1].append((1.0, right))

    U, V, widths = [], [], []
    for lefts, (width, rights) in merged.items():
        U.append(_linear_combination(lefts))
        V.append(_linear_combination(rights))
        widths.append(width)

    fd = FactoredDelta(owner, tuple(U), tuple(V), tuple(widths))
    logger.debug(f"Factored Δ{owner or '?'} into {len(U)} column groups, width {fd.width}")
    return fd


def format_factored_delta(fd: FactoredDelta) -> str:
    """Debug dump: ``Δname = [U1 | U2] · [V1 | V2]ᵀ``"""
    if fd.is_zero:
        return f"Δ{fd.owner} = 0"
    left = " | ".join(format_expr(block) for block in fd.U)
    right = " | ".join(format_expr(block) for block in fd.V)
    return f"Δ{fd.owner} = [{left}] · [{right}]ᵀ"


# ===== SHERMAN-MORRISON =====

def _denominator_threshold(W: Matrix) -> float:
    scale = float(np.max(np.abs(W))) if W.size else 0.0
    return EPS_PIVOT * max(1.0, scale)


def sherman_morrison_delta(W: Matrix, u: Matrix, v: Matrix, ledger: CostLedger) -> FactoredValue:
    """
    Rank-1 change of ``W = E^-1`` when E changes by ``u v'``.

    Returns ``(p, q)`` with ``p = -(W u) / (1 + v' W u)`` and ``q = W' v``; only
    matrix-vector products are charged.
    """
    Wu = mat_mul(W, u, ledger)
    Wtv = mat_mul(mat_transpose(W), v, ledger)
    denom = 1.0 + float(mat_mul(mat_transpose(v), Wu, ledger)[0, 0])
    ledger.charge_adds(1)
    if abs(denom) <= _denominator_threshold(W):
        raise UpdateSingularityError(
            f"1 + v'Wu = {denom:.3e}: the updated matrix is singular", step=0
        )
    return FactoredValue(mat_scale(-1.0 / denom, Wu, ledger), Wtv)


def outer_products(P: Matrix, Q: Matrix) -> List[Tuple[Matrix, Matrix]]:
    """Split ``P @ Q.T`` into its column outer products"""
    return [(P[:, [j]], Q[:, [j]]) for j in range(P.shape[1])]


def apply_sequential_sm(
    W: Matrix,
    updates: Sequence[Tuple[Matrix, Matrix]],
    ledger: CostLedger,
) -> FactoredValue:
    """
    Fold a sum of outer products into ``W = E^-1`` one Sherman-Morrison step at a time.

    Step ``i`` works against ``W + R S'`` built from the earlier steps, applied
    through the factors so no n x n matrix is formed. The result has one
    column per applied outer product.
    """
    n = W.shape[0]
    if not updates:
        return FactoredValue(zeros(n, 0), zeros(n, 0))

    threshold = _denominator_threshold(W)
    Wt = mat_transpose(W)
    R: Optional[Matrix] = None
    S: Optional[Matrix] = None
    for step, (p, q) in enumerate(updates):
        Wp = mat_mul(W, p, ledger)
        Wtq = mat_mul(Wt, q, ledger)
        if R is not None:
            Wp = mat_add(Wp, mat_mul(R, mat_mul(mat_transpose(S), p, ledger), ledger), ledger)
            Wtq = mat_add(Wtq, mat_mul(S, mat_mul(mat_transpose(R), q, ledger), ledger), ledger)
        denom = 1.0 + float(mat_mul(mat_transpose(q), Wp, ledger)[0, 0])
        ledger.charge_adds(1)
        if abs(denom) <= threshold:
            raise UpdateSingularityError(
                f"Sherman-Morrison step {step}: 1 + q'Wp = {denom:.3e}, the updated matrix is singular",
                step=step,
            )
        r = mat_scale(-1.0 / denom, Wp, ledger)
        R = r if R is None else np.hstack([R, r])
        S = Wtq if S is None else np.hstack([S, Wtq])
    return FactoredValue(R, S)
