#!/usr/bin/env python3
"""
Trigger optimizer: transpose push-down, matrix-chain ordering, common
subexpression elimination into ``T<n>`` temporaries and inlining of
single-use temporaries, repeated until nothing changes.
"""

import logging
from dataclasses import replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from program_ir import (
    Add,
    DeltaBlock,
    Expr,
    Inverse,
    Mul,
    Scale,
    Shape,
    Sub,
    Transpose,
    Var,
    children,
    iter_nodes,
    node_count,
    rebuild,
    shape_of,
    transform,
)
from trigger_compiler import (
    Assign,
    BlockAssign,
    DenseAssign,
    ShermanMorrisonAssign,
    TriggerProgram,
    TriggerSet,
    symbolic_size,
)

logger = logging.getLogger(__name__)

MAX_PASSES = 10

Tree = object  # int leaf index or (Tree, Tree)


# ===== MATRIX CHAIN ORDER =====

def matrix_chain_order(dims: Sequence[int]) -> Tuple[int, Tree]:
    """
    Cheapest association of a product chain.

    Factor ``i`` is ``dims[i] x dims[i+1]``. Returns the multiply count and a
    binary tree of factor indices; ties keep the leftmost split.
    """
    count = len(dims) - 1
    if count < 1:
        raise ValueError("a chain needs at least one factor")
    cost = [[0] * count for _ in range(count)]
    split = [[0] * count for _ in range(count)]
    for length in range(2, count + 1):
        for i in range(count - length + 1):
            j = i + length - 1
            best: Optional[int] = None
            for k in range(i, j):
                candidate = cost[i][k] + cost[k + 1][j] + dims[i] * dims[k + 1] * dims[j + 1]
                if best is None or candidate < best:
                    best = candidate
                    split[i][j] = k
            cost[i][j] = best

    def tree(i: int, j: int) -> Tree:
        if i == j:
            return i
        k = split[i][j]
        return (tree(i, k), tree(k + 1, j))

    return cost[0][count - 1], tree(0, count - 1)


class ShapeResolver:
    """Numeric sizes of trigger expressions for cost decisions"""

    def __init__(self, shapes: Mapping[str, Shape], dims: Mapping[str, int], rank: int):
        self.shapes = shapes
        self.dims = dims
        self.rank = rank

    def size(self, e: Expr) -> Tuple[int, int]:
        rows, cols = shape_of(e, self.shapes)
        return (symbolic_size(rows, self.dims, self.rank), symbolic_size(cols, self.dims, self.rank))


def _flatten_chain(e: Expr) -> List[Expr]:
    if isinstance(e, Mul):
        return _flatten_chain(e.lhs) + _flatten_chain(e.rhs)
    return [e]


def _replace_leaves(e: Expr, leaves: List[Expr]) -> Expr:
    """Same Mul structure as ``e``, with its chain factors taken from ``leaves``"""
    if isinstance(e, Mul):
        lhs = _replace_leaves(e.lhs, leaves)
        rhs = _replace_leaves(e.rhs, leaves)
        return Mul(lhs, rhs)
    return leaves.pop(0)


def _chain_cost(e: Expr, resolver: ShapeResolver) -> int:
    if not isinstance(e, Mul):
        return 0
    rows, inner = resolver.size(e.lhs)
    cols = resolver.size(e.rhs)[1]
    return _chain_cost(e.lhs, resolver) + _chain_cost(e.rhs, resolver) + rows * inner * cols


def _build(tree: Tree, factors: List[Expr]) -> Expr:
    if isinstance(tree, int):
        return factors[tree]
    return Mul(_build(tree[0], factors), _build(tree[1], factors))


def reorder_chains(e: Expr, resolver: ShapeResolver) -> Expr:
    """Re-associate every product chain when a strictly cheaper order exists"""
    if isinstance(e, Mul):
        factors = [reorder_chains(f, resolver) for f in _flatten_chain(e)]
        current = _replace_leaves(e, list(factors))
        sizes = [resolver.size(f) for f in factors]
        dims = [sizes[0][0]] + [s[1] for s in sizes]
        best, tree = matrix_chain_order(dims)
        if best < _chain_cost(current, resolver):
            return _build(tree, factors)
        return current
    kids = children(e)
    if not kids:
        return e
    return rebuild(e, tuple(reorder_chains(k, resolver) for k in kids))


# ===== TRANSPOSES =====

def _transpose_of(e: Expr) -> Expr:
    if isinstance(e, Transpose):
        return e.expr
    if isinstance(e, Mul):
        return Mul(_transpose_of(e.rhs), _transpose_of(e.lhs))
    if isinstance(e, (Add, Sub)):
        return type(e)(_transpose_of(e.lhs), _transpose_of(e.rhs))
    if isinstance(e, Scale):
        return Scale(e.scalar, _transpose_of(e.expr))
    return Transpose(e)


def push_transposes(e: Expr) -> Expr:
    """Move transposes down to leaves and inverses"""
    return transform(e, lambda node: _transpose_of(node.expr) if isinstance(node, Transpose) else node)


# ===== PASSES =====

def _assign_exprs(assign: Assign) -> Tuple[Expr, ...]:
    if isinstance(assign, BlockAssign):
        return assign.blocks
    if isinstance(assign, DenseAssign):
        return (assign.expr,)
    return ()


def _map_assign(assign: Assign, fn) -> Assign:
    if isinstance(assign, BlockAssign):
        return BlockAssign(assign.name, tuple(fn(b) for b in assign.blocks))
    if isinstance(assign, DenseAssign):
        return DenseAssign(assign.name, fn(assign.expr))
    return assign


def _cse_candidate(e: Expr) -> bool:
    return isinstance(e, (Mul, Add, Sub, Scale, Inverse))


def _next_temp(taken) -> str:
    index = 1
    while f"T{index}" in taken:
        index += 1
    return f"T{index}"


def _eliminate_common(t: TriggerProgram) -> TriggerProgram:
    """Hoist repeated sub-expressions into temporaries, largest first"""
    assigns = list(t.assigns)
    shapes = dict(t.shapes)
    while True:
        counts: Dict[Expr, int] = {}
        order: List[Expr] = []
        for assign in assigns:
            for root in _assign_exprs(assign):
                for node in iter_nodes(root):
                    if _cse_candidate(node):
                        if node not in counts:
                            order.append(node)
                        counts[node] = counts.get(node, 0) + 1
        repeated = [node for node in order if counts[node] >= 2]
        if not repeated:
            break
        target = max(repeated, key=node_count)
        taken = set(shapes) | {a.name for a in assigns if not isinstance(a, ShermanMorrisonAssign)}
        taken |= set(t.params)
        name = _next_temp(taken)
        shapes[name] = shape_of(target, shapes)

        first_use = next(
            i for i, a in enumerate(assigns)
            if any(target in set(iter_nodes(r)) for r in _assign_exprs(a))
        )
        replacement = Var(name)
        assigns = [
            _map_assign(a, lambda e: transform(e, lambda n: replacement if n == target else n))
            for a in assigns
        ]
        assigns.insert(first_use, BlockAssign(name, (target,)))
        logger.debug(f"ON UPDATE {t.trigger_on}: shared sub-expression hoisted into {name}")
    return replace(t, assigns=tuple(assigns), shapes=shapes)


def _references(t: TriggerProgram, assigns: Sequence[Assign], name: str) -> Tuple[int, int]:
    """(uses inside expressions, uses by name in statements)"""
    in_exprs = 0
    for assign in assigns:
        for root in _assign_exprs(assign):
            in_exprs += sum(
                1 for node in iter_nodes(root)
                if isinstance(node, (Var, DeltaBlock)) and node.name == name
            )
    by_name = 0
    for assign in assigns:
        if isinstance(assign, ShermanMorrisonAssign):
            by_name += [assign.inverse, assign.p, assign.q].count(name)
    for upd in t.updates:
        by_name += [upd.left, upd.right, upd.dense].count(name)
    return in_exprs, by_name


def _inline_single_use(t: TriggerProgram) -> TriggerProgram:
    """Inline one-block assigns used exactly once in an expression; drop unused ones"""
    assigns = list(t.assigns)
    changed = True
    while changed:
        changed = False
        for index, assign in enumerate(assigns):
            if not isinstance(assign, BlockAssign) or len(assign.blocks) != 1:
                continue
            in_exprs, by_name = _references(t, assigns, assign.name)
            if by_name or in_exprs > 1:
                continue
            body = assign.blocks[0]
            name = assign.name
            rest = assigns[:index] + assigns[index + 1:]
            if in_exprs == 1:
                rest = [
                    _map_assign(
                        a,
                        lambda e: transform(
                            e,
                            lambda n: body if isinstance(n, (Var, DeltaBlock)) and n.name == name else n,
                        ),
                    )
                    for a in rest
                ]
            assigns = rest
            changed = True
            logger.debug(f"ON UPDATE {t.trigger_on}: inlined {name}")
            break
    return replace(t, assigns=tuple(assigns))


def _reorder(t: TriggerProgram, dims: Mapping[str, int], rank: int) -> TriggerProgram:
    resolver = ShapeResolver(t.shapes, dims, rank)
    assigns = tuple(
        _map_assign(a, lambda e: reorder_chains(push_transposes(e), resolver))
        for a in t.assigns
    )
    return replace(t, assigns=assigns)


def optimize_trigger(t: TriggerProgram, dims: Mapping[str, int], rank: int = 1) -> TriggerProgram:
    for _ in range(MAX_PASSES):
        optimized = _inline_single_use(_eliminate_common(_reorder(t, dims, rank)))
        if optimized == t:
            return t
        t = optimized
    logger.warning(f"⚠️ Optimizer did not reach a fixpoint for trigger on {t.trigger_on}")
    return t


def optimize(ts: TriggerSet) -> TriggerSet:
    """
    Semantically equivalent trigger set with shared sub-expressions computed
    once and every product chain in its cheapest association.
    """
    triggers = {
        name: optimize_trigger(t, ts.dims, ts.rank)
        for name, t in ts.triggers.items()
    }
    return replace(ts, triggers=triggers)
