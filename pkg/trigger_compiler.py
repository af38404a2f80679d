#!/usr/bin/env python3
"""
Trigger compilation for linear-algebra view programs.

For every dynamic input X the compiler walks the program's statements in
order, derives each affected matrix's delta against everything changed so
far, and emits a trigger:

    ON UPDATE A BY (u,v):
        U_B := [ u | A * u + u * v' * u ];
        V_B := [ A' * v | v ];
        A += u * v';
        B += U_B * V_B';

Block assigns read only pre-update values; all ``+=`` statements run at the
end, so a failing trigger leaves the state untouched.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple, Union

import numpy as np

from delta_engine import (
    DeltaEnv,
    DenseDelta,
    FactoredDelta,
    RankKUpdate,
    apply_sequential_sm,
    derive_delta,
    factor_delta,
    outer_products,
)
from errors import ConfigError
from matrix_core import CostLedger, Matrix, mat_accumulate, mat_outer
from program_ir import (
    Add,
    DeltaBlock,
    Expr,
    Inverse,
    Program,
    Shape,
    Statement,
    Sub,
    Var,
    children,
    evaluate,
    evaluate_program,
    format_expr,
    free_vars,
    infer_shapes,
    is_zero,
    rebuild,
    resolve_dim,
    shape_check,
)

logger = logging.getLogger(__name__)

# Size assumed for a dimension symbol when no binding is given
DEFAULT_SYMBOLIC_SIZE = 1000


# ===== TRIGGER STATEMENTS =====

@dataclass(frozen=True)
class BlockAssign:
    """``name := [ block1 | block2 | ... ]``"""

    name: str
    blocks: Tuple[Expr, ...]


@dataclass(frozen=True)
class ShermanMorrisonAssign:
    """``(left, right) := sherman_morrison(inverse, p, q)`` over the columns of p and q"""

    left: str
    right: str
    inverse: str
    p: str
    q: str


@dataclass(frozen=True)
class DenseAssign:
    """``name := expr`` for a delta kept as one matrix"""

    name: str
    expr: Expr


Assign = Union[BlockAssign, ShermanMorrisonAssign, DenseAssign]


@dataclass(frozen=True)
class UpdateStatement:
    """``target += left * right'`` or ``target += dense``"""

    target: str
    left: Optional[str] = None
    right: Optional[str] = None
    dense: Optional[str] = None


@dataclass(frozen=True)
class TriggerProgram:
    trigger_on: str
    params: Tuple[str, str]
    assigns: Tuple[Assign, ...]
    updates: Tuple[UpdateStatement, ...]
    shapes: Dict[str, Shape] = field(default_factory=dict)
    fallbacks: Dict[str, str] = field(default_factory=dict)

    @property
    def affected(self) -> List[str]:
        return [u.target for u in self.updates]


@dataclass(frozen=True)
class TriggerSet:
    program: Program
    triggers: Dict[str, TriggerProgram]
    auxiliary: Tuple[Statement, ...] = ()
    dims: Dict[str, int] = field(default_factory=dict)
    rank: int = 1

    def materialize(self, inputs: Mapping[str, Matrix], ledger: CostLedger) -> Dict[str, Matrix]:
        """Evaluate every view, auxiliary ones included, from input values"""
        return evaluate_program(self.program, inputs, ledger)

    def apply(self, state: Dict[str, Matrix], update: RankKUpdate, ledger: CostLedger) -> Dict[str, Matrix]:
        if update.target not in self.triggers:
            raise ConfigError(f"no trigger for '{update.target}'; dynamic inputs are {sorted(self.triggers)}")
        return apply_trigger(self.triggers[update.target], state, update, ledger)


# ===== NAMING =====

class _Namer:
    """Hands out names not used by the program or earlier blocks"""

    def __init__(self, taken: Iterable[str]):
        self.taken: Set[str] = set(taken)

    def fresh(self, base: str) -> str:
        name = base
        suffix = 1
        while name in self.taken:
            name = f"{base}_{suffix}"
            suffix += 1
        self.taken.add(name)
        return name


def hoist_inverses(program: Program) -> Tuple[Program, Tuple[Statement, ...]]:
    """
    Move every inverse that is not a whole right-hand side into its own view.

    Returns the rewritten program and the auxiliary statements it gained.
    """
    namer = _Namer(program.input_names + program.targets)
    statements: List[Statement] = []
    auxiliary: List[Statement] = []

    def hoist(e: Expr, is_root: bool) -> Expr:
        kids = children(e)
        if kids:
            e = rebuild(e, tuple(hoist(k, False) for k in kids))
        if isinstance(e, Inverse) and not is_root:
            name = namer.fresh(f"aux{len(auxiliary) + 1}")
            stmt = Statement(name, e)
            statements.append(stmt)
            auxiliary.append(stmt)
            return Var(name)
        return e

    for stmt in program.statements:
        statements.append(Statement(stmt.target, hoist(stmt.expr, True)))

    if auxiliary:
        logger.debug(f"Hoisted {len(auxiliary)} inverse(s) into auxiliary views")
    return Program(program.inputs, tuple(statements), program.outputs), tuple(auxiliary)


# ===== COMPILATION =====

def compute_delta(e: Expr, env: DeltaEnv) -> FactoredDelta:
    """Factored delta ``P * Q'`` of ``e``: derivation followed by factoring"""
    return factor_delta(derive_delta(e, env))


def _fits(width: int, shape: Shape, dims: Mapping[str, int], rank: int) -> bool:
    rows, cols = (symbolic_size(d, dims, rank) for d in shape)
    return width * rank <= min(rows, cols) / 2


def symbolic_size(d, dims: Mapping[str, int], rank: int) -> int:
    if isinstance(d, str) and d not in dims:
        return DEFAULT_SYMBOLIC_SIZE
    return resolve_dim(d, dims, rank)


def _build_trigger(
    program: Program,
    source: str,
    shapes: Dict[str, Shape],
    dims: Mapping[str, int],
    rank: int,
) -> TriggerProgram:
    namer = _Namer(list(shapes))
    u_name, v_name = namer.fresh("u"), namer.fresh("v")
    rows, cols = shapes[source]

    env = DeltaEnv()
    env.append(source, FactoredDelta(source, (DeltaBlock(u_name, rows, 1),), (DeltaBlock(v_name, cols, 1),), (1,)))
    assigns: List[Assign] = []
    updates: List[UpdateStatement] = [UpdateStatement(source, left=u_name, right=v_name)]
    trigger_shapes: Dict[str, Shape] = dict(shapes)
    fallbacks: Dict[str, str] = {}

    def factored(target: str, left: str, right: str, width: int) -> None:
        t_rows, t_cols = shapes[target]
        env.append(target, FactoredDelta(target, (DeltaBlock(left, t_rows, width),), (DeltaBlock(right, t_cols, width),), (width,)))
        updates.append(UpdateStatement(target, left=left, right=right))

    def dense(target: str, expr: Expr, reason: str) -> None:
        name = namer.fresh(f"D_{target}")
        assigns.append(DenseAssign(name, expr))
        trigger_shapes[name] = shapes[target]
        env.append(target, DenseDelta(target, name))
        updates.append(UpdateStatement(target, dense=name))
        fallbacks[target] = reason
        logger.debug(f"ON UPDATE {source}: {target} maintained as a single-matrix delta ({reason})")

    for stmt in program.statements:
        target = stmt.target
        referenced = [name for name in free_vars(stmt.expr) if name in env]
        if not referenced:
            continue
        has_dense = any(isinstance(env.get(name), DenseDelta) for name in referenced)
        target_shape = shapes[target]

        if isinstance(stmt.expr, Inverse):
            argument = stmt.expr.expr
            d = derive_delta(argument, env)
            if is_zero(d):
                continue
            reason = "argument delta is not factored"
            if not has_dense:
                fd = factor_delta(d, target)
                if _fits(fd.width, target_shape, dims, rank):
                    p_name, q_name = namer.fresh(f"P_{target}"), namer.fresh(f"Q_{target}")
                    left, right = namer.fresh(f"U_{target}"), namer.fresh(f"V_{target}")
                    assigns.append(BlockAssign(p_name, fd.U))
                    assigns.append(BlockAssign(q_name, fd.V))
                    assigns.append(ShermanMorrisonAssign(left, right, target, p_name, q_name))
                    factored(target, left, right, fd.width)
                    continue
                reason = f"argument delta width {fd.width * rank} exceeds half of the smaller dimension"
            dense(target, Sub(Inverse(Add(argument, d)), Var(target)), reason)
            continue

        d = derive_delta(stmt.expr, env)
        if is_zero(d):
            continue
        if has_dense:
            dense(target, d, "depends on a single-matrix delta")
            continue
        fd = factor_delta(d, target)
        if not _fits(fd.width, target_shape, dims, rank):
            dense(target, d, f"factored width {fd.width * rank} exceeds half of the smaller dimension")
            continue
        left, right = namer.fresh(f"U_{target}"), namer.fresh(f"V_{target}")
        assigns.append(BlockAssign(left, fd.U))
        assigns.append(BlockAssign(right, fd.V))
        factored(target, left, right, fd.width)

    return TriggerProgram(
        trigger_on=source,
        params=(u_name, v_name),
        assigns=tuple(assigns),
        updates=tuple(updates),
        shapes=trigger_shapes,
        fallbacks=fallbacks,
    )


def compile_program(
    program: Program,
    dynamic_inputs: Iterable[str],
    dims: Optional[Mapping[str, int]] = None,
    rank: int = 1,
) -> TriggerSet:
    """
    Compile ``program`` into one trigger per dynamic input.

    Parameters
    ----------
    program : Program
        Parsed, shape-checked program.
    dynamic_inputs : iterable of str
        Inputs that receive updates.
    dims : dict, optional
        Dimension bindings; used for the rank-growth fallback and the chain
        optimizer. Unbound symbols are sized at DEFAULT_SYMBOLIC_SIZE.
    rank : int
        Expected update rank.

    Returns
    -------
    TriggerSet
    """
    dims = dict(dims or {})
    dynamic = list(dynamic_inputs)
    unknown = [name for name in dynamic if name not in program.input_names]
    if unknown:
        raise ConfigError(f"dynamic inputs {unknown} are not program inputs {program.input_names}")
    if rank < 1:
        raise ConfigError(f"update rank must be positive, got {rank}")

    normalized, auxiliary = hoist_inverses(program)
    shapes = infer_shapes(normalized)
    if dims and program.dimension_symbols() <= set(dims):
        shape_check(normalized, dims)

    triggers: Dict[str, TriggerProgram] = {}
    for name in program.input_names:
        if name in dynamic:
            triggers[name] = _build_trigger(normalized, name, shapes, dims, rank)
            logger.debug(
                f"Compiled trigger for {name}: {len(triggers[name].assigns)} assigns, "
                f"{len(triggers[name].updates)} updates"
            )
    return TriggerSet(normalized, triggers, auxiliary, dims, rank)


# ===== EXECUTION =====

def apply_trigger(
    t: TriggerProgram,
    state: Dict[str, Matrix],
    update: RankKUpdate,
    ledger: CostLedger,
) -> Dict[str, Matrix]:
    """
    Run trigger ``t`` for ``update`` against ``state`` (mutated and returned).

    Every assign sees pre-update values; the ``+=`` statements are computed
    into a scratch map and committed together, so any error leaves ``state``
    as it was.
    """
    if update.target != t.trigger_on:
        raise ConfigError(f"trigger for '{t.trigger_on}' received an update to '{update.target}'")
    update.check(state[update.target].shape)

    local: Dict[str, Matrix] = dict(state)
    local[t.params[0]] = update.u
    local[t.params[1]] = update.v

    for assign in t.assigns:
        if isinstance(assign, BlockAssign):
            with ledger.statement(assign.name):
                parts = [evaluate(block, local, ledger) for block in assign.blocks]
                local[assign.name] = parts[0] if len(parts) == 1 else np.hstack(parts)
        elif isinstance(assign, ShermanMorrisonAssign):
            with ledger.statement(assign.left):
                steps = outer_products(local[assign.p], local[assign.q])
                value = apply_sequential_sm(local[assign.inverse], steps, ledger)
                local[assign.left] = value.U
                local[assign.right] = value.V
        else:
            with ledger.statement(assign.name):
                local[assign.name] = evaluate(assign.expr, local, ledger)

    refreshed: Dict[str, Matrix] = {}
    for upd in t.updates:
        with ledger.statement(f"{upd.target} +="):
            if upd.dense is not None:
                delta = local[upd.dense]
            else:
                delta = mat_outer(local[upd.left], local[upd.right], ledger)
            refreshed[upd.target] = mat_accumulate(state[upd.target], delta, ledger)

    state.update(refreshed)
    return state


# ===== DUMP FORMAT =====

def format_assign(assign: Assign) -> str:
    if isinstance(assign, BlockAssign):
        return f"{assign.name} := [ {' | '.join(format_expr(b) for b in assign.blocks)} ];"
    if isinstance(assign, ShermanMorrisonAssign):
        return (
            f"({assign.left}, {assign.right}) := "
            f"sherman_morrison({assign.inverse}, {assign.p}, {assign.q});"
        )
    return f"{assign.name} := {format_expr(assign.expr)};"


def format_update(upd: UpdateStatement) -> str:
    if upd.dense is not None:
        return f"{upd.target} += {upd.dense};"
    return f"{upd.target} += {upd.left} * {upd.right}';"


def format_trigger(t: TriggerProgram) -> str:
    lines = [f"ON UPDATE {t.trigger_on} BY ({t.params[0]},{t.params[1]}):"]
    lines.extend(f"    {format_assign(a)}" for a in t.assigns)
    lines.extend(f"    {format_update(u)}" for u in t.updates)
    return "\n".join(lines) + "\n"


def format_trigger_set(ts: TriggerSet) -> str:
    sections = []
    if ts.auxiliary:
        sections.append("\n".join(f"VIEW {s.target} := {format_expr(s.expr)};" for s in ts.auxiliary) + "\n")
    sections.extend(format_trigger(t) for t in ts.triggers.values())
    return "\n".join(sections)
