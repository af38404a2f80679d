#!/usr/bin/env python3
"""
Iterative analytics workloads: matrix powers, sums of powers, the general
form T_{i+1} = A T_i + B and ordinary least squares, each maintained under
updates to one input matrix.

Every iterative computation follows one step plan per model. A step
``(i, a, b)`` builds iterate ``i`` from iterates ``a`` and ``b``:

    linear        (i, 1, i-1)    for i = 2..k
    exponential   (i, i/2, i/2)  for i = 2, 4, ..., k
    skip-s        exponential up to s, then (i, s, i-s) for i = 2s, 3s, ..., k

    P_i = P_a P_b
    S_i = P_a S_b + S_a                 (S_1 = I)
    T_i = P_a T_b + S_a B               (T_1 = A T_0 + B)

Incremental maintenance carries factored deltas (Q_i, R_i) for P, (Z_i, W_i)
for S and (U_i, V_i) for T; hybrid maintenance keeps the T delta as a single
matrix. All deltas are computed from pre-update values, then every view is
refreshed.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from delta_engine import FactoredValue, RankKUpdate
from errors import ConfigError, ShapeError
from matrix_core import (
    CostLedger,
    Matrix,
    identity,
    mat_accumulate,
    mat_add,
    mat_mul,
    mat_outer,
    mat_transpose,
    zeros,
)
from program_ir import Program, evaluate_program, parse_program
from trigger_compiler import TriggerSet, compile_program
from trigger_optimizer import optimize

logger = logging.getLogger(__name__)

Step = Tuple[int, int, int]

SPECTRAL_TARGET = 0.9
POWER_ITERATIONS = 50


# ===== MODELS AND STRATEGIES =====

class ModelKind(str, Enum):
    LINEAR = "lin"
    EXPONENTIAL = "exp"
    SKIP = "skip"


_MODEL_ALIASES = {
    "lin": ModelKind.LINEAR,
    "linear": ModelKind.LINEAR,
    "exp": ModelKind.EXPONENTIAL,
    "exponential": ModelKind.EXPONENTIAL,
    "skip": ModelKind.SKIP,
}


class Strategy(str, Enum):
    REEVALUATION = "reeval"
    INCREMENTAL = "incr"
    HYBRID = "hybrid"

    @classmethod
    def parse(cls, name: Union[str, "Strategy"]) -> "Strategy":
        if isinstance(name, Strategy):
            return name
        aliases = {"reevaluation": "reeval", "incremental": "incr"}
        key = aliases.get(str(name).lower(), str(name).lower())
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown strategy '{name}'; expected one of reeval, incr, hybrid")


def is_power_of_two(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


def log2_int(x: int) -> int:
    return x.bit_length() - 1


@dataclass(frozen=True)
class IterativeModel:
    """Linear, exponential or skip-s evaluation of the k-th iterate"""

    kind: ModelKind
    s: int = 0

    @classmethod
    def linear(cls) -> "IterativeModel":
        return cls(ModelKind.LINEAR)

    @classmethod
    def exponential(cls) -> "IterativeModel":
        return cls(ModelKind.EXPONENTIAL)

    @classmethod
    def skip(cls, s: int) -> "IterativeModel":
        return cls(ModelKind.SKIP, s)

    @classmethod
    def parse(cls, name: Union[str, "IterativeModel"], s: Optional[int] = None) -> "IterativeModel":
        if isinstance(name, IterativeModel):
            return name
        kind = _MODEL_ALIASES.get(str(name).lower())
        if kind is None:
            raise ConfigError(f"unknown model '{name}'; expected one of lin, exp, skip")
        if kind is ModelKind.SKIP:
            if s is None:
                raise ConfigError("the skip model needs a step size s")
            return cls.skip(s)
        return cls(kind)

    @property
    def label(self) -> str:
        return self.kind.value

    def validate(self, k: int) -> None:
        if k < 1:
            raise ConfigError(f"k must be a positive integer, got {k}")
        if self.kind is ModelKind.EXPONENTIAL and not is_power_of_two(k):
            raise ConfigError(f"the exponential model needs k to be a power of two, got {k}")
        if self.kind is ModelKind.SKIP:
            if not is_power_of_two(self.s):
                raise ConfigError(f"the skip model needs s to be a power of two, got {self.s}")
            if self.s > k or k % self.s:
                raise ConfigError(f"the skip model needs s <= k and k divisible by s, got s={self.s}, k={k}")

    def plan(self, k: int) -> List[Step]:
        """Steps ``(i, a, b)`` that reach iterate ``k``"""
        self.validate(k)
        if self.kind is ModelKind.LINEAR:
            return [(i, 1, i - 1) for i in range(2, k + 1)]
        if self.kind is ModelKind.EXPONENTIAL:
            return _doubling_plan(k)
        steps = _doubling_plan(self.s)
        steps.extend((j * self.s, self.s, (j - 1) * self.s) for j in range(2, k // self.s + 1))
        return steps

    def index_set(self, k: int) -> List[int]:
        """Iteration indices an incremental run keeps materialized"""
        return [1] + [i for i, _, _ in self.plan(k)]


def _doubling_plan(k: int) -> List[Step]:
    steps = []
    i = 2
    while i <= k:
        steps.append((i, i // 2, i // 2))
        i *= 2
    return steps


def _auxiliary_plan(plan: Sequence[Step]) -> List[Step]:
    """Doubling plan covering every left operand index ``a`` the main plan uses"""
    largest = max((a for _, a, _ in plan), default=1)
    return _doubling_plan(largest)


# ===== CHAIN EVALUATION =====

def evaluate_powers(A: Matrix, plan: Sequence[Step], ledger: CostLedger) -> Dict[int, Matrix]:
    P = {1: A}
    for i, a, b in plan:
        with ledger.statement(f"P_{i}"):
            P[i] = mat_mul(P[a], P[b], ledger)
    return P


def evaluate_sums(P: Mapping[int, Matrix], plan: Sequence[Step], n: int, ledger: CostLedger) -> Dict[int, Matrix]:
    S = {1: identity(n)}
    for i, a, b in plan:
        with ledger.statement(f"S_{i}"):
            head = P[a] if b == 1 else mat_mul(P[a], S[b], ledger)
            S[i] = mat_add(head, S[a], ledger)
    return S


def evaluate_general(
    A: Matrix,
    B: Matrix,
    T0: Matrix,
    P: Mapping[int, Matrix],
    S: Mapping[int, Matrix],
    plan: Sequence[Step],
    ledger: CostLedger,
) -> Dict[int, Matrix]:
    sb: Dict[int, Matrix] = {1: B}

    def times_b(a: int) -> Matrix:
        if a not in sb:
            sb[a] = mat_mul(S[a], B, ledger)
        return sb[a]

    with ledger.statement("T_1"):
        T = {1: mat_add(mat_mul(A, T0, ledger), B, ledger)}
    for i, a, b in plan:
        with ledger.statement(f"T_{i}"):
            T[i] = mat_add(mat_mul(P[a], T[b], ledger), times_b(a), ledger)
    return T


# ===== DELTA RECURRENCES =====

def powers_deltas(
    P: Mapping[int, Matrix],
    base: FactoredValue,
    plan: Sequence[Step],
    ledger: CostLedger,
) -> Dict[int, FactoredValue]:
    """ΔP_i = [Q_a | P_a Q_b + Q_a (R_a' Q_b)] [P_b' R_a | R_b]'"""
    deltas = {1: base}
    for i, a, b in plan:
        da, db = deltas[a], deltas[b]
        with ledger.statement(f"dP_{i}"):
            tail = mat_add(
                mat_mul(P[a], db.U, ledger),
                mat_mul(da.U, mat_mul(mat_transpose(da.V), db.U, ledger), ledger),
                ledger,
            )
            right = mat_mul(mat_transpose(P[b]), da.V, ledger)
            deltas[i] = FactoredValue(np.hstack([da.U, tail]), np.hstack([right, db.V]))
    return deltas


def sums_deltas(
    P: Mapping[int, Matrix],
    S: Mapping[int, Matrix],
    powers: Mapping[int, FactoredValue],
    plan: Sequence[Step],
    n: int,
    ledger: CostLedger,
) -> Dict[int, FactoredValue]:
    """ΔS_i = [Q_a | P_a Z_b + Q_a (R_a' Z_b) | Z_a] [S_b' R_a | W_b | W_a]'"""
    deltas = {1: FactoredValue(zeros(n, 0), zeros(n, 0))}
    for i, a, b in plan:
        q, r = powers[a].U, powers[a].V
        db, da = deltas[b], deltas[a]
        with ledger.statement(f"dS_{i}"):
            right = r if b == 1 else mat_mul(mat_transpose(S[b]), r, ledger)
            middle = mat_add(
                mat_mul(P[a], db.U, ledger),
                mat_mul(q, mat_mul(mat_transpose(r), db.U, ledger), ledger),
                ledger,
            )
            if a == b:
                middle = mat_add(middle, da.U, ledger)
                deltas[i] = FactoredValue(np.hstack([q, middle]), np.hstack([right, da.V]))
            else:
                deltas[i] = FactoredValue(np.hstack([q, middle, da.U]), np.hstack([right, db.V, da.V]))
    return deltas


def general_deltas(
    P: Mapping[int, Matrix],
    T: Mapping[int, Matrix],
    B: Matrix,
    T0: Matrix,
    powers: Mapping[int, FactoredValue],
    sums: Mapping[int, FactoredValue],
    plan: Sequence[Step],
    ledger: CostLedger,
) -> Dict[int, FactoredValue]:
    """ΔT_i = [Q_a | P_a U_b + Q_a (R_a' U_b) | Z_a] [T_b' R_a | V_b | B' W_a]'"""
    q1, r1 = powers[1].U, powers[1].V
    with ledger.statement("dT_1"):
        deltas = {1: FactoredValue(q1, mat_mul(mat_transpose(T0), r1, ledger))}
    for i, a, b in plan:
        q, r = powers[a].U, powers[a].V
        z, w = sums[a].U, sums[a].V
        db = deltas[b]
        with ledger.statement(f"dT_{i}"):
            middle = mat_add(
                mat_mul(P[a], db.U, ledger),
                mat_mul(q, mat_mul(mat_transpose(r), db.U, ledger), ledger),
                ledger,
            )
            right = mat_mul(mat_transpose(T[b]), r, ledger)
            b_side = mat_mul(mat_transpose(B), w, ledger)
            deltas[i] = FactoredValue(np.hstack([q, middle, z]), np.hstack([right, db.V, b_side]))
    return deltas


def hybrid_deltas(
    P: Mapping[int, Matrix],
    T: Mapping[int, Matrix],
    B: Matrix,
    T0: Matrix,
    powers: Mapping[int, FactoredValue],
    sums: Mapping[int, FactoredValue],
    plan: Sequence[Step],
    ledger: CostLedger,
) -> Dict[int, Matrix]:
    """ΔT_i = Q_a (R_a' T_b) + P_a ΔT_b + Q_a (R_a' ΔT_b) + Z_a (W_a' B), each ΔT_i one matrix"""
    q1, r1 = powers[1].U, powers[1].V
    with ledger.statement("dT_1"):
        deltas = {1: mat_mul(q1, mat_mul(mat_transpose(r1), T0, ledger), ledger)}
    for i, a, b in plan:
        q, r = powers[a].U, powers[a].V
        z, w = sums[a].U, sums[a].V
        with ledger.statement(f"dT_{i}"):
            delta = mat_mul(q, mat_mul(mat_transpose(r), T[b], ledger), ledger)
            delta = mat_add(delta, mat_mul(P[a], deltas[b], ledger), ledger)
            delta = mat_add(delta, mat_mul(q, mat_mul(mat_transpose(r), deltas[b], ledger), ledger), ledger)
            if z.shape[1]:
                delta = mat_add(delta, mat_mul(z, mat_mul(mat_transpose(w), B, ledger), ledger), ledger)
            deltas[i] = delta
    return deltas


def _refresh(
    views: Dict[int, Matrix],
    deltas: Mapping[int, Union[FactoredValue, Matrix]],
    prefix: str,
    ledger: CostLedger,
) -> None:
    for i, delta in deltas.items():
        with ledger.statement(f"{prefix}_{i} +="):
            if isinstance(delta, FactoredValue):
                if not delta.width:
                    continue
                delta = delta.dense(ledger)
            views[i] = mat_accumulate(views[i], delta, ledger)


# ===== WORKLOADS =====

@dataclass
class ViewState:
    """Materialized iterates and the factored deltas of the last update"""

    A: Matrix
    P: Dict[int, Matrix] = field(default_factory=dict)
    S: Dict[int, Matrix] = field(default_factory=dict)
    T: Dict[int, Matrix] = field(default_factory=dict)
    powers_deltas: Dict[int, FactoredValue] = field(default_factory=dict)
    sums_deltas: Dict[int, FactoredValue] = field(default_factory=dict)
    general_deltas: Dict[int, Union[FactoredValue, Matrix]] = field(default_factory=dict)


class Workload:
    """Common surface of everything the run and bench commands drive"""

    name = ""
    dynamic_input = ""
    allowed_strategies: Tuple[Strategy, ...] = (Strategy.REEVALUATION, Strategy.INCREMENTAL)

    def __init__(self, strategy: Union[str, Strategy]):
        self.strategy = Strategy.parse(strategy)
        if self.strategy not in self.allowed_strategies:
            allowed = ", ".join(s.value for s in self.allowed_strategies)
            raise ConfigError(
                f"strategy '{self.strategy.value}' is not valid for the {self.name} workload; "
                f"valid strategies: {allowed}"
            )
        self.inputs: Dict[str, Matrix] = {}

    @property
    def model_label(self) -> str:
        return "-"

    def update_shape(self) -> Tuple[int, int]:
        return self.inputs[self.dynamic_input].shape

    def materialize(self, inputs: Mapping[str, Matrix], ledger: CostLedger) -> None:
        raise NotImplementedError

    def apply(self, update: RankKUpdate, ledger: CostLedger) -> Matrix:
        raise NotImplementedError

    def outputs(self) -> Dict[str, Matrix]:
        raise NotImplementedError

    def oracle(self) -> Dict[str, Matrix]:
        """Outputs recomputed directly from the current inputs, outside any ledger"""
        raise NotImplementedError

    def _check_update(self, update: RankKUpdate) -> None:
        if update.target != self.dynamic_input:
            raise ConfigError(f"the {self.name} workload takes updates to '{self.dynamic_input}', not '{update.target}'")
        update.check(self.update_shape())


class IterativeWorkload(Workload):
    """Workload whose output is the k-th iterate of a recurrence over A"""

    dynamic_input = "A"
    input_names: Tuple[str, ...] = ("A",)

    def __init__(self, model: IterativeModel, strategy: Union[str, Strategy], k: int):
        super().__init__(strategy)
        model.validate(k)
        self.model = model
        self.k = k
        self.plan = model.plan(k)
        self.state: Optional[ViewState] = None

    @property
    def model_label(self) -> str:
        return self.model.label

    @property
    def incremental(self) -> bool:
        return self.strategy is not Strategy.REEVALUATION

    def materialize(self, inputs: Mapping[str, Matrix], ledger: CostLedger) -> None:
        missing = [name for name in self.input_names if name not in inputs]
        if missing:
            raise ConfigError(f"the {self.name} workload needs inputs {missing}")
        A = inputs["A"]
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ShapeError(f"the {self.name} workload needs a square A, got {A.shape[0]}x{A.shape[1]}")
        self.inputs = {name: inputs[name] for name in self.input_names}
        self.state = self._evaluate(A, ledger)

    def apply(self, update: RankKUpdate, ledger: CostLedger) -> Matrix:
        self._check_update(update)
        if self.incremental:
            self._maintain(update, ledger)
        else:
            with ledger.statement("A +="):
                A = mat_accumulate(self.state.A, mat_outer(update.u, update.v, ledger), ledger)
            self.state = self._evaluate(A, ledger)
        self.inputs["A"] = self.state.A
        return self.result

    @property
    def result(self) -> Matrix:
        raise NotImplementedError

    def outputs(self) -> Dict[str, Matrix]:
        return {f"{self.name}_{self.k}": self.result}

    @property
    def stored_view_count(self) -> int:
        """Number of iterates of the output chain currently kept"""
        return len(self._chain())

    def _chain(self) -> Dict[int, Matrix]:
        raise NotImplementedError

    def _evaluate(self, A: Matrix, ledger: CostLedger) -> ViewState:
        raise NotImplementedError

    def _maintain(self, update: RankKUpdate, ledger: CostLedger) -> None:
        raise NotImplementedError


class PowersWorkload(IterativeWorkload):
    """P_k = A^k"""

    name = "powers"

    def _evaluate(self, A: Matrix, ledger: CostLedger) -> ViewState:
        P = evaluate_powers(A, self.plan, ledger)
        if not self.incremental:
            P = {self.k: P[self.k]}
        return ViewState(A=A, P=P)

    def _maintain(self, update: RankKUpdate, ledger: CostLedger) -> None:
        state = self.state
        state.powers_deltas = powers_deltas(state.P, FactoredValue(update.u, update.v), self.plan, ledger)
        _refresh(state.P, state.powers_deltas, "P", ledger)
        state.A = state.P[1]
        logger.debug(f"🔄 powers/{self.model.label}: ΔP_{self.k} width {state.powers_deltas[self.k].width}")

    @property
    def result(self) -> Matrix:
        return self.state.P[self.k]

    def _chain(self) -> Dict[int, Matrix]:
        return self.state.P

    def oracle(self) -> Dict[str, Matrix]:
        return {f"{self.name}_{self.k}": np.linalg.matrix_power(self.inputs["A"], self.k)}


class SumsWorkload(IterativeWorkload):
    """S_k = I + A + ... + A^(k-1)"""

    name = "sums"

    def __init__(self, model: IterativeModel, strategy: Union[str, Strategy], k: int):
        super().__init__(model, strategy, k)
        self.aux_plan = _auxiliary_plan(self.plan)

    def _evaluate(self, A: Matrix, ledger: CostLedger) -> ViewState:
        P = evaluate_powers(A, self.aux_plan, ledger)
        S = evaluate_sums(P, self.plan, A.shape[0], ledger)
        if not self.incremental:
            return ViewState(A=A, S={self.k: S[self.k]})
        return ViewState(A=A, P=P, S=S)

    def _maintain(self, update: RankKUpdate, ledger: CostLedger) -> None:
        state = self.state
        n = state.A.shape[0]
        state.powers_deltas = powers_deltas(state.P, FactoredValue(update.u, update.v), self.aux_plan, ledger)
        state.sums_deltas = sums_deltas(state.P, state.S, state.powers_deltas, self.plan, n, ledger)
        _refresh(state.P, state.powers_deltas, "P", ledger)
        _refresh(state.S, state.sums_deltas, "S", ledger)
        state.A = state.P[1]

    @property
    def result(self) -> Matrix:
        return self.state.S[self.k]

    def _chain(self) -> Dict[int, Matrix]:
        return self.state.S

    def oracle(self) -> Dict[str, Matrix]:
        A = self.inputs["A"]
        total = np.zeros_like(A)
        term = np.eye(A.shape[0])
        for _ in range(self.k):
            total = total + term
            term = A @ term
        return {f"{self.name}_{self.k}": total}


class GeneralFormWorkload(IterativeWorkload):
    """T_k of T_{i+1} = A T_i + B, for updates to A"""

    name = "general"
    input_names = ("A", "B", "T0")
    allowed_strategies = (Strategy.REEVALUATION, Strategy.INCREMENTAL, Strategy.HYBRID)

    def __init__(self, model: IterativeModel, strategy: Union[str, Strategy], k: int):
        super().__init__(model, strategy, k)
        self.aux_plan = _auxiliary_plan(self.plan)

    def materialize(self, inputs: Mapping[str, Matrix], ledger: CostLedger) -> None:
        A, B, T0 = (inputs.get(name) for name in self.input_names)
        if B is not None and T0 is not None and A is not None:
            if B.shape != T0.shape or B.shape[0] != A.shape[0]:
                raise ShapeError(
                    f"general form needs B and T0 of shape {A.shape[0]}xp, "
                    f"got {B.shape[0]}x{B.shape[1]} and {T0.shape[0]}x{T0.shape[1]}"
                )
        super().materialize(inputs, ledger)

    def _evaluate(self, A: Matrix, ledger: CostLedger) -> ViewState:
        B, T0 = self.inputs["B"], self.inputs["T0"]
        P = evaluate_powers(A, self.aux_plan, ledger)
        S = evaluate_sums(P, self.aux_plan, A.shape[0], ledger)
        T = evaluate_general(A, B, T0, P, S, self.plan, ledger)
        if not self.incremental:
            return ViewState(A=A, T={self.k: T[self.k]})
        return ViewState(A=A, P=P, S=S, T=T)

    def _maintain(self, update: RankKUpdate, ledger: CostLedger) -> None:
        state = self.state
        B, T0 = self.inputs["B"], self.inputs["T0"]
        n = state.A.shape[0]
        state.powers_deltas = powers_deltas(state.P, FactoredValue(update.u, update.v), self.aux_plan, ledger)
        state.sums_deltas = sums_deltas(state.P, state.S, state.powers_deltas, self.aux_plan, n, ledger)
        recurrence = hybrid_deltas if self.strategy is Strategy.HYBRID else general_deltas
        state.general_deltas = recurrence(
            state.P, state.T, B, T0, state.powers_deltas, state.sums_deltas, self.plan, ledger
        )
        _refresh(state.P, state.powers_deltas, "P", ledger)
        _refresh(state.S, state.sums_deltas, "S", ledger)
        _refresh(state.T, state.general_deltas, "T", ledger)
        state.A = state.P[1]

    @property
    def result(self) -> Matrix:
        return self.state.T[self.k]

    def _chain(self) -> Dict[int, Matrix]:
        return self.state.T

    def oracle(self) -> Dict[str, Matrix]:
        A, B, T = self.inputs["A"], self.inputs["B"], self.inputs["T0"]
        for _ in range(self.k):
            T = A @ T + B
        return {f"{self.name}_{self.k}": T}


# ===== PROGRAM WORKLOADS =====

OLS_PROGRAM = """\
# ordinary least squares: beta = (X'X)^-1 X'Y
input X: m x n;
input Y: m x p;
W := inv(X' * X);
beta := W * X' * Y;
output beta;
"""


class ProgramWorkload(Workload):
    """A parsed program maintained by its optimized trigger, or re-evaluated"""

    def __init__(
        self,
        program: Program,
        dynamic_input: str,
        dims: Mapping[str, int],
        strategy: Union[str, Strategy],
        rank: int = 1,
        name: str = "program",
    ):
        self.name = name
        super().__init__(strategy)
        self.program = program
        self.dynamic_input = dynamic_input
        self.dims = dict(dims)
        self.triggers: TriggerSet = optimize(compile_program(program, [dynamic_input], self.dims, rank))
        self.state: Dict[str, Matrix] = {}

    def materialize(self, inputs: Mapping[str, Matrix], ledger: CostLedger) -> None:
        missing = [name for name in self.program.input_names if name not in inputs]
        if missing:
            raise ConfigError(f"program inputs {missing} have no values")
        self.inputs = {name: inputs[name] for name in self.program.input_names}
        if self.strategy is Strategy.INCREMENTAL:
            self.state = self.triggers.materialize(self.inputs, ledger)
        else:
            self.state = evaluate_program(self.program, self.inputs, ledger)

    def apply(self, update: RankKUpdate, ledger: CostLedger) -> Matrix:
        self._check_update(update)
        if self.strategy is Strategy.INCREMENTAL:
            self.triggers.apply(self.state, update, ledger)
        else:
            with ledger.statement(f"{update.target} +="):
                changed = mat_accumulate(
                    self.state[update.target], mat_outer(update.u, update.v, ledger), ledger
                )
            inputs = dict(self.inputs)
            inputs[update.target] = changed
            self.state = evaluate_program(self.program, inputs, ledger)
        self.inputs[update.target] = self.state[update.target]
        return self.state[self.program.result_names[-1]]

    def outputs(self) -> Dict[str, Matrix]:
        return {name: self.state[name] for name in self.program.result_names}

    def oracle(self) -> Dict[str, Matrix]:
        values = evaluate_program(self.program, self.inputs, CostLedger())
        return {name: values[name] for name in self.program.result_names}


class OlsWorkload(ProgramWorkload):
    """beta = (X'X)^-1 X'Y for updates to X"""

    def __init__(self, dims: Mapping[str, int], strategy: Union[str, Strategy], rank: int = 1):
        super().__init__(parse_program(OLS_PROGRAM), "X", dims, strategy, rank, name="ols")

    @property
    def beta(self) -> Matrix:
        return self.state["beta"]


# ===== OPERATIONS =====

def run_updates(
    workload: Workload,
    inputs: Mapping[str, Matrix],
    updates: Sequence[RankKUpdate],
    ledger: CostLedger,
) -> List[Matrix]:
    """
    Materialize ``workload`` and apply each update in turn.

    The initial materialization is charged to a private ledger; ``ledger``
    receives only the per-update refresh costs. Returns a copy of the output
    after every update.
    """
    workload.materialize(inputs, CostLedger())
    return [np.array(workload.apply(update, ledger)) for update in updates]


def matrix_powers(
    A: Matrix,
    k: int,
    model: IterativeModel,
    strategy: Union[str, Strategy],
    updates: Sequence[RankKUpdate],
    ledger: CostLedger,
) -> List[Matrix]:
    return run_updates(PowersWorkload(model, strategy, k), {"A": A}, updates, ledger)


def sums_of_powers(
    A: Matrix,
    k: int,
    model: IterativeModel,
    strategy: Union[str, Strategy],
    updates: Sequence[RankKUpdate],
    ledger: CostLedger,
) -> List[Matrix]:
    return run_updates(SumsWorkload(model, strategy, k), {"A": A}, updates, ledger)


def general_iteration(
    A: Matrix,
    B: Matrix,
    T0: Matrix,
    k: int,
    model: IterativeModel,
    strategy: Union[str, Strategy],
    updates: Sequence[RankKUpdate],
    ledger: CostLedger,
) -> List[Matrix]:
    workload = GeneralFormWorkload(model, strategy, k)
    return run_updates(workload, {"A": A, "B": B, "T0": T0}, updates, ledger)


def ols(
    X: Matrix,
    Y: Matrix,
    updates: Sequence[RankKUpdate],
    strategy: Union[str, Strategy],
    ledger: CostLedger,
) -> List[Matrix]:
    """beta after each update to X; the incremental path is the compiled trigger"""
    m, n = X.shape
    rank = max((u.rank for u in updates), default=1)
    workload = OlsWorkload({"m": m, "n": n, "p": Y.shape[1]}, strategy, rank)
    return run_updates(workload, {"X": X, "Y": Y}, updates, ledger)


# ===== INPUT GENERATION =====

def precondition_powers(A: Matrix) -> Matrix:
    """Scale A to unit Frobenius norm"""
    norm = float(np.linalg.norm(A))
    return A / norm if norm > 0 else np.array(A, dtype=np.float64)


def spectral_radius_estimate(A: Matrix, iterations: int = POWER_ITERATIONS, seed: int = 0) -> float:
    """Power-iteration estimate of the dominant eigenvalue magnitude"""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(A.shape[0])
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(iterations):
        y = A @ x
        estimate = float(np.linalg.norm(y))
        if estimate == 0.0:
            return 0.0
        x = y / estimate
    return estimate


def precondition_general(A: Matrix, target: float = SPECTRAL_TARGET, iterations: int = POWER_ITERATIONS) -> Matrix:
    """Scale A so its spectral radius estimate equals ``target``"""
    radius = spectral_radius_estimate(A, iterations)
    return A * (target / radius) if radius > 0 else np.array(A, dtype=np.float64)


def gradient_descent_system(X: Matrix, Y: Matrix, step: float = 1.0) -> Tuple[Matrix, Matrix]:
    """
    (A, B) such that T_{i+1} = A T_i + B is gradient descent for least squares:
    Θ_{i+1} = Θ_i - step·X'(XΘ_i - Y), i.e. A = I - step·X'X, B = step·X'Y.
    """
    n = X.shape[1]
    return np.eye(n) - step * (X.T @ X), step * (X.T @ Y)


def random_workload_inputs(name: str, dims: Mapping[str, int], rng: np.random.Generator) -> Dict[str, Matrix]:
    """Preconditioned random inputs for a builtin workload"""
    n = dims.get("n")
    if not n or n < 1:
        raise ConfigError(f"the {name} workload needs a positive dimension n")
    p = dims.get("p", 1)
    if name in ("powers", "sums"):
        return {"A": precondition_powers(rng.standard_normal((n, n)))}
    if name == "general":
        return {
            "A": precondition_general(rng.standard_normal((n, n))),
            "B": rng.standard_normal((n, p)),
            "T0": rng.standard_normal((n, p)),
        }
    if name == "ols":
        m = dims.get("m", 2 * n)
        if m < n:
            raise ConfigError(f"ols needs m >= n for an invertible X'X, got m={m}, n={n}")
        return {"X": rng.standard_normal((m, n)), "Y": rng.standard_normal((m, p))}
    raise ConfigError(f"unknown workload '{name}'; expected one of {', '.join(BUILTIN_WORKLOADS)}")


_ITERATIVE: Dict[str, Callable[[IterativeModel, Strategy, int], IterativeWorkload]] = {
    "powers": PowersWorkload,
    "sums": SumsWorkload,
    "general": GeneralFormWorkload,
}

BUILTIN_WORKLOADS = ("powers", "sums", "general", "ols")


def make_workload(
    name: str,
    model: Optional[IterativeModel],
    strategy: Union[str, Strategy],
    k: int,
    dims: Mapping[str, int],
    rank: int = 1,
) -> Workload:
    if name == "ols":
        n = dims.get("n", 0)
        full = {"m": dims.get("m", 2 * n), "n": n, "p": dims.get("p", 1)}
        return OlsWorkload(full, strategy, rank)
    if name not in _ITERATIVE:
        raise ConfigError(f"unknown workload '{name}'; expected one of {', '.join(BUILTIN_WORKLOADS)}")
    if model is None:
        raise ConfigError(f"the {name} workload needs an iterative model")
    return _ITERATIVE[name](model, strategy, k)
