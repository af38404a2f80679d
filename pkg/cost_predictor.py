#!/usr/bin/env python3
"""
Analytic cost predictor for the iterative workloads and OLS.

Exact counts follow the matrix_core cost convention and the step plans of
iterative_analytics, for rank-1 updates; they equal ``CostLedger.delta_ops``
of one maintained update. Asymptotic time and space classes are reported for
every valid cell and evaluated numerically for the given dimensions.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple, Union

from errors import ConfigError
from iterative_analytics import IterativeModel, ModelKind, Strategy, log2_int

logger = logging.getLogger(__name__)

R, I, H = Strategy.REEVALUATION, Strategy.INCREMENTAL, Strategy.HYBRID
LIN, EXP, SKIP = ModelKind.LINEAR, ModelKind.EXPONENTIAL, ModelKind.SKIP

Formula = Callable[..., float]
Cell = Tuple[str, Formula]


@dataclass(frozen=True)
class CostPrediction:
    workload: str
    model: str
    strategy: str
    n: int
    p: int
    k: int
    s: int
    gamma: float
    exact: Optional[int]
    time_class: str
    time_estimate: float
    space_class: str
    space_estimate: float
    stored_views: int


def _lg(x: float) -> float:
    return math.log2(x) if x > 1 else 0.0


# Time classes shared by matrix powers and sums of powers
_POWERS_TIME: Dict[Tuple[Strategy, ModelKind], Cell] = {
    (R, LIN): ("n^γ k", lambda n, p, k, s, g: n ** g * k),
    (R, EXP): ("n^γ log k", lambda n, p, k, s, g: n ** g * _lg(k)),
    (R, SKIP): ("n^γ (log s + k/s)", lambda n, p, k, s, g: n ** g * (_lg(s) + k / s)),
    (I, LIN): ("n² k²", lambda n, p, k, s, g: n ** 2 * k ** 2),
    (I, EXP): ("n² k", lambda n, p, k, s, g: n ** 2 * k),
    (I, SKIP): ("n² k²/s", lambda n, p, k, s, g: n ** 2 * k ** 2 / s),
}

_POWERS_SPACE: Dict[Tuple[Strategy, ModelKind], Cell] = {
    (R, LIN): ("n²", lambda n, p, k, s, g: n ** 2),
    (R, EXP): ("n²", lambda n, p, k, s, g: n ** 2),
    (R, SKIP): ("n²", lambda n, p, k, s, g: n ** 2),
    (I, LIN): ("n² k", lambda n, p, k, s, g: n ** 2 * k),
    (I, EXP): ("n² log k", lambda n, p, k, s, g: n ** 2 * _lg(k)),
    (I, SKIP): ("n² (log s + k/s)", lambda n, p, k, s, g: n ** 2 * (_lg(s) + k / s)),
}

_GENERAL_TIME: Dict[Tuple[Strategy, ModelKind], Cell] = {
    (R, LIN): ("p n² k", lambda n, p, k, s, g: p * n ** 2 * k),
    (R, EXP): ("(n^γ + p n²) log k", lambda n, p, k, s, g: (n ** g + p * n ** 2) * _lg(k)),
    (R, SKIP): (
        "n^γ log s + p n² (log s + k/s)",
        lambda n, p, k, s, g: n ** g * _lg(s) + p * n ** 2 * (_lg(s) + k / s),
    ),
    (I, LIN): ("(n² + p n) k²", lambda n, p, k, s, g: (n ** 2 + p * n) * k ** 2),
    (I, EXP): ("(n² + p n) k", lambda n, p, k, s, g: (n ** 2 + p * n) * k),
    (I, SKIP): ("(n² + n p) k²/s", lambda n, p, k, s, g: (n ** 2 + n * p) * k ** 2 / s),
    (H, LIN): ("p n² k", lambda n, p, k, s, g: p * n ** 2 * k),
    (H, EXP): ("p n² log k + n² k", lambda n, p, k, s, g: p * n ** 2 * _lg(k) + n ** 2 * k),
    (H, SKIP): (
        "p n² (log s + k/s) + n² s",
        lambda n, p, k, s, g: p * n ** 2 * (_lg(s) + k / s) + n ** 2 * s,
    ),
}

_GENERAL_SPACE: Dict[Tuple[Strategy, ModelKind], Cell] = {
    (R, LIN): ("n² + n p", lambda n, p, k, s, g: n ** 2 + n * p),
    (R, EXP): ("n² + n p", lambda n, p, k, s, g: n ** 2 + n * p),
    (R, SKIP): ("n² + n p", lambda n, p, k, s, g: n ** 2 + n * p),
    (I, LIN): ("n² + k n p", lambda n, p, k, s, g: n ** 2 + k * n * p),
    (I, EXP): ("(n² + n p) log k", lambda n, p, k, s, g: (n ** 2 + n * p) * _lg(k)),
    (I, SKIP): (
        "(n² + n p) log s + n p k/s",
        lambda n, p, k, s, g: (n ** 2 + n * p) * _lg(s) + n * p * k / s,
    ),
    (H, LIN): ("n² + k n p", lambda n, p, k, s, g: n ** 2 + k * n * p),
    (H, EXP): ("(n² + n p) log k", lambda n, p, k, s, g: (n ** 2 + n * p) * _lg(k)),
    (H, SKIP): (
        "(n² + n p) log s + n p k/s",
        lambda n, p, k, s, g: (n ** 2 + n * p) * _lg(s) + n * p * k / s,
    ),
}

_OLS_TIME: Dict[Strategy, Tuple[str, Callable[..., float]]] = {
    R: ("n^γ + m n² + m n p + n² min(m, p)", lambda m, n, p, g: n ** g + m * n ** 2 + m * n * p + n ** 2 * min(m, p)),
    I: ("n² + m p + n p + m n", lambda m, n, p, g: n ** 2 + m * p + n * p + m * n),
}

_TABLES = {
    "powers": (_POWERS_TIME, _POWERS_SPACE),
    "sums": (_POWERS_TIME, _POWERS_SPACE),
    "general": (_GENERAL_TIME, _GENERAL_SPACE),
}


# ===== EXACT COUNTS =====

def _multiplies(model: IterativeModel, k: int) -> int:
    return len(model.plan(k))


def powers_incremental_exact(model: IterativeModel, n: int, k: int) -> int:
    if model.kind is LIN:
        return n * n * (k * k + k - 1) + 3 * n * k * (k - 1) // 2
    if model.kind is EXP:
        return n * n * (4 * k - 3) + n * (k - 1) * (2 * k + 5) // 3
    s = model.s
    total = powers_incremental_exact(IterativeModel.exponential(), n, s)
    for j in range(2, k // s + 1):
        total += 2 * n * n * j * s + n * (2 * s + 1) * (j * s - s)
    return total


def powers_reevaluation_exact(model: IterativeModel, n: int, k: int) -> int:
    return n * n + n ** 3 * _multiplies(model, k)


def general_exact(model: IterativeModel, strategy: Strategy, n: int, p: int, k: int) -> Optional[int]:
    if model.kind is not LIN:
        return None
    if strategy is R:
        return n * n + k * p * n * (n + 1)
    if strategy is H:
        return n * n + 2 * n * p + (k - 1) * (p * n * n + 6 * n * p)
    return (
        n * n
        + 2 * n * p
        + (n * n + 3 * n) * k * (k - 1) // 2
        + n * p * (k * (k + 1) // 2 + k - 2)
    )


def stored_views(model: IterativeModel, strategy: Strategy, k: int) -> int:
    """Iterates an update keeps: the index set for incremental runs, one otherwise"""
    if strategy is R:
        return 1
    if model.kind is LIN:
        return k
    if model.kind is EXP:
        return log2_int(k) + 1
    return log2_int(model.s) + k // model.s


# ===== PREDICTION =====

def _valid_cells() -> str:
    cells = [
        f"{workload}/{model.value}/{strategy.value}"
        for workload, (time_table, _) in _TABLES.items()
        for strategy, model in time_table
    ]
    cells.extend(f"ols/-/{strategy.value}" for strategy in _OLS_TIME)
    return ", ".join(cells)


def predict_cost(
    workload: str,
    model: Union[str, IterativeModel, None],
    strategy: Union[str, Strategy],
    n: int,
    p: int = 1,
    k: int = 1,
    s: Optional[int] = None,
    gamma: float = 3.0,
    m: Optional[int] = None,
) -> CostPrediction:
    """
    Predicted cost of one rank-1 update for a workload cell.

    ``exact`` is the operation count under the ledger convention where a
    closed form is derived (powers, and linear general form); otherwise None.

    Raises
    ------
    ConfigError
        For an unknown workload or a model/strategy combination with no cell;
        the message lists every valid cell.
    """
    strategy = Strategy.parse(strategy)
    if n < 1 or p < 1:
        raise ConfigError(f"dimensions must be positive, got n={n}, p={p}")
    if not 2.0 <= gamma <= 3.0:
        raise ConfigError(f"gamma must lie in [2, 3], got {gamma}")

    if workload == "ols":
        if strategy not in _OLS_TIME:
            raise ConfigError(f"no cost cell for ols/{strategy.value}; valid cells: {_valid_cells()}")
        rows = m if m is not None else 2 * n
        label, formula = _OLS_TIME[strategy]
        return CostPrediction(
            workload, "-", strategy.value, n, p, 1, 0, gamma,
            exact=None,
            time_class=f"O({label})",
            time_estimate=float(formula(rows, n, p, gamma)),
            space_class="O(n²)",
            space_estimate=float(n * n),
            stored_views=1,
        )

    if workload not in _TABLES:
        raise ConfigError(f"unknown workload '{workload}'; valid cells: {_valid_cells()}")
    if model is None:
        raise ConfigError(f"the {workload} workload needs a model; valid cells: {_valid_cells()}")
    model = IterativeModel.parse(model, s)
    model.validate(k)
    time_table, space_table = _TABLES[workload]
    key = (strategy, model.kind)
    if key not in time_table:
        raise ConfigError(
            f"no cost cell for {workload}/{model.label}/{strategy.value}; valid cells: {_valid_cells()}"
        )

    exact: Optional[int] = None
    if workload == "powers":
        if strategy is I:
            exact = powers_incremental_exact(model, n, k)
        else:
            exact = powers_reevaluation_exact(model, n, k)
    elif workload == "general":
        exact = general_exact(model, strategy, n, p, k)

    skip = model.s if model.kind is SKIP else 1
    time_label, time_formula = time_table[key]
    space_label, space_formula = space_table[key]
    prediction = CostPrediction(
        workload,
        model.label,
        strategy.value,
        n, p, k, model.s, gamma,
        exact=exact,
        time_class=f"O({time_label})",
        time_estimate=float(time_formula(n, p, k, skip, gamma)),
        space_class=f"O({space_label})",
        space_estimate=float(space_formula(n, p, k, skip, gamma)),
        stored_views=stored_views(model, strategy, k),
    )
    logger.debug(f"📊 {workload}/{model.label}/{strategy.value}: exact={exact} class={prediction.time_class}")
    return prediction
