#!/usr/bin/env python3
"""
Dense matrix kernels with exact operation counting.

Every kernel takes a CostLedger and charges it with the fixed cost convention:

    (a x b)(b x c) multiply  ->  a*b*c mul_adds
    add / sub                ->  a*b adds
    scale                    ->  a*b mul_adds
    transpose                ->  free
    n x n inverse            ->  n**3 mul_adds

The charge never depends on which kernel actually produced the numbers, so counts
are reproducible across machines. Matrices are plain 2-D float64 numpy arrays;
vectors are n x 1 matrices.
"""

import logging
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Tuple, Union

import numpy as np
import scipy.linalg

from errors import DataError, NonFiniteError, ShapeError, SingularMatrixError

logger = logging.getLogger(__name__)

Matrix = np.ndarray

# Relative pivot threshold: a pivot is singular when |pivot| <= EPS_PIVOT * max|a_ij|
EPS_PIVOT = 1e-12

DEFAULT_LABEL = "<unlabelled>"


@dataclass
class CostLedger:
    """
    Counters of scalar operations, attributed to the statement being executed.

    ``adds`` counts additions inside delta and view expressions; ``refresh_adds``
    counts the element additions that fold a finished delta into a stored view
    (``M += D``). The closed-form costs of the iterative workloads count the
    former and not the latter, so ``delta_ops`` is the quantity compared to
    the cost predictor.
    """

    mul_adds: int = 0
    adds: int = 0
    refresh_adds: int = 0
    largest_multiply: int = 0
    per_statement: Dict[str, List[int]] = field(default_factory=dict)
    current_label: str = DEFAULT_LABEL

    def _entry(self) -> List[int]:
        return self.per_statement.setdefault(self.current_label, [0, 0, 0])

    def charge_multiply(self, count: int) -> None:
        self.mul_adds += count
        self._entry()[0] += count
        if count > self.largest_multiply:
            self.largest_multiply = count

    def charge_mul_adds(self, count: int) -> None:
        self.mul_adds += count
        self._entry()[0] += count

    def charge_adds(self, count: int) -> None:
        self.adds += count
        self._entry()[1] += count

    def charge_refresh(self, count: int) -> None:
        self.refresh_adds += count
        self._entry()[2] += count

    @contextmanager
    def statement(self, label: str) -> Iterator["CostLedger"]:
        """Attribute every charge inside the block to ``label``"""
        previous = self.current_label
        self.current_label = label
        try:
            yield self
        finally:
            self.current_label = previous

    @property
    def delta_ops(self) -> int:
        return self.mul_adds + self.adds

    @property
    def total_adds(self) -> int:
        return self.adds + self.refresh_adds

    def snapshot(self) -> Tuple[int, int, int]:
        return (self.mul_adds, self.adds, self.refresh_adds)

    def since(self, snapshot: Tuple[int, int, int]) -> Tuple[int, int, int]:
        """Counts charged after ``snapshot`` was taken"""
        return (
            self.mul_adds - snapshot[0],
            self.adds - snapshot[1],
            self.refresh_adds - snapshot[2],
        )

    def statement_totals(self) -> Tuple[int, int, int]:
        mul = sum(entry[0] for entry in self.per_statement.values())
        add = sum(entry[1] for entry in self.per_statement.values())
        refresh = sum(entry[2] for entry in self.per_statement.values())
        return (mul, add, refresh)


def as_matrix(data) -> Matrix:
    """Coerce array-like data to a 2-D float64 matrix (1-D input becomes a column)"""
    m = np.asarray(data, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    elif m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got an array with {m.ndim} dimensions")
    return m


def identity(n: int) -> Matrix:
    return np.eye(n, dtype=np.float64)


def zeros(rows: int, cols: int) -> Matrix:
    return np.zeros((rows, cols), dtype=np.float64)


def _shape(m: Matrix) -> str:
    return f"{m.shape[0]}x{m.shape[1]}"


def _checked(result: Matrix, op: str) -> Matrix:
    if result.size and not np.isfinite(result).all():
        raise NonFiniteError(f"{op} produced a non-finite entry")
    return result


def naive_mat_mul(a: Matrix, b: Matrix) -> Matrix:
    """Reference triple-loop product (the gamma = 3 kernel)"""
    rows, inner = a.shape
    cols = b.shape[1]
    out = np.zeros((rows, cols), dtype=np.float64)
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for t in range(inner):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def mat_mul(a: Matrix, b: Matrix, ledger: CostLedger, kernel: str = "numpy") -> Matrix:
    """
    Matrix product ``a @ b``.

    Parameters
    ----------
    a, b : Matrix
        Conforming operands (``a.cols == b.rows``).
    ledger : CostLedger
        Charged ``a.rows * a.cols * b.cols`` mul_adds.
    kernel : str
        ``"numpy"`` (default) or ``"naive"`` for the triple loop.

    Returns
    -------
    Matrix
        The ``a.rows x b.cols`` product.
    """
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {_shape(a)} by {_shape(b)}")
    ledger.charge_multiply(a.shape[0] * a.shape[1] * b.shape[1])
    if kernel == "naive":
        result = naive_mat_mul(a, b)
    else:
        result = a @ b
    return _checked(result, "multiply")


def mat_outer(u: Matrix, v: Matrix, ledger: CostLedger) -> Matrix:
    """``u @ v.T`` for factor blocks of equal width"""
    return mat_mul(u, v.T, ledger)


def mat_add(a: Matrix, b: Matrix, ledger: CostLedger) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError(f"cannot add {_shape(a)} and {_shape(b)}")
    ledger.charge_adds(a.size)
    return _checked(a + b, "add")


def mat_sub(a: Matrix, b: Matrix, ledger: CostLedger) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError(f"cannot subtract {_shape(b)} from {_shape(a)}")
    ledger.charge_adds(a.size)
    return _checked(a - b, "subtract")


def mat_scale(scalar: float, a: Matrix, ledger: CostLedger) -> Matrix:
    ledger.charge_mul_adds(a.size)
    return _checked(float(scalar) * a, "scale")


def mat_transpose(a: Matrix) -> Matrix:
    return a.T


def mat_accumulate(view: Matrix, delta: Matrix, ledger: CostLedger) -> Matrix:
    """Fold a computed delta into a stored view; charged as refresh additions"""
    if view.shape != delta.shape:
        raise ShapeError(f"cannot refresh a {_shape(view)} view with a {_shape(delta)} delta")
    ledger.charge_refresh(view.size)
    return _checked(view + delta, "refresh")


def pivot_threshold(a: Matrix) -> float:
    return EPS_PIVOT * float(np.max(np.abs(a))) if a.size else 0.0


def mat_inverse(a: Matrix, ledger: CostLedger) -> Matrix:
    """
    Inverse through LU with partial pivoting.

    Raises SingularMatrixError carrying the index of the first pivot whose
    magnitude is at or below ``EPS_PIVOT * max|a|``.
    """
    n, cols = a.shape
    if n != cols:
        raise ShapeError(f"cannot invert a non-square {_shape(a)} matrix")
    ledger.charge_mul_adds(n ** 3)
    threshold = pivot_threshold(a)
    if threshold == 0.0:
        raise SingularMatrixError("cannot invert a zero matrix", pivot=0)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)

    pivots = np.abs(np.diag(lu))
    small = np.nonzero(pivots <= threshold)[0]
    if small.size:
        index = int(small[0])
        raise SingularMatrixError(
            f"matrix is singular to working precision (pivot {index} = {pivots[index]:.3e})",
            pivot=index,
        )
    result = scipy.linalg.lu_solve((lu, piv), identity(n), check_finite=False)
    return _checked(result, "inverse")


def relative_error(actual: Matrix, expected: Matrix) -> float:
    """Frobenius distance relative to ``max(1, ||expected||_F)``"""
    scale = max(1.0, float(np.linalg.norm(expected)))
    return float(np.linalg.norm(actual - expected)) / scale


# ===== MATRIX FILES =====

_MAGIC_HEADER = np.dtype("<u8")
_VALUES = np.dtype("<f8")


def save_matrix(path: Union[str, Path], m: Matrix, binary: bool = False) -> None:
    """Write ``m`` as text (``rows cols`` then one line per row) or binary"""
    path = Path(path)
    if binary:
        header = np.array(m.shape, dtype=_MAGIC_HEADER).tobytes()
        path.write_bytes(header + np.ascontiguousarray(m, dtype=_VALUES).tobytes())
        return
    lines = [f"{m.shape[0]} {m.shape[1]}"]
    for row in m:
        lines.append(" ".join(repr(float(x)) for x in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _finite_input(data: Matrix, path: Path) -> Matrix:
    bad = np.argwhere(~np.isfinite(data))
    if len(bad):
        i, j = (int(x) for x in bad[0])
        raise DataError(f"{path}: non-finite value at row {i}, column {j}")
    return data


def load_matrix(path: Union[str, Path]) -> Matrix:
    """Read a matrix file; the binary form is detected by the ``.bin`` suffix"""
    path = Path(path)
    if path.suffix == ".bin":
        raw = path.read_bytes()
        if len(raw) < 16:
            raise DataError(f"{path}: truncated binary header")
        rows, cols = (int(x) for x in np.frombuffer(raw[:16], dtype=_MAGIC_HEADER))
        body = raw[16:]
        if len(body) != rows * cols * 8:
            raise DataError(f"{path}: expected {rows * cols} values, found {len(body) // 8}")
        return _finite_input(np.frombuffer(body, dtype=_VALUES).reshape(rows, cols).astype(np.float64), path)

    lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not lines:
        raise DataError(f"{path}: empty matrix file")
    try:
        rows, cols = (int(tok) for tok in lines[0].split())
    except ValueError:
        raise DataError(f"{path}: first line must be 'rows cols'")
    if len(lines) - 1 != rows:
        raise DataError(f"{path}: expected {rows} rows, found {len(lines) - 1}")
    data = np.zeros((rows, cols), dtype=np.float64)
    for i, line in enumerate(lines[1:]):
        values = line.split()
        if len(values) != cols:
            raise DataError(f"{path}: row {i} has {len(values)} values, expected {cols}")
        try:
            data[i] = [float(x) for x in values]
        except ValueError as e:
            raise DataError(f"{path}: row {i}: {e}")
    return _finite_input(data, path)
