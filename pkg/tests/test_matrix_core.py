import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from errors import DataError, NonFiniteError, ShapeError, SingularMatrixError
from matrix_core import (
    CostLedger,
    identity,
    load_matrix,
    mat_accumulate,
    mat_add,
    mat_inverse,
    mat_mul,
    mat_scale,
    mat_sub,
    mat_transpose,
    naive_mat_mul,
    save_matrix,
    zeros,
)


def gauss_jordan_inverse(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    work = np.hstack([a.astype(float), np.eye(n)])
    for col in range(n):
        pivot = col + int(np.argmax(np.abs(work[col:, col])))
        work[[col, pivot]] = work[[pivot, col]]
        work[col] /= work[col, col]
        for row in range(n):
            if row != col:
                work[row] -= work[row, col] * work[col]
    return work[:, n:]


# ===== MULTIPLY =====

def test_multiply_by_identity_charges_rows_inner_cols():
    ledger = CostLedger()
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(mat_mul(a, identity(2), ledger), a)
    assert ledger.mul_adds == 8


def test_multiply_permutation():
    result = mat_mul(identity(2), np.array([[0.0, 1.0], [1.0, 0.0]]), CostLedger())
    assert np.array_equal(result, [[0.0, 1.0], [1.0, 0.0]])


def test_multiply_matches_triple_loop(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((3, 4))
    ledger = CostLedger()
    result = mat_mul(a, b, ledger, kernel="naive")
    assert np.array_equal(result, naive_mat_mul(a, b))
    assert np.allclose(mat_mul(a, b, CostLedger()), result, atol=1e-14)
    assert ledger.mul_adds == 24


def test_multiply_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match="2x3.*2x3"):
        mat_mul(np.ones((2, 3)), np.ones((2, 3)), CostLedger())


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))
def test_multiply_ledger_law(rows, inner, cols):
    ledger = CostLedger()
    mat_mul(np.ones((rows, inner)), np.ones((inner, cols)), ledger)
    assert ledger.mul_adds == rows * inner * cols
    assert ledger.adds == 0


def test_counted_multiply_slope_is_exactly_three():
    sizes = [64, 128, 256, 512]
    counts = []
    for n in sizes:
        ledger = CostLedger()
        mat_mul(zeros(n, n), zeros(n, n), ledger)
        counts.append(ledger.mul_adds)
    slope = np.polyfit(np.log(sizes), np.log(counts), 1)[0]
    assert math.isclose(slope, 3.0, abs_tol=1e-9)


def test_associativity_and_distributivity(rng):
    a, b, c = (rng.standard_normal((5, 5)) for _ in range(3))
    ledger = CostLedger()
    left = mat_mul(mat_mul(a, b, ledger), c, ledger)
    right = mat_mul(a, mat_mul(b, c, ledger), ledger)
    bound = 1e-9 * np.linalg.norm(a) * np.linalg.norm(b) * np.linalg.norm(c)
    assert np.linalg.norm(left - right) <= bound
    summed = mat_mul(mat_add(a, b, ledger), c, ledger)
    split = mat_add(mat_mul(a, c, ledger), mat_mul(b, c, ledger), ledger)
    assert np.allclose(summed, split, atol=1e-9)


# ===== ELEMENTWISE =====

def test_add_zero_charges_size():
    ledger = CostLedger()
    a = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(mat_add(a, zeros(2, 3), ledger), a)
    assert ledger.adds == 6
    assert ledger.mul_adds == 0


def test_sub_and_scale():
    ledger = CostLedger()
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(mat_scale(2, a, ledger), [[2.0, 4.0], [6.0, 8.0]])
    assert np.array_equal(mat_sub(a, a, ledger), zeros(2, 2))
    assert (ledger.mul_adds, ledger.adds) == (4, 4)


def test_transpose_is_free_involution(rng):
    ledger = CostLedger()
    a = rng.standard_normal((3, 4))
    assert np.array_equal(mat_transpose(mat_transpose(a)), a)
    assert ledger.snapshot() == (0, 0, 0)


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        mat_add(np.ones((2, 2)), np.ones((2, 3)), CostLedger())


def test_accumulate_charges_refresh_not_adds():
    ledger = CostLedger()
    view = mat_accumulate(np.ones((3, 3)), np.ones((3, 3)), ledger)
    assert np.array_equal(view, 2 * np.ones((3, 3)))
    assert ledger.refresh_adds == 9
    assert ledger.delta_ops == 0
    assert ledger.total_adds == 9


def test_non_finite_result_is_rejected():
    with pytest.raises(NonFiniteError):
        mat_scale(np.inf, np.ones((1, 1)), CostLedger())


# ===== INVERSE =====

def test_inverse_identity_and_diagonal():
    ledger = CostLedger()
    assert np.allclose(mat_inverse(identity(3), ledger), identity(3))
    assert ledger.mul_adds == 27
    assert np.allclose(mat_inverse(np.diag([2.0, 4.0]), CostLedger()), np.diag([0.5, 0.25]))


def test_inverse_matches_gauss_jordan(rng):
    a = rng.standard_normal((5, 5)) + 5 * np.eye(5)
    result = mat_inverse(a, CostLedger())
    assert np.linalg.norm(result - gauss_jordan_inverse(a)) < 1e-10
    assert np.linalg.norm(a @ result - np.eye(5)) < 1e-9 * 5


def test_singular_inverse_reports_pivot():
    a = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(SingularMatrixError) as info:
        mat_inverse(a, CostLedger())
    assert info.value.pivot == 1
    assert info.value.exit_code == 4


def test_inverse_of_non_square():
    with pytest.raises(ShapeError):
        mat_inverse(np.ones((2, 3)), CostLedger())


# ===== LEDGER =====

def test_statement_totals_equal_counters(rng):
    ledger = CostLedger()
    a = rng.standard_normal((4, 4))
    with ledger.statement("B"):
        b = mat_mul(a, a, ledger)
    with ledger.statement("C"):
        mat_add(b, a, ledger)
    mat_accumulate(a, a, ledger)
    assert ledger.statement_totals() == ledger.snapshot()
    assert ledger.per_statement["B"][0] == 64
    assert ledger.per_statement["C"][1] == 16
    assert ledger.largest_multiply == 64


def test_since_reports_difference():
    ledger = CostLedger()
    ledger.charge_adds(5)
    mark = ledger.snapshot()
    ledger.charge_mul_adds(7)
    assert ledger.since(mark) == (7, 0, 0)


# ===== FILES =====

@pytest.mark.parametrize("name", ["m.txt", "m.bin"])
def test_save_and_load(tmp_path, rng, name):
    m = rng.standard_normal((3, 2))
    path = tmp_path / name
    save_matrix(path, m, binary=name.endswith(".bin"))
    assert np.array_equal(load_matrix(path), m)


def test_load_rejects_short_text_file(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("2 2\n1 2\n", encoding="utf-8")
    with pytest.raises(DataError, match="expected 2 rows"):
        load_matrix(path)


@pytest.mark.parametrize("name", ["m.txt", "m.bin"])
@pytest.mark.parametrize("value", [np.nan, np.inf])
def test_load_rejects_non_finite_values(tmp_path, name, value):
    m = np.ones((2, 3))
    m[1, 2] = value
    path = tmp_path / name
    save_matrix(path, m, binary=name.endswith(".bin"))
    with pytest.raises(DataError, match="row 1, column 2") as info:
        load_matrix(path)
    assert info.value.exit_code == 3


def test_load_rejects_truncated_binary(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(np.array([2, 2], dtype="<u8").tobytes() + b"\x00" * 8)
    with pytest.raises(DataError):
        load_matrix(path)
