import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import A4_TEXT, OLS_TEXT
from errors import ConfigError, ParseError, ShapeError, UseBeforeDefError
from matrix_core import CostLedger
from program_ir import (
    Add,
    Inverse,
    Mul,
    Scale,
    Sub,
    Transpose,
    Var,
    evaluate_program,
    format_expr,
    format_program,
    free_vars,
    load_program,
    parse_program,
    random_inputs,
    shape_check,
)


def test_parse_a4_program():
    program = parse_program(A4_TEXT)
    assert program.input_names == ["A"]
    assert program.targets == ["B", "C"]
    assert program.outputs == ("C",)
    assert program.statement("C").expr == Mul(Var("B"), Var("B"))


def test_parse_ols_program():
    program = parse_program(OLS_TEXT)
    assert program.input_names == ["X", "Y"]
    assert program.statement("W").expr == Inverse(Mul(Transpose(Var("X")), Var("X")))
    beta = program.statement("beta").expr
    assert beta == Mul(Mul(Var("W"), Transpose(Var("X"))), Var("Y"))


def test_example_programs_load(programs_dir):
    for path in sorted(programs_dir.glob("*.ivla")):
        assert load_program(path).statements


def test_scalars_fold_into_one_scale():
    program = parse_program("input A: n x n; B := 2 * A * 3; C := A - -1 * B;")
    assert program.statement("B").expr == Scale(6.0, Var("A"))
    assert program.statement("C").expr == Sub(Var("A"), Scale(-1.0, Var("B")))


def test_undefined_name_is_use_before_def():
    with pytest.raises(UseBeforeDefError, match="'A'"):
        parse_program("B := A * A;")


def test_reassignment_violates_single_assignment():
    with pytest.raises(UseBeforeDefError, match="assigned once"):
        parse_program("input A: n x n; B := A; B := A * A;")


def test_undefined_output():
    with pytest.raises(UseBeforeDefError):
        parse_program("input A: n x n; B := A; output C;")


def test_syntax_error_carries_line_and_column():
    with pytest.raises(ParseError) as info:
        parse_program("input A: n x n;\nB := A * ;")
    assert (info.value.line, info.value.col) == (2, 10)
    assert info.value.exit_code == 2


def test_unexpected_character():
    with pytest.raises(ParseError, match="line 1, column 8"):
        parse_program("input A$: n x n;")


def test_scalar_only_term_is_rejected():
    with pytest.raises(ParseError, match="scalar"):
        parse_program("input A: n x n; B := A + 2;")


# ===== SHAPES =====

def test_shape_check_a4():
    shapes = shape_check(parse_program(A4_TEXT), {"n": 4})
    assert shapes == {"A": (4, 4), "B": (4, 4), "C": (4, 4)}


def test_shape_check_ols():
    shapes = shape_check(parse_program(OLS_TEXT), {"m": 6, "n": 3, "p": 2})
    assert shapes["W"] == (3, 3)
    assert shapes["beta"] == (3, 2)


def test_nonconforming_product():
    with pytest.raises(ShapeError, match="cannot multiply"):
        parse_program("input A: 2 x 3; input B: 2 x 3; C := A * B;")


def test_inverse_of_rectangular():
    with pytest.raises(ShapeError, match="non-square"):
        parse_program("input X: m x n; W := inv(X);")


def test_unbound_dimension():
    with pytest.raises(ConfigError, match="unbound dimension 'n'"):
        shape_check(parse_program(A4_TEXT), {})


# ===== EVALUATION =====

def test_evaluate_program_attributes_costs(rng):
    program = parse_program(A4_TEXT)
    inputs = random_inputs(program, {"n": 5}, rng)
    ledger = CostLedger()
    values = evaluate_program(program, inputs, ledger)
    assert np.allclose(values["C"], np.linalg.matrix_power(inputs["A"], 4))
    assert ledger.per_statement["B"][0] == 125
    assert ledger.per_statement["C"][0] == 125


def test_random_inputs_follow_dims(rng):
    inputs = random_inputs(parse_program(OLS_TEXT), {"m": 7, "n": 3, "p": 2}, rng)
    assert inputs["X"].shape == (7, 3)
    assert inputs["Y"].shape == (7, 2)


# ===== ROUND TRIP =====

scalars = st.floats(-8, 8, allow_nan=False, allow_infinity=False)

square_exprs = st.recursive(
    st.sampled_from([Var("A"), Var("B")]),
    lambda inner: st.one_of(
        st.builds(Add, inner, inner),
        st.builds(Sub, inner, inner),
        st.builds(Mul, inner, inner),
        st.builds(Scale, scalars, inner),
        st.builds(Transpose, inner),
        st.builds(Inverse, inner),
    ),
    max_leaves=8,
)


@given(st.lists(square_exprs, min_size=1, max_size=4))
def test_print_then_parse_round_trips(exprs):
    lines = ["input A: n x n;", "input B: n x n;"]
    lines += [f"S{i} := {format_expr(e)};" for i, e in enumerate(exprs)]
    program = parse_program("\n".join(lines))
    assert [stmt.expr for stmt in program.statements] == exprs
    assert parse_program(format_program(program)) == program


@given(square_exprs)
def test_free_vars_are_inputs(e):
    assert free_vars(e) <= {"A", "B"}
