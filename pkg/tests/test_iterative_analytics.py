import numpy as np
import pytest

from conftest import rank_one, rel_error
from cost_predictor import predict_cost, stored_views
from delta_engine import RankKUpdate
from errors import ConfigError, ShapeError, UpdateSingularityError
from iterative_analytics import (
    GeneralFormWorkload,
    IterativeModel,
    OlsWorkload,
    PowersWorkload,
    Strategy,
    SumsWorkload,
    general_iteration,
    gradient_descent_system,
    make_workload,
    matrix_powers,
    ols,
    precondition_general,
    precondition_powers,
    random_workload_inputs,
    spectral_radius_estimate,
    sums_of_powers,
)
from matrix_core import CostLedger
from update_streams import random_row_updates

LIN = IterativeModel.linear()
EXP = IterativeModel.exponential()

MODELS_K4 = [LIN, EXP, IterativeModel.skip(2)]
MODELS_K8 = [LIN, EXP, IterativeModel.skip(2), IterativeModel.skip(4)]


def one_update(n: int, scale: float = 0.1, seed: int = 7):
    rng = np.random.default_rng(seed)
    return [rank_one(rng, "A", n, n, scale)]


# ===== MODELS =====

def test_step_plans():
    assert LIN.plan(4) == [(2, 1, 1), (3, 1, 2), (4, 1, 3)]
    assert EXP.plan(8) == [(2, 1, 1), (4, 2, 2), (8, 4, 4)]
    assert IterativeModel.skip(2).plan(8) == [(2, 1, 1), (4, 2, 2), (6, 2, 4), (8, 2, 6)]
    assert IterativeModel.skip(4).index_set(16) == [1, 2, 4, 8, 12, 16]


@pytest.mark.parametrize("model,k,message", [
    (EXP, 6, "power of two"),
    (IterativeModel.skip(3), 6, "power of two"),
    (IterativeModel.skip(8), 4, "divisible"),
    (IterativeModel.skip(4), 10, "divisible"),
    (LIN, 0, "positive"),
])
def test_model_constraints(model, k, message):
    with pytest.raises(ConfigError, match=message):
        model.plan(k)


def test_model_and_strategy_names():
    assert IterativeModel.parse("exponential") == EXP
    assert IterativeModel.parse("skip", 4) == IterativeModel.skip(4)
    assert Strategy.parse("incremental") is Strategy.INCREMENTAL
    with pytest.raises(ConfigError, match="needs a step size"):
        IterativeModel.parse("skip")
    with pytest.raises(ConfigError, match="unknown model"):
        IterativeModel.parse("cubic")
    with pytest.raises(ConfigError, match="unknown strategy"):
        Strategy.parse("lazy")


def test_hybrid_is_only_for_general_form():
    with pytest.raises(ConfigError, match="not valid for the powers workload"):
        PowersWorkload(LIN, "hybrid", 4)
    GeneralFormWorkload(LIN, "hybrid", 4)


# ===== SCALAR EXAMPLES =====

@pytest.mark.parametrize("model", MODELS_K4)
@pytest.mark.parametrize("strategy", ["reeval", "incr"])
def test_scalar_power_reached_through_update(model, strategy):
    update = RankKUpdate("A", np.array([[1.0]]), np.array([[1.0]]))
    results = matrix_powers(np.array([[1.0]]), 4, model, strategy, [update], CostLedger())
    assert results[-1][0, 0] == pytest.approx(16.0)


@pytest.mark.parametrize("model", MODELS_K4)
@pytest.mark.parametrize("strategy", ["reeval", "incr"])
def test_scalar_geometric_sum(model, strategy):
    update = RankKUpdate("A", np.array([[1.0]]), np.array([[1.0]]))
    results = sums_of_powers(np.array([[1.0]]), 4, model, strategy, [update], CostLedger())
    assert results[-1][0, 0] == pytest.approx(15.0)


@pytest.mark.parametrize("model", MODELS_K8)
@pytest.mark.parametrize("strategy", ["reeval", "incr", "hybrid"])
def test_scalar_general_recurrence(model, strategy):
    # a moves from 0.25 to 0.5; t_{i+1} = a t_i + 0.5 from t_0 = 0 gives 1 - 0.5^k
    update = RankKUpdate("A", np.array([[0.25]]), np.array([[1.0]]))
    results = general_iteration(
        np.array([[0.25]]), np.array([[0.5]]), np.array([[0.0]]), 8, model, strategy, [update], CostLedger()
    )
    assert results[-1][0, 0] == pytest.approx(0.99609375, abs=1e-12)


@pytest.mark.parametrize("model", [LIN, EXP, IterativeModel.skip(1)])
def test_first_iterate(model, rng):
    A, B, T0 = rng.standard_normal((3, 3)), rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    powers = PowersWorkload(model, "incr", 1)
    powers.materialize({"A": A}, CostLedger())
    assert np.array_equal(powers.result, A)
    sums = SumsWorkload(model, "incr", 1)
    sums.materialize({"A": A}, CostLedger())
    assert np.array_equal(sums.result, np.eye(3))
    general = GeneralFormWorkload(model, "incr", 1)
    general.materialize({"A": A, "B": B, "T0": T0}, CostLedger())
    assert np.allclose(general.result, A @ T0 + B)


def test_zero_matrix_base_cases(rng):
    n = 4
    A = np.zeros((n, n))
    B, T0 = rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
    for model in MODELS_K8:
        sums = SumsWorkload(model, "incr", 8)
        sums.materialize({"A": A}, CostLedger())
        assert np.array_equal(sums.result, np.eye(n))
        general = GeneralFormWorkload(model, "incr", 8)
        general.materialize({"A": A, "B": B, "T0": T0}, CostLedger())
        assert np.allclose(general.result, B)


# ===== AGREEMENT =====

@pytest.mark.parametrize("cls", [PowersWorkload, SumsWorkload])
def test_models_agree_without_updates(cls, rng):
    A = precondition_powers(rng.standard_normal((12, 12)))
    results = []
    for model in MODELS_K8:
        workload = cls(model, "reeval", 8)
        workload.materialize({"A": A}, CostLedger())
        results.append(workload.result)
    for other in results[1:]:
        assert rel_error(other, results[0]) < 1e-9


def test_general_models_agree_without_updates(rng):
    n, p = 12, 3
    inputs = {
        "A": precondition_general(rng.standard_normal((n, n))),
        "B": rng.standard_normal((n, p)),
        "T0": rng.standard_normal((n, p)),
    }
    results = []
    for model in MODELS_K8:
        workload = GeneralFormWorkload(model, "reeval", 8)
        workload.materialize(inputs, CostLedger())
        results.append(workload.result)
    for other in results[1:]:
        assert rel_error(other, results[0]) < 1e-9


def test_incremental_exponential_powers_match_reevaluation(rng):
    n, k = 16, 16
    A = precondition_powers(rng.standard_normal((n, n)))
    update = rank_one(rng, "A", n, n)
    result = matrix_powers(A, k, EXP, "incr", [update], CostLedger())[-1]
    assert rel_error(result, np.linalg.matrix_power(A + update.dense(), k)) < 1e-6


@pytest.mark.parametrize("cls,name", [(PowersWorkload, "powers"), (SumsWorkload, "sums"), (GeneralFormWorkload, "general")])
def test_strategies_agree_after_stream(cls, name, rng):
    n = 16
    inputs = random_workload_inputs(name, {"n": n, "p": 2}, rng)
    updates = [rank_one(rng, "A", n, n, scale=0.05) for _ in range(10)]
    finals = []
    for model in MODELS_K8:
        for strategy in cls.allowed_strategies:
            workload = cls(model, strategy, 8)
            workload.materialize(inputs, CostLedger())
            for update in updates:
                workload.apply(update, CostLedger())
            finals.append(workload.result)
            oracle = workload.oracle()[f"{name}_8"]
            assert rel_error(workload.result, oracle) < 1e-6
    for other in finals[1:]:
        assert rel_error(other, finals[0]) < 1e-6


@pytest.mark.slow
@pytest.mark.parametrize("p", [1, 8, 64])
def test_general_form_strategies_agree_at_scale(p):
    n, k = 128, 16
    rng = np.random.default_rng(42)
    inputs = random_workload_inputs("general", {"n": n, "p": p}, rng)
    updates = [rank_one(rng, "A", n, n, scale=0.05) for _ in range(3)]
    finals = []
    for model in [LIN, EXP, IterativeModel.skip(4)]:
        for strategy in ["reeval", "incr", "hybrid"]:
            workload = GeneralFormWorkload(model, strategy, k)
            workload.materialize(inputs, CostLedger())
            for update in updates:
                workload.apply(update, CostLedger())
            assert rel_error(workload.result, workload.oracle()[f"general_{k}"]) < 1e-6
            finals.append(workload.result)
    for other in finals[1:]:
        assert rel_error(other, finals[0]) < 1e-6


def test_general_form_without_b_is_a_power(rng):
    n, p = 8, 2
    A = precondition_general(rng.standard_normal((n, n)))
    T0 = rng.standard_normal((n, p))
    workload = GeneralFormWorkload(EXP, "incr", 8)
    workload.materialize({"A": A, "B": np.zeros((n, p)), "T0": T0}, CostLedger())
    workload.apply(rank_one(rng, "A", n, n), CostLedger())
    expected = np.linalg.matrix_power(workload.inputs["A"], 8) @ T0
    assert rel_error(workload.result, expected) < 1e-9


def test_gradient_descent_matches_direct_loop(rng):
    n, p, k = 32, 4, 16
    X = rng.standard_normal((2 * n, n)) / (2 * np.sqrt(2 * n))
    Y = rng.standard_normal((2 * n, p))
    A, B = gradient_descent_system(X, Y)
    theta = np.zeros((n, p))
    for _ in range(k):
        theta = theta - X.T @ (X @ theta - Y)
    for strategy in ["reeval", "incr", "hybrid"]:
        workload = GeneralFormWorkload(LIN, strategy, k)
        workload.materialize({"A": A, "B": B, "T0": np.zeros((n, p))}, CostLedger())
        assert rel_error(workload.result, theta) < 1e-6


# ===== COSTS =====

@pytest.mark.parametrize("model", [LIN, EXP, IterativeModel.skip(2)])
@pytest.mark.parametrize("n", [32, 64])
@pytest.mark.parametrize("k", [4, 8, 16])
def test_incremental_powers_ledger_matches_prediction(model, n, k, rng):
    ledger = CostLedger()
    matrix_powers(precondition_powers(rng.standard_normal((n, n))), k, model, "incr", one_update(n), ledger)
    assert ledger.delta_ops == predict_cost("powers", model, "incr", n, k=k, s=model.s or None).exact


@pytest.mark.parametrize("model", [LIN, EXP])
def test_reevaluated_powers_ledger_matches_prediction(model, rng):
    n, k = 32, 8
    ledger = CostLedger()
    matrix_powers(precondition_powers(rng.standard_normal((n, n))), k, model, "reeval", one_update(n), ledger)
    assert ledger.delta_ops == predict_cost("powers", model, "reeval", n, k=k).exact


@pytest.mark.parametrize("strategy", ["reeval", "incr", "hybrid"])
@pytest.mark.parametrize("k", [1, 2, 4, 8])
def test_linear_general_ledger_matches_prediction(strategy, k, rng):
    n, p = 32, 4
    inputs = random_workload_inputs("general", {"n": n, "p": p}, rng)
    ledger = CostLedger()
    general_iteration(inputs["A"], inputs["B"], inputs["T0"], k, LIN, strategy, one_update(n), ledger)
    assert ledger.delta_ops == predict_cost("general", LIN, strategy, n, p=p, k=k).exact


def _powers_ops(n: int, k: int, strategy: str) -> int:
    ledger = CostLedger()
    A = precondition_powers(np.random.default_rng(42).standard_normal((n, n)))
    matrix_powers(A, k, EXP, strategy, one_update(n), ledger)
    return ledger.delta_ops


def test_scaling_in_n():
    sizes = [32, 64, 128, 256]
    incremental = [_powers_ops(n, 8, "incr") for n in sizes]
    reeval = [_powers_ops(n, 8, "reeval") for n in sizes]
    assert np.polyfit(np.log(sizes), np.log(incremental), 1)[0] == pytest.approx(2.0, abs=0.1)
    assert np.polyfit(np.log(sizes), np.log(reeval), 1)[0] == pytest.approx(3.0, abs=0.1)


@pytest.mark.parametrize("k", [8, 16])
def test_scaling_in_k(k):
    n = 128
    assert _powers_ops(n, 2 * k, "incr") / _powers_ops(n, k, "incr") == pytest.approx(2.0, abs=0.3)
    assert 1.15 <= _powers_ops(n, 2 * k, "reeval") / _powers_ops(n, k, "reeval") <= 1.45


def _general_ops(model, strategy: str, n: int, p: int, k: int) -> int:
    rng = np.random.default_rng(42)
    inputs = random_workload_inputs("general", {"n": n, "p": p}, rng)
    ledger = CostLedger()
    general_iteration(inputs["A"], inputs["B"], inputs["T0"], k, model, strategy, one_update(n), ledger)
    return ledger.delta_ops


@pytest.mark.slow
def test_hybrid_wins_for_a_single_column():
    assert _general_ops(LIN, "hybrid", 256, 1, 16) < _general_ops(LIN, "incr", 256, 1, 16)


@pytest.mark.slow
def test_factored_deltas_win_for_many_columns():
    assert _general_ops(EXP, "incr", 256, 64, 16) < _general_ops(LIN, "hybrid", 256, 64, 16)


@pytest.mark.parametrize("cls,name", [(PowersWorkload, "powers"), (SumsWorkload, "sums"), (GeneralFormWorkload, "general")])
@pytest.mark.parametrize("model,k", [(LIN, 8), (EXP, 16), (IterativeModel.skip(4), 16)])
@pytest.mark.parametrize("strategy", [Strategy.REEVALUATION, Strategy.INCREMENTAL])
def test_stored_views_follow_space_law(cls, name, model, k, strategy, rng):
    workload = cls(model, strategy, k)
    workload.materialize(random_workload_inputs(name, {"n": 6, "p": 2}, rng), CostLedger())
    workload.apply(rank_one(rng, "A", 6, 6), CostLedger())
    assert workload.stored_view_count == stored_views(model, strategy, k)


# ===== OLS =====

def test_orthonormal_design_gives_projection(rng):
    n, p = 6, 2
    X, _ = np.linalg.qr(rng.standard_normal((n, n)))
    Y = rng.standard_normal((n, p))
    workload = OlsWorkload({"m": n, "n": n, "p": p}, "incr")
    workload.materialize({"X": X, "Y": Y}, CostLedger())
    assert np.allclose(workload.beta, X.T @ Y, atol=1e-10)


@pytest.mark.slow
def test_ols_tracks_direct_solution_and_stays_cheap():
    m, n, p = 200, 100, 1
    rng = np.random.default_rng(42)
    X, Y = rng.standard_normal((m, n)), rng.standard_normal((m, p))
    updates = random_row_updates("X", m, n, 50, 1, rng, scale=0.1)

    incremental = OlsWorkload({"m": m, "n": n, "p": p}, "incr")
    reeval = OlsWorkload({"m": m, "n": n, "p": p}, "reeval")
    incremental.materialize({"X": X, "Y": Y}, CostLedger())
    reeval.materialize({"X": X, "Y": Y}, CostLedger())
    fast, slow = CostLedger(), CostLedger()
    for update in updates:
        before_fast, before_slow = fast.snapshot(), slow.snapshot()
        incremental.apply(update, fast)
        reeval.apply(update, slow)
        assert sum(fast.since(before_fast)[:2]) < sum(slow.since(before_slow)[:2])
        current = incremental.inputs["X"]
        direct = np.linalg.solve(current.T @ current, current.T @ Y)
        assert rel_error(incremental.beta, direct) < 1e-6
    assert fast.largest_multiply <= max(m, n) * n * max(2, p)
    assert slow.largest_multiply >= m * n * n


def test_ols_function_returns_beta_per_update(rng):
    m, n = 30, 5
    X, Y = rng.standard_normal((m, n)), rng.standard_normal((m, 1))
    updates = random_row_updates("X", m, n, 3, 1, rng, scale=0.1)
    betas = ols(X, Y, updates, "incr", CostLedger())
    assert len(betas) == 3
    final = X + sum(u.dense() for u in updates)
    assert rel_error(betas[-1], np.linalg.lstsq(final, Y, rcond=None)[0]) < 1e-8


def test_singular_ols_update_leaves_state_unchanged():
    n, m = 4, 5
    X = np.vstack([np.eye(n), np.zeros((1, n))])
    workload = OlsWorkload({"m": m, "n": n, "p": 1}, "incr")
    workload.materialize({"X": X, "Y": np.ones((m, 1))}, CostLedger())
    before = {name: value.copy() for name, value in workload.state.items()}
    u, v = np.zeros((m, 1)), np.zeros((n, 1))
    u[0, 0], v[0, 0] = 1.0, -1.0
    with pytest.raises(UpdateSingularityError):
        workload.apply(RankKUpdate("X", u, v), CostLedger())
    for name, value in before.items():
        assert np.array_equal(workload.state[name], value)
    assert np.array_equal(workload.inputs["X"], X)


# ===== INPUTS AND ERRORS =====

def test_preconditioning(rng):
    A = rng.standard_normal((20, 20))
    assert np.linalg.norm(precondition_powers(A)) == pytest.approx(1.0)
    assert spectral_radius_estimate(precondition_general(A)) == pytest.approx(0.9, rel=1e-9)
    assert np.array_equal(precondition_powers(np.zeros((2, 2))), np.zeros((2, 2)))


def test_random_inputs_shapes(rng):
    inputs = random_workload_inputs("ols", {"n": 5, "p": 3}, rng)
    assert inputs["X"].shape == (10, 5)
    assert inputs["Y"].shape == (10, 3)
    with pytest.raises(ConfigError, match="m >= n"):
        random_workload_inputs("ols", {"n": 5, "m": 3}, rng)
    with pytest.raises(ConfigError, match="unknown workload"):
        random_workload_inputs("pagerank", {"n": 5}, rng)


def test_make_workload():
    assert isinstance(make_workload("sums", EXP, "incr", 8, {"n": 4}), SumsWorkload)
    ols_workload = make_workload("ols", None, "incr", 1, {"n": 4})
    assert ols_workload.dims == {"m": 8, "n": 4, "p": 1}
    with pytest.raises(ConfigError, match="needs an iterative model"):
        make_workload("powers", None, "incr", 8, {"n": 4})


def test_bad_updates_are_rejected(rng):
    workload = PowersWorkload(EXP, "incr", 4)
    workload.materialize({"A": np.eye(3)}, CostLedger())
    with pytest.raises(ConfigError, match="takes updates to 'A'"):
        workload.apply(rank_one(rng, "B", 3, 3), CostLedger())
    with pytest.raises(ShapeError):
        workload.apply(rank_one(rng, "A", 4, 4), CostLedger())


def test_general_form_shape_mismatch(rng):
    workload = GeneralFormWorkload(LIN, "incr", 4)
    with pytest.raises(ShapeError, match="general form"):
        workload.materialize({"A": np.eye(3), "B": np.ones((3, 2)), "T0": np.ones((3, 1))}, CostLedger())
    with pytest.raises(ConfigError, match="needs inputs"):
        workload.materialize({"A": np.eye(3)}, CostLedger())
