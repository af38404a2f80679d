import pytest

from cost_predictor import (
    general_exact,
    powers_incremental_exact,
    predict_cost,
    stored_views,
)
from errors import ConfigError
from iterative_analytics import IterativeModel, Strategy

LIN = IterativeModel.linear()
EXP = IterativeModel.exponential()


def test_linear_incremental_powers_closed_form():
    prediction = predict_cost("powers", "lin", "incr", 100, k=4)
    assert prediction.exact == 191_800
    assert prediction.time_class == "O(n² k²)"
    assert prediction.space_class == "O(n² k)"
    assert prediction.stored_views == 4


def test_exponential_incremental_powers_closed_form():
    assert predict_cost("powers", "exp", "incr", 100, k=4).exact == 131_300
    assert powers_incremental_exact(EXP, 1, 2) == powers_incremental_exact(LIN, 1, 2)


@pytest.mark.parametrize("model,s", [("lin", None), ("exp", None), ("skip", 1)])
@pytest.mark.parametrize("strategy", ["reeval", "incr"])
def test_first_iterate_costs_one_outer_product(model, s, strategy):
    assert predict_cost("powers", model, strategy, 50, k=1, s=s).exact == 2500


def test_skip_general_form_class():
    prediction = predict_cost("general", "skip", "incr", 64, p=8, k=16, s=4)
    assert prediction.time_class == "O((n² + n p) k²/s)"
    assert prediction.time_estimate == pytest.approx((64 ** 2 + 64 * 8) * 16 ** 2 / 4)
    assert prediction.exact is None
    assert prediction.stored_views == 6


def test_linear_general_form_exact_counts():
    assert predict_cost("general", "lin", "hybrid", 64, p=8, k=16).exact == 542_720
    assert predict_cost("general", "lin", "reeval", 64, p=8, k=16).exact == 536_576
    assert general_exact(LIN, Strategy.INCREMENTAL, 10, 2, 1) == 100 + 40


def test_gamma_changes_reevaluation_estimate():
    cubic = predict_cost("powers", "lin", "reeval", 100, k=4)
    strassen_like = predict_cost("powers", "lin", "reeval", 100, k=4, gamma=2.5)
    assert cubic.time_estimate == pytest.approx(100 ** 3 * 4)
    assert strassen_like.time_estimate == pytest.approx(100 ** 2.5 * 4)
    assert cubic.exact == strassen_like.exact


@pytest.mark.parametrize("gamma", [1.9, 3.1])
def test_gamma_out_of_range(gamma):
    with pytest.raises(ConfigError, match="gamma"):
        predict_cost("powers", "lin", "reeval", 10, k=2, gamma=gamma)


def test_ols_prediction():
    prediction = predict_cost("ols", None, "incr", 100)
    assert prediction.model == "-"
    assert prediction.exact is None
    assert prediction.time_class == "O(n² + m p + n p + m n)"
    assert prediction.time_estimate == pytest.approx(10_000 + 200 + 100 + 20_000)


def test_invalid_cell_lists_valid_ones():
    with pytest.raises(ConfigError) as info:
        predict_cost("powers", "lin", "hybrid", 10, k=2)
    assert "general/lin/hybrid" in info.value.message
    assert "ols/-/incr" in info.value.message


@pytest.mark.parametrize("args,message", [
    (("pagerank", "lin", "incr", 10), "unknown workload"),
    (("powers", None, "incr", 10), "needs a model"),
    (("ols", None, "hybrid", 10), "no cost cell"),
    (("powers", "lin", "incr", 0), "positive"),
])
def test_config_errors(args, message):
    with pytest.raises(ConfigError, match=message):
        predict_cost(*args)


def test_model_constraints_apply():
    with pytest.raises(ConfigError, match="power of two"):
        predict_cost("powers", "exp", "incr", 10, k=6)


@pytest.mark.parametrize("model,strategy,k,views", [
    (LIN, Strategy.INCREMENTAL, 8, 8),
    (EXP, Strategy.INCREMENTAL, 16, 5),
    (IterativeModel.skip(4), Strategy.HYBRID, 16, 6),
    (EXP, Strategy.REEVALUATION, 16, 1),
])
def test_stored_views(model, strategy, k, views):
    assert stored_views(model, strategy, k) == views
