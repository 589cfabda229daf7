"""
Per-customer predictions, churn timelines and CLV segments.

`pytest tests/test_clv.py`
"""
import numpy as np
import pandas as pd
import pytest

from scripts.bgnbd import BgnbdParams, conditional_expected_transactions, probability_alive
from scripts.clv import (
    PREDICTION_COLUMNS,
    churn_timeline,
    predict_customer,
    predict_customers,
    segment_customers,
)
from scripts.errors import DomainError, InputError
from scripts.gammagamma import GgParams, conditional_mean_transaction_value


BG = BgnbdParams(0.5, 5.0, 1.5, 3.0)
GG = GgParams(6.0, 4.0, 15.0, sample_mean_value=25.0)
GG_HEAVY_TAIL = GgParams(4.495408, 0.038024, 4.360291, sample_mean_value=20.0)


@pytest.fixture
def rfm():
    return pd.DataFrame({
        "user_id": ["u3", "u1", "u2"],
        "frequency": [0, 12, 2],
        "recency": [0.0, 20.0, 80.0],
        "T": [45.0, 60.0, 90.0],
        "monetary_value": [0.0, 15.0, 40.0],
    })


def test_predictions_shape_and_order(rfm):
    predictions, provenance = predict_customers(BG, GG, rfm, horizon=30)
    assert list(predictions.columns) == PREDICTION_COLUMNS
    assert predictions["user_id"].tolist() == ["u1", "u2", "u3"]
    assert (predictions["horizon"] == 30.0).all()
    assert provenance == {"observed": 2, "prior_mean": 1, "sample_mean": 0}


def test_predictions_compose_the_models(rfm):
    predictions, _ = predict_customers(BG, GG, rfm, horizon=30)
    u2 = predictions.set_index("user_id").loc["u2"]
    assert u2["p_alive"] == pytest.approx(probability_alive(BG, 2, 80.0, 90.0))
    assert u2["expected_txns"] == pytest.approx(conditional_expected_transactions(BG, 30, 2, 80.0, 90.0))
    assert u2["expected_value"] == pytest.approx(conditional_mean_transaction_value(GG, 2, 40.0))
    assert u2["expected_clv"] == pytest.approx(u2["expected_txns"] * u2["expected_value"])


def test_zero_frequency_falls_back_to_population_mean(rfm):
    predictions, _ = predict_customers(BG, GG, rfm, horizon=30)
    assert predictions.set_index("user_id").loc["u3", "expected_value"] == pytest.approx(GG.prior_mean)


def test_infinite_population_mean_falls_back_to_sample_mean(rfm):
    predictions, provenance = predict_customers(BG, GG_HEAVY_TAIL, rfm, horizon=30)
    assert predictions.set_index("user_id").loc["u3", "expected_value"] == 20.0
    assert provenance["sample_mean"] == 1


def test_no_finite_fallback_is_a_domain_error(rfm):
    with pytest.raises(DomainError):
        predict_customers(BG, GgParams(4.5, 0.5, 4.0), rfm, horizon=30)


def test_discounting_lowers_value(rfm):
    plain, _ = predict_customers(BG, GG, rfm, horizon=30)
    discounted, _ = predict_customers(BG, GG, rfm, horizon=30, discount_rate=0.01)
    assert (discounted["expected_clv"] < plain["expected_clv"]).all()
    assert (discounted["expected_txns"] == plain["expected_txns"]).all()


def test_vanishing_discount_matches_undiscounted(rfm):
    plain, _ = predict_customers(BG, GG, rfm, horizon=30.5)
    nearly, _ = predict_customers(BG, GG, rfm, horizon=30.5, discount_rate=1e-12)
    np.testing.assert_allclose(nearly["expected_clv"], plain["expected_clv"], rtol=1e-8)


def test_clv_nondecreasing_in_horizon(rfm):
    values = [predict_customers(BG, GG, rfm, horizon=h)[0]["expected_clv"].to_numpy() for h in (1, 7, 30, 90, 365)]
    assert (np.diff(np.vstack(values), axis=0) >= 0).all()


@pytest.mark.parametrize("horizon, rate", [(0.0, 0.0), (-5.0, 0.0), (10.0, -0.1)])
def test_bad_horizon_or_rate(rfm, horizon, rate):
    with pytest.raises(InputError):
        predict_customers(BG, GG, rfm, horizon=horizon, discount_rate=rate)


def test_single_customer_matches_batch(rfm):
    batch, _ = predict_customers(BG, GG, rfm, horizon=30)
    one = predict_customer(BG, GG, rfm.iloc[1], horizon=30)
    row = batch.set_index("user_id").loc["u1"]
    assert one.user_id == "u1"
    assert one.p_alive == pytest.approx(row["p_alive"])
    assert one.expected_transactions_horizon == pytest.approx(row["expected_txns"])
    assert one.expected_clv_horizon == pytest.approx(row["expected_clv"])
    assert one.value_source == "observed"


# --- Churn timeline -----------------------------------------------------------

def test_churn_timeline():
    timeline = churn_timeline(BG, [0, 3, 6, 9, 12, 15, 20], grid_step=10, as_of=60)
    assert list(timeline.columns) == ["time", "p_alive", "is_purchase"]
    assert timeline["time"].iloc[0] == 0.0
    assert timeline["time"].iloc[-1] == 60.0
    assert timeline["time"].is_monotonic_increasing
    assert timeline["is_purchase"].sum() == 7
    assert timeline["p_alive"].iloc[0] == 1.0
    after_last = timeline[timeline["time"] >= 20.0]["p_alive"].to_numpy()
    assert (np.diff(after_last) <= 0).all()


def test_churn_timeline_offset_origin():
    shifted = churn_timeline(BG, [100.0, 104.0], grid_step=2, as_of=110.0)
    plain = churn_timeline(BG, [0.0, 4.0], grid_step=2, as_of=10.0)
    np.testing.assert_allclose(shifted["p_alive"], plain["p_alive"])


def test_churn_timeline_single_purchase_stays_alive():
    timeline = churn_timeline(BG, [0.0], grid_step=1, as_of=10)
    assert len(timeline) == 11
    assert (timeline["p_alive"] == 1.0).all()


def test_churn_timeline_at_repeat_purchases():
    timeline = churn_timeline(BG, [0, 3, 6, 9, 12, 15, 20], grid_step=10, as_of=60)
    repeats = timeline[timeline["is_purchase"] & (timeline["time"] > 0)]["p_alive"].to_numpy()
    k = np.arange(1, 7)
    np.testing.assert_allclose(repeats, (BG.b + k - 1) / (BG.a + BG.b + k - 1), rtol=1e-12)


def test_frequent_recent_buyer_decays_faster():
    fitted = BgnbdParams(0.982856, 2.902135, 0.437431, 0.017428)
    frequent = churn_timeline(fitted, np.arange(10.0), grid_step=1, as_of=19)
    sparse = churn_timeline(fitted, [0.0, 5.0, 10.0], grid_step=1, as_of=20)

    def p_at(timeline, t):
        return timeline.loc[timeline["time"] == t, "p_alive"].item()

    frequent_kept = p_at(frequent, 19.0) / p_at(frequent, 9.0)
    sparse_kept = p_at(sparse, 20.0) / p_at(sparse, 10.0)
    assert frequent_kept < 0.1 < 0.3 < sparse_kept
    assert p_at(frequent, 9.0) > p_at(sparse, 10.0)
    assert p_at(frequent, 19.0) < p_at(sparse, 20.0)


@pytest.mark.parametrize("purchases, step, as_of", [
    ([], 1.0, 10.0),
    ([5.0, 2.0], 1.0, 10.0),
    ([0.0, 2.0], 0.0, 10.0),
    ([0.0, 12.0], 1.0, 10.0),
])
def test_churn_timeline_rejects_bad_input(purchases, step, as_of):
    with pytest.raises(InputError):
        churn_timeline(BG, purchases, step, as_of)


# --- Segments -----------------------------------------------------------------

def test_segments_rank_highest_value_first():
    predictions = pd.DataFrame({"user_id": list("abcdefgh"), "expected_clv": [8, 1, 7, 2, 6, 3, 5, 4]})
    segmented = segment_customers(predictions, n_segments=4)
    labels = segmented.set_index("user_id")["segment"]
    assert labels["a"] == "A" and labels["c"] == "A"
    assert labels["b"] == "D" and labels["d"] == "D"
    assert segmented["segment"].value_counts().tolist() == [2, 2, 2, 2]


def test_segments_bounds():
    with pytest.raises(InputError):
        segment_customers(pd.DataFrame({"expected_clv": [1.0]}), n_segments=0)


# --- Main Test Block ----------------------------------------------------------

if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
