"""
Per-customer predictions from fitted BG/NBD and Gamma-Gamma models:
probability alive, expected transactions and expected value (CLV) over a
horizon, churn timelines, and CLV segments.
"""
from __future__ import annotations

import math
import string
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
import pandas as pd

from scripts.bgnbd import BgnbdParams, conditional_expected_transactions, probability_alive
from scripts.errors import DomainError, InputError
from scripts.gammagamma import GgParams, conditional_mean_transaction_value


PREDICTION_COLUMNS = ["user_id", "p_alive", "expected_txns", "expected_value", "expected_clv", "horizon"]
TIMELINE_COLUMNS = ["time", "p_alive", "is_purchase"]
VALUE_SOURCES = ("observed", "prior_mean", "sample_mean")


@dataclass(frozen=True)
class CustomerPrediction:
    user_id: str
    p_alive: float
    expected_transactions_horizon: float
    expected_value_per_transaction: float
    expected_clv_horizon: float
    horizon: float
    discount_rate: float = 0.0
    value_source: str = "observed"


def _value_per_transaction(gg: GgParams, x: np.ndarray, m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Conditional mean spend for repeat customers; otherwise the population mean
    γp/(q-1) when q > 1, else the sample mean spend of the fitted customers.
    """
    p, q, _ = gg.core
    observed = (x >= 1) & (m > 0) & (p * x + q > 1)
    if q > 1:
        fallback, fallback_source = gg.prior_mean, "prior_mean"
    else:
        fallback, fallback_source = gg.sample_mean_value, "sample_mean"
    if not observed.all() and not math.isfinite(fallback):
        raise DomainError("No finite spend fallback: q <= 1 and the Gamma-Gamma fit carries no sample mean")

    value = np.full(x.shape, fallback, dtype=float)
    if observed.any():
        value[observed] = conditional_mean_transaction_value(gg, x[observed], m[observed])
    source = np.where(observed, "observed", fallback_source)
    return value, source


def _discounted_clv(bgnbd, x, tx, T, horizon, discount_rate, value, expected):
    if discount_rate == 0:
        return expected * value
    # unit steps, last one partial, each discounted at its midpoint
    edges = np.append(np.arange(0.0, horizon, 1.0), horizon)
    cumulative = conditional_expected_transactions(bgnbd, edges[:, None], x[None, :], tx[None, :], T[None, :])
    increments = np.diff(np.atleast_2d(cumulative), axis=0)
    mids = 0.5 * (edges[:-1] + edges[1:])
    return value * (np.exp(-discount_rate * mids) @ increments)


def _check_horizon(horizon, discount_rate):
    if not horizon > 0:
        raise InputError(f"horizon must be positive, got {horizon}")
    if not discount_rate >= 0:
        raise InputError(f"discount_rate must be nonnegative, got {discount_rate}")


def predict_customers(
    bgnbd: BgnbdParams,
    gg: GgParams,
    rfm: pd.DataFrame,
    horizon: float,
    discount_rate: float = 0.0,
) -> Tuple[pd.DataFrame, Dict[str, int]]:
    """
    Batch predictions ordered by user_id, plus counts of the spend source used
    (observed / prior_mean / sample_mean).
    """
    _check_horizon(horizon, discount_rate)
    table = pd.DataFrame(rfm).sort_values("user_id", kind="mergesort")
    x = table["frequency"].to_numpy(dtype=float)
    tx = table["recency"].to_numpy(dtype=float)
    T = table["T"].to_numpy(dtype=float)
    m = table["monetary_value"].to_numpy(dtype=float)

    p_alive = np.asarray(probability_alive(bgnbd, x, tx, T), dtype=float)
    expected = np.asarray(conditional_expected_transactions(bgnbd, horizon, x, tx, T), dtype=float)
    value, source = _value_per_transaction(gg, x, m)
    clv = np.asarray(_discounted_clv(bgnbd, x, tx, T, horizon, discount_rate, value, expected), dtype=float)

    predictions = pd.DataFrame({
        "user_id": table["user_id"].to_numpy(),
        "p_alive": p_alive,
        "expected_txns": expected,
        "expected_value": value,
        "expected_clv": clv,
        "horizon": float(horizon),
    }, columns=PREDICTION_COLUMNS)
    provenance = {name: int(np.sum(source == name)) for name in VALUE_SOURCES}
    return predictions, provenance


def predict_customer(
    bgnbd: BgnbdParams,
    gg: GgParams,
    row,
    horizon: float,
    discount_rate: float = 0.0,
) -> CustomerPrediction:
    """Prediction for one RFM row (mapping with user_id, frequency, recency, T, monetary_value)."""
    _check_horizon(horizon, discount_rate)
    x = np.array([float(row["frequency"])])
    tx = np.array([float(row["recency"])])
    T = np.array([float(row["T"])])
    m = np.array([float(row["monetary_value"])])

    expected = np.asarray(conditional_expected_transactions(bgnbd, horizon, x, tx, T), dtype=float)
    value, source = _value_per_transaction(gg, x, m)
    clv = _discounted_clv(bgnbd, x, tx, T, horizon, discount_rate, value, expected)
    return CustomerPrediction(
        user_id=str(row["user_id"]),
        p_alive=float(probability_alive(bgnbd, x[0], tx[0], T[0])),
        expected_transactions_horizon=float(expected[0]),
        expected_value_per_transaction=float(value[0]),
        expected_clv_horizon=float(np.asarray(clv)[0]),
        horizon=float(horizon),
        discount_rate=float(discount_rate),
        value_source=str(source[0]),
    )


def churn_timeline(bgnbd: BgnbdParams, purchases, grid_step: float, as_of: float) -> pd.DataFrame:
    """
    P(alive) on a grid from the first purchase to `as_of`, with the purchase
    instants inserted and flagged. `purchases` are purchase-day times in model
    units (any origin); `as_of` uses the same origin.

    Raises:
        InputError: empty or unsorted purchases, as_of before the last
            purchase, or grid_step <= 0.
    """
    purchases = np.asarray(purchases, dtype=float)
    if purchases.size == 0:
        raise InputError("churn_timeline needs at least one purchase")
    if np.any(np.diff(purchases) < 0):
        raise InputError("purchases must be sorted in time")
    if not grid_step > 0:
        raise InputError("grid_step must be positive")
    if as_of < purchases[-1]:
        raise InputError(f"as_of ({as_of}) is earlier than the last purchase ({purchases[-1]})")

    purchases = np.unique(purchases)
    first = purchases[0]
    grid = np.round(first + np.arange(0.0, as_of - first + 0.5 * grid_step, grid_step), 9)
    grid = grid[grid <= as_of]
    times = np.union1d(np.append(grid, as_of), purchases)

    count = np.searchsorted(purchases, times, side="right")
    x = count - 1
    t_x = purchases[count - 1] - first
    T = times - first
    p_alive = np.asarray(probability_alive(bgnbd, x, t_x, T), dtype=float)
    return pd.DataFrame({
        "time": T,
        "p_alive": p_alive,
        "is_purchase": np.isin(times, purchases),
    }, columns=TIMELINE_COLUMNS)


def segment_customers(predictions: pd.DataFrame, n_segments: int = 4, column: str = "expected_clv") -> pd.DataFrame:
    """Quantile segments on `column`: "A" is the highest-value group."""
    if not 1 <= n_segments <= 26:
        raise InputError("n_segments must be between 1 and 26")
    labels = list(string.ascii_uppercase[:n_segments])[::-1]
    out = predictions.copy()
    ranks = out[column].rank(method="first")
    out["segment"] = pd.qcut(ranks, n_segments, labels=labels).astype(str)
    return out


# --- Main Test Block ----------------------------------------------------------

if __name__ == "__main__":
    bg = BgnbdParams(0.982856, 2.902135, 0.437431, 0.017428)
    gg = GgParams(4.495408, 0.038024, 4.360291, sample_mean_value=20.0)
    rfm = pd.DataFrame({
        "user_id": ["u1", "u2", "u3"],
        "frequency": [12, 2, 0],
        "recency": [20.0, 80.0, 0.0],
        "T": [60.0, 90.0, 45.0],
        "monetary_value": [15.0, 40.0, 0.0],
    })
    preds, provenance = predict_customers(bg, gg, rfm, horizon=30)
    print(preds.to_string(index=False))
    print(f"Spend sources: {provenance}\n")

    print("High-frequency / short-recency customer:")
    print(churn_timeline(bg, [0, 3, 6, 9, 12, 15, 20], grid_step=10, as_of=60).round(4).to_string(index=False))
