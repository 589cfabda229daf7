"""
Model validation: actual vs simulated/model repeat-frequency histograms,
calibration/holdout predicted-vs-actual comparisons, and regression metrics.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import pandas as pd
from sklearn.metrics import mean_absolute_error, mean_squared_error, mean_squared_log_error

from scripts.bgnbd import BgnbdParams, conditional_expected_transactions, population_pmf
from scripts.errors import InputError
from scripts.simulate import SimulationConfig, rfm_from_simulation, simulate_customers


LOW_SUPPORT = 10


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    mae: float
    msle: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class HoldoutEvaluation:
    groups: pd.DataFrame
    metrics: MetricsReport
    predicted: np.ndarray


def regression_metrics(actual, predicted) -> MetricsReport:
    """
    MSE, MAE and MSLE (squared error of log(1 + ·)) between two nonnegative series.

    Raises:
        InputError: lengths differ, are zero, or a value is negative.
    """
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.shape != predicted.shape or actual.size == 0:
        raise InputError(
            f"actual and predicted need equal nonzero lengths, got {actual.size} and {predicted.size}"
        )
    if np.any(actual < 0) or np.any(predicted < 0):
        raise InputError("regression_metrics expects nonnegative values")
    return MetricsReport(
        mse=float(mean_squared_error(actual, predicted)),
        mae=float(mean_absolute_error(actual, predicted)),
        msle=float(mean_squared_log_error(actual, predicted)),
        n=int(actual.size),
    )


def bin_labels(max_bin: int) -> list:
    return [str(i) for i in range(max_bin)] + [f"{max_bin}+"]


def _histogram(frequency, max_bin: int) -> np.ndarray:
    clipped = np.minimum(np.asarray(frequency, dtype=int), max_bin)
    return np.bincount(clipped, minlength=max_bin + 1)[: max_bin + 1].astype(float)


def expected_repeat_frequency(params, ages, max_bin: int) -> np.ndarray:
    """Model-expected customer counts per repeat-frequency bin for customers of the given ages."""
    ages, counts = np.unique(np.asarray(ages, dtype=float), return_counts=True)
    x = np.arange(max_bin, dtype=float)
    pmf = np.asarray(population_pmf(params, x[None, :], ages[:, None]), dtype=float)
    tail = np.clip(1.0 - pmf.sum(axis=1, keepdims=True), 0.0, None)
    per_age = np.hstack([pmf, tail])
    return counts @ per_age


def repeat_frequency_comparison(
    actual_rfm: pd.DataFrame,
    params: BgnbdParams,
    horizon_T: float,
    seed: int = 42,
    n_sim_multiplier: int = 10,
    max_bin: int = 7,
) -> pd.DataFrame:
    """
    Paired histogram of repeat frequency: actual, simulated at the fitted
    parameters (multiplier × population, rescaled), and the closed-form model
    expectation for the actual customers' ages. The last bin is "max_bin+".
    """
    if int(n_sim_multiplier) < 1 or int(max_bin) < 1:
        raise InputError("n_sim_multiplier and max_bin must be positive")
    n_actual = len(actual_rfm)
    actual = _histogram(actual_rfm["frequency"], max_bin)

    if n_actual:
        r, alpha, a, b = params.core
        sim = simulate_customers(SimulationConfig(
            n_customers=n_actual * int(n_sim_multiplier),
            horizon_T=horizon_T, r=r, alpha=alpha, a=a, b=b, seed=seed,
        ))
        simulated = _histogram(rfm_from_simulation(sim)["frequency"], max_bin) / int(n_sim_multiplier)
        model = expected_repeat_frequency(params, actual_rfm["T"], max_bin)
    else:
        simulated = np.zeros(max_bin + 1)
        model = np.zeros(max_bin + 1)

    return pd.DataFrame({
        "bin": bin_labels(max_bin),
        "actual": actual,
        "simulated": simulated,
        "model": model,
    })


def calibration_holdout_eval(
    rows: pd.DataFrame,
    params: BgnbdParams,
    predicted: Optional[np.ndarray] = None,
) -> HoldoutEvaluation:
    """
    Predicted vs actual holdout purchases, grouped by calibration frequency,
    plus regression metrics over all customers. Groups under LOW_SUPPORT
    customers are flagged. `predicted` overrides the model predictions.

    Raises:
        InputError: empty table or differing holdout durations.
    """
    if rows.empty:
        raise InputError("calibration_holdout_eval needs at least one customer")
    durations = rows["duration_holdout"].to_numpy(dtype=float)
    if not np.allclose(durations, durations[0], rtol=0, atol=1e-9):
        raise InputError("All rows must share one holdout duration")

    if predicted is None:
        predicted = conditional_expected_transactions(
            params,
            durations[0],
            rows["frequency_cal"].to_numpy(dtype=float),
            rows["recency_cal"].to_numpy(dtype=float),
            rows["T_cal"].to_numpy(dtype=float),
        )
    predicted = np.asarray(predicted, dtype=float)
    actual = rows["frequency_holdout"].to_numpy(dtype=float)

    frame = pd.DataFrame({
        "frequency_cal": rows["frequency_cal"].to_numpy(dtype=int),
        "actual": actual,
        "predicted": predicted,
    })
    groups = frame.groupby("frequency_cal", sort=True).agg(
        n=("actual", "size"),
        mean_actual=("actual", "mean"),
        mean_predicted=("predicted", "mean"),
    ).reset_index()
    groups["low_support"] = groups["n"] < LOW_SUPPORT

    return HoldoutEvaluation(groups=groups, metrics=regression_metrics(actual, predicted), predicted=predicted)


# --- Main Test Block ----------------------------------------------------------

if __name__ == "__main__":
    print(regression_metrics([0, 2], [1, 1]))

    truth = BgnbdParams(0.25, 4.5, 0.8, 2.4)
    sim = simulate_customers(SimulationConfig(n_customers=5000, horizon_T=39, r=0.25, alpha=4.5, a=0.8, b=2.4, seed=3))
    rfm = rfm_from_simulation(sim)
    print(repeat_frequency_comparison(rfm, truth, horizon_T=39).round(1).to_string(index=False))
