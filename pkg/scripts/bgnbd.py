"""
BG/NBD purchase-frequency model.

Customers buy as a Poisson process with rate λ ~ Gamma(shape r, rate alpha)
and drop out after each repeat transaction with probability p ~ Beta(a, b);
λ and p are independent across customers.

Provides:
- individual_pmf(): P(X(t) = x | λ, p) for one latent customer.
- log_likelihood() / fit_bgnbd(): heterogeneity-integrated likelihood and its
  maximum-likelihood fit with 95% confidence intervals.
- probability_alive(), conditional_expected_transactions(),
  expected_transactions(), population_pmf(): per-customer and population
  predictions.
- frequency_recency_matrix(): P(alive) / expected-purchase grids.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from scipy.special import betaln, gammainc, gammaln
from scipy.special import hyp2f1 as scipy_hyp2f1
from scipy.stats import nbinom

from scripts.errors import DomainError, FitError, FormatError, InputError, NumericError, NumericWarning
from scripts.numerics import OptimizerConfig, fit_log_parameters, hyp2f1


MODEL_TAG = "bg/nbd"
PARAM_NAMES = ("r", "alpha", "a", "b")


@dataclass(frozen=True)
class LatentCustomer:
    lam: float
    p_dropout: float

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError(f"lambda must be positive, got {self.lam}")
        if not 0.0 <= self.p_dropout <= 1.0:
            raise DomainError(f"p_dropout must lie in [0, 1], got {self.p_dropout}")


@dataclass(frozen=True)
class BgnbdParams:
    r: float
    alpha: float
    a: float
    b: float
    standard_errors: tuple = (0.0, 0.0, 0.0, 0.0)
    ci95: Optional[tuple] = None
    log_likelihood: float = float("nan")
    n_customers: int = 0
    fit_config: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"BG/NBD parameter {name} must be positive, got {value}")
        if self.ci95 is None:
            object.__setattr__(self, "ci95", tuple((v, v) for v in self.core))

    @property
    def core(self) -> tuple:
        return (self.r, self.alpha, self.a, self.b)

    def coefficient_table(self) -> pd.DataFrame:
        return pd.DataFrame({
            "parameter": list(PARAM_NAMES),
            "coeff": list(self.core),
            "lower 95% CI": [lo for lo, _ in self.ci95],
            "upper 95% CI": [hi for _, hi in self.ci95],
        })

    def to_dict(self) -> dict:
        return {
            "model": MODEL_TAG,
            "coefficients": dict(zip(PARAM_NAMES, map(float, self.core))),
            "standard_errors": dict(zip(PARAM_NAMES, map(float, self.standard_errors))),
            "ci95": {n: [float(lo), float(hi)] for n, (lo, hi) in zip(PARAM_NAMES, self.ci95)},
            "log_likelihood": float(self.log_likelihood),
            "n_customers": int(self.n_customers),
            "fit_config": dict(self.fit_config),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BgnbdParams":
        """
        Raises:
            InputError: the document is for another model.
            FormatError: a coefficient is missing or a field is not numeric.

        Only the coefficients are required; standard errors and intervals
        default to zero width.
        """
        if not isinstance(doc, dict):
            raise FormatError(f"A {MODEL_TAG!r} parameter document must be a JSON object")
        if doc.get("model") != MODEL_TAG:
            raise InputError(f"Expected a {MODEL_TAG!r} parameter document, got {doc.get('model')!r}")
        try:
            core = [float(doc["coefficients"][n]) for n in PARAM_NAMES]
            ses = doc.get("standard_errors")
            ci95 = doc.get("ci95")
            kwargs = dict(
                standard_errors=tuple(float(ses[n]) for n in PARAM_NAMES) if ses else (0.0,) * len(PARAM_NAMES),
                ci95=tuple((float(ci95[n][0]), float(ci95[n][1])) for n in PARAM_NAMES) if ci95 else None,
                log_likelihood=float(doc.get("log_likelihood", float("nan"))),
                n_customers=int(doc.get("n_customers", 0)),
                fit_config=dict(doc.get("fit_config", {})),
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise FormatError(f"Malformed {MODEL_TAG!r} parameter document: {exc!r}") from exc
        return cls(*core, **kwargs)


def _core(params):
    if isinstance(params, BgnbdParams):
        return params.core
    r, alpha, a, b = (float(v) for v in params)
    return r, alpha, a, b


def _scalar_or_array(out, *inputs):
    return float(out) if all(np.ndim(v) == 0 for v in inputs) else out


def _rfm_arrays(rfm):
    x = np.asarray(rfm["frequency"], dtype=float)
    tx = np.asarray(rfm["recency"], dtype=float)
    T = np.asarray(rfm["T"], dtype=float)
    if np.any(x < 0) or np.any(tx < 0) or np.any(tx > T):
        raise InputError("RFM rows need frequency >= 0 and 0 <= recency <= T")
    return x, tx, T


def _decayed_hyp2f1(r, a, b, x, z):
    """
    (1-z)^(r+x) 2F1(r+x, b+x; a+b+x-1; z), summed through Euler's identity as
    (1-z)^(a-1) 2F1(a+b-1-r, a-1; a+b+x-1; z) so the two powers are never
    formed separately. scipy's connection formulas take over where z is too
    close to 1 for the in-house series.
    """
    upper = (a + b - 1.0 - r, a - 1.0, a + b + x - 1.0)
    try:
        series = hyp2f1(*upper, z, euler_threshold=1.0)
    except NumericError:
        series = scipy_hyp2f1(*upper, z)
    return np.power(1.0 - z, a - 1.0) * series


# --- Individual level ---------------------------------------------------------

def individual_pmf(customer: LatentCustomer, x, t):
    """
    P(X(t) = x | λ, p): repeat transactions in (0, t] for a customer alive at 0.

        (1-p)^x (λt)^x e^{-λt} / x!  +  [x>0] p (1-p)^{x-1} P(Poisson(λt) >= x)

    Evaluated in log-space; the Erlang tail uses the regularised incomplete gamma.
    """
    x_arr = np.asarray(x, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(x_arr < 0):
        raise DomainError("individual_pmf requires x >= 0 and t >= 0")
    lam, p = customer.lam, customer.p_dropout
    lt = lam * t_arr
    with np.errstate(divide="ignore", invalid="ignore"):
        log_keep = np.log1p(-p)
        keep_x = np.where(x_arr > 0, x_arr * log_keep, 0.0)
        keep_prev = np.where(x_arr > 1, (x_arr - 1) * log_keep, 0.0)
        rate_x = np.where(x_arr > 0, x_arr * np.log(lt), 0.0)
        alive = keep_x + rate_x - lt - gammaln(x_arr + 1)
        tail = gammainc(np.maximum(x_arr, 1.0), lt)
        dead = np.where(x_arr > 0, np.log(p) + keep_prev + np.log(tail), -np.inf)
        out = np.exp(np.logaddexp(alive, dead))
    return _scalar_or_array(out, x, t)


# --- Likelihood and fit -------------------------------------------------------

def individual_log_likelihood(params, x, tx, T) -> np.ndarray:
    r, alpha, a, b = _core(params)
    x = np.asarray(x, dtype=float)
    tx = np.asarray(tx, dtype=float)
    T = np.asarray(T, dtype=float)

    base = gammaln(r + x) - gammaln(r) + r * np.log(alpha)
    beta_ab = betaln(a, b)
    alive = base + betaln(a, b + x) - beta_ab - (r + x) * np.log(alpha + T)
    with np.errstate(invalid="ignore"):
        dead = np.where(
            x > 0,
            base + betaln(a + 1, np.where(x > 0, b + x - 1, 1.0)) - beta_ab - (r + x) * np.log(alpha + tx),
            -np.inf,
        )
    return np.logaddexp(alive, dead)


def log_likelihood(params, rfm) -> float:
    """
    Σ ln L(r, α, a, b | x, t_x, T) over the table. The sum is correctly
    rounded (math.fsum), so row order never changes the result.

    Raises:
        InputError: empty table.
    """
    x, tx, T = _rfm_arrays(rfm)
    if x.size == 0:
        raise InputError("log_likelihood needs at least one customer")
    return math.fsum(individual_log_likelihood(params, x, tx, T))


def fit_bgnbd(rfm, config: Optional[OptimizerConfig] = None, penalizer: float = 0.0) -> BgnbdParams:
    """
    Maximum-likelihood BG/NBD fit over log-transformed (r, α, a, b).

    Raises:
        FitError: every frequency is zero, or the optimizer did not converge.
    """
    x, tx, T = _rfm_arrays(rfm)
    n = x.size
    if n == 0 or not np.any(x > 0):
        raise FitError("BG/NBD fit needs at least one customer with a repeat purchase")
    config = config or OptimizerConfig()

    def mean_neg_ll(params):
        values = individual_log_likelihood(params, x, tx, T)
        if not np.all(np.isfinite(values)):
            return np.inf
        return -math.fsum(values) / n

    fit = fit_log_parameters(mean_neg_ll, n, len(PARAM_NAMES), config, penalizer)
    return BgnbdParams(
        *map(float, fit.estimates),
        standard_errors=tuple(map(float, fit.standard_errors)),
        ci95=tuple((float(lo), float(hi)) for lo, hi in fit.ci95),
        log_likelihood=fit.log_likelihood,
        n_customers=n,
        fit_config={**config.to_dict(), "penalizer": penalizer, "iterations": fit.optim.iterations},
    )


# --- Predictions --------------------------------------------------------------

def probability_alive(params, x, t_x, T):
    """P(alive | x, t_x, T) = 1 / (1 + [x>0] a/(b+x-1) ((α+T)/(α+t_x))^{r+x})."""
    r, alpha, a, b = _core(params)
    x_arr = np.asarray(x, dtype=float)
    tx_arr = np.asarray(t_x, dtype=float)
    T_arr = np.asarray(T, dtype=float)
    if np.any(tx_arr < 0) or np.any(tx_arr > T_arr):
        raise DomainError("probability_alive requires 0 <= t_x <= T")
    with np.errstate(over="ignore"):
        log_ratio = (r + x_arr) * (np.log(alpha + T_arr) - np.log(alpha + tx_arr))
        odds = np.where(x_arr > 0, a / (b + np.maximum(x_arr, 1.0) - 1.0) * np.exp(log_ratio), 0.0)
    return _scalar_or_array(1.0 / (1.0 + odds), x, t_x, T)


def conditional_expected_transactions(params, horizon_t, x, t_x, T):
    """
    Expected repeat transactions in the next `horizon_t` units for a customer
    with history (x, t_x, T).

    Warns NumericWarning when a < 1; the value is still computed.

    Raises:
        DomainError: a == 1 or a negative horizon.
    """
    r, alpha, a, b = _core(params)
    if a == 1:
        raise DomainError("conditional_expected_transactions is undefined at a = 1")
    t = np.asarray(horizon_t, dtype=float)
    x_arr = np.asarray(x, dtype=float)
    T_arr = np.asarray(T, dtype=float)
    if np.any(t < 0):
        raise DomainError("horizon_t must be nonnegative")
    if a < 1:
        warnings.warn(
            f"a = {a:.4g} < 1: conditional expected transactions may be numerically unstable",
            NumericWarning,
        )
    z = t / (alpha + T_arr + t)
    expected_if_alive = (a + b + x_arr - 1.0) / (a - 1.0) * (1.0 - _decayed_hyp2f1(r, a, b, x_arr, z))
    out = expected_if_alive * probability_alive(params, x_arr, t_x, T_arr)
    return _scalar_or_array(out, horizon_t, x, t_x, T)


def expected_transactions(params, t):
    """Population mean repeat transactions in (0, t] for a newly acquired customer."""
    r, alpha, a, b = _core(params)
    if a == 1:
        raise DomainError("expected_transactions is undefined at a = 1")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise DomainError("t must be nonnegative")
    out = (a + b - 1.0) / (a - 1.0) * (1.0 - _decayed_hyp2f1(r, a, b, 0.0, t_arr / (alpha + t_arr)))
    return _scalar_or_array(out, t)


def population_pmf(params, x, t):
    """Unconditional P(X(t) = x | r, α, a, b) for a newly acquired customer."""
    r, alpha, a, b = _core(params)
    x_arr = np.asarray(x, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(x_arr < 0):
        raise DomainError("population_pmf requires x >= 0 and t >= 0")
    success = alpha / (alpha + t_arr)
    beta_ab = betaln(a, b)
    alive = np.exp(betaln(a, b + x_arr) - beta_ab) * nbinom.pmf(x_arr, r, success)
    dead_weight = np.exp(betaln(a + 1, b + np.maximum(x_arr, 1.0) - 1.0) - beta_ab)
    dead = np.where(x_arr > 0, dead_weight * nbinom.sf(x_arr - 1, r, success), 0.0)
    return _scalar_or_array(alive + dead, x, t)


def frequency_recency_matrix(
    params,
    max_frequency: int,
    max_recency: float,
    age_T: float,
    mode: str = "p_alive",
    horizon_t: float = 1.0,
    recency_step: float = 1.0,
) -> pd.DataFrame:
    """
    Grid indexed by recency (rows) and frequency (columns). Cells whose
    recency exceeds age_T are NaN.

    mode: "p_alive" or "expected_purchases" (expected purchases in the next
    `horizon_t` units).
    """
    if max_frequency < 0 or not max_recency > 0 or not age_T > 0 or not recency_step > 0:
        raise DomainError("matrix bounds must be positive")
    if mode not in ("p_alive", "expected_purchases"):
        raise DomainError(f"Unknown matrix mode: {mode!r}")
    if mode == "expected_purchases" and not horizon_t > 0:
        raise DomainError("expected_purchases mode needs horizon_t > 0")

    recency = np.arange(0.0, max_recency + 0.5 * recency_step, recency_step)
    frequency = np.arange(int(max_frequency) + 1, dtype=float)
    tx_grid, x_grid = np.meshgrid(recency, frequency, indexing="ij")
    valid = tx_grid <= age_T
    tx_safe = np.where(valid, tx_grid, 0.0)

    if mode == "p_alive":
        values = probability_alive(params, x_grid, tx_safe, age_T)
    else:
        values = conditional_expected_transactions(params, horizon_t, x_grid, tx_safe, age_T)

    grid = pd.DataFrame(
        np.where(valid, values, np.nan),
        index=pd.Index(recency, name="recency"),
        columns=pd.Index(frequency.astype(int), name="frequency"),
    )
    return grid


# --- Main Test Block ----------------------------------------------------------

if __name__ == "__main__":
    published = BgnbdParams(0.982856, 2.902135, 0.437431, 0.017428)
    print("Parameter table:")
    print(published.coefficient_table().to_string(index=False))
    print(f"\nP(alive | x=5, t_x=T=30)           = {probability_alive(published, 5, 30, 30):.5f}")
    print(f"E[X(30) | x=2, t_x=20, T=40]        = {conditional_expected_transactions(published, 30, 2, 20, 40):.5f}")
    print(f"P(X(4) = 3 | λ=0.5, p=0.2)          = {individual_pmf(LatentCustomer(0.5, 0.2), 3, 4):.6f}")
    print("\nP(alive) grid (frequency 0-5, recency 0-30 step 10, T=30):")
    print(frequency_recency_matrix(published, 5, 30, 30, recency_step=10).round(3).to_string())
