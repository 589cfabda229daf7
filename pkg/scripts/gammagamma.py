"""
Gamma-Gamma monetary-value model.

Individual transaction values are Gamma(shape p, rate ν) and the per-customer
rate ν is Gamma(shape q, rate γ); spend is assumed independent of purchase
frequency, which fit_gg() checks with a Pearson correlation gate.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from scipy.special import gammaln
from scipy.stats import pearsonr

from scripts.errors import CorrelationWarning, DomainError, FitError, FormatError, InputError
from scripts.numerics import OptimizerConfig, fit_log_parameters


MODEL_TAG = "gamma-gamma"
PARAM_NAMES = ("p", "q", "gamma")
# coefficient tables label the third coefficient "lambda"
TABLE_LABELS = ("p", "q", "lambda")
DEFAULT_CORRELATION_THRESHOLD = 0.1


@dataclass(frozen=True)
class GgParams:
    p_shape: float
    q_shape: float
    gamma_scale: float
    standard_errors: tuple = (0.0, 0.0, 0.0)
    ci95: Optional[tuple] = None
    log_likelihood: float = float("nan")
    n_customers: int = 0
    sample_mean_value: float = float("nan")
    fit_config: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name, value in zip(PARAM_NAMES, self.core):
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"Gamma-Gamma parameter {name} must be positive, got {value}")
        if self.ci95 is None:
            object.__setattr__(self, "ci95", tuple((v, v) for v in self.core))

    @property
    def core(self) -> tuple:
        return (self.p_shape, self.q_shape, self.gamma_scale)

    @property
    def prior_mean(self) -> float:
        """Population mean spend γp/(q-1); infinite when q <= 1."""
        if self.q_shape <= 1:
            return math.inf
        return self.gamma_scale * self.p_shape / (self.q_shape - 1.0)

    def coefficient_table(self) -> pd.DataFrame:
        return pd.DataFrame({
            "parameter": list(TABLE_LABELS),
            "coeff": list(self.core),
            "lower 95% CI": [lo for lo, _ in self.ci95],
            "upper 95% CI": [hi for _, hi in self.ci95],
        })

    def to_dict(self) -> dict:
        coefficients = dict(zip(PARAM_NAMES, map(float, self.core)))
        coefficients["lambda"] = coefficients["gamma"]
        return {
            "model": MODEL_TAG,
            "coefficients": coefficients,
            "standard_errors": dict(zip(PARAM_NAMES, map(float, self.standard_errors))),
            "ci95": {n: [float(lo), float(hi)] for n, (lo, hi) in zip(PARAM_NAMES, self.ci95)},
            "log_likelihood": float(self.log_likelihood),
            "n_customers": int(self.n_customers),
            "sample_mean_value": float(self.sample_mean_value),
            "fit_config": dict(self.fit_config),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GgParams":
        """Inverse of to_dict; the coefficient "lambda" is accepted for "gamma"."""
        if not isinstance(doc, dict):
            raise FormatError(f"A {MODEL_TAG!r} parameter document must be a JSON object")
        if doc.get("model") != MODEL_TAG:
            raise InputError(f"Expected a {MODEL_TAG!r} parameter document, got {doc.get('model')!r}")
        try:
            coeffs = dict(doc["coefficients"])
            coeffs.setdefault("gamma", coeffs.get("lambda"))
            core = [float(coeffs[n]) for n in PARAM_NAMES]
            ses = doc.get("standard_errors")
            ci95 = doc.get("ci95")
            kwargs = dict(
                standard_errors=tuple(float(ses[n]) for n in PARAM_NAMES) if ses else (0.0,) * len(PARAM_NAMES),
                ci95=tuple((float(ci95[n][0]), float(ci95[n][1])) for n in PARAM_NAMES) if ci95 else None,
                log_likelihood=float(doc.get("log_likelihood", float("nan"))),
                n_customers=int(doc.get("n_customers", 0)),
                sample_mean_value=float(doc.get("sample_mean_value", float("nan"))),
                fit_config=dict(doc.get("fit_config", {})),
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise FormatError(f"Malformed {MODEL_TAG!r} parameter document: {exc!r}") from exc
        return cls(*core, **kwargs)


def _core(params):
    if isinstance(params, GgParams):
        return params.core
    p, q, g = (float(v) for v in params)
    return p, q, g


def pearson_correlation(xs, ys) -> float:
    """
    Sample Pearson correlation.

    Raises:
        InputError: lengths differ or are below 2, or either side has zero variance.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.size < 2:
        raise InputError("pearson_correlation needs two sequences of equal length >= 2")
    if np.ptp(xs) == 0 or np.ptp(ys) == 0:
        raise InputError("Correlation is undefined for a sequence with zero variance")
    corr, _ = pearsonr(xs, ys)
    return float(np.clip(corr, -1.0, 1.0))


def individual_log_likelihood(params, x, m) -> np.ndarray:
    p, q, g = _core(params)
    x = np.asarray(x, dtype=float)
    m = np.asarray(m, dtype=float)
    px = p * x
    return (
        gammaln(px + q) - gammaln(px) - gammaln(q)
        + q * np.log(g)
        + (px - 1.0) * np.log(m)
        + px * np.log(x)
        - (px + q) * np.log(g + m * x)
    )


def gg_log_likelihood(params, x, m) -> float:
    """
    Σ ln f(m̄_x | p, q, γ, x) over repeat customers, correctly rounded.

    Raises:
        InputError: a row has x < 1 or m̄_x <= 0.
    """
    x = np.asarray(x, dtype=float)
    m = np.asarray(m, dtype=float)
    if np.any(x < 1) or np.any(m <= 0):
        raise InputError("gg_log_likelihood needs every row to have x >= 1 and m > 0")
    return math.fsum(individual_log_likelihood(params, x, m))


def repeat_customers(rfm) -> pd.DataFrame:
    table = pd.DataFrame(rfm)
    return table[(table["frequency"] >= 1) & (table["monetary_value"] > 0)]


def fit_gg(
    rfm,
    config: Optional[OptimizerConfig] = None,
    correlation_threshold: float = DEFAULT_CORRELATION_THRESHOLD,
    penalizer: float = 0.0,
) -> GgParams:
    """
    Fit (p, q, γ) on the customers with a repeat purchase and positive spend.

    Emits CorrelationWarning when |corr(frequency, monetary_value)| exceeds
    `correlation_threshold`; the fit still proceeds.

    Raises:
        FitError: no eligible customers, or the optimizer did not converge.
    """
    eligible = repeat_customers(rfm)
    if eligible.empty:
        raise FitError("Gamma-Gamma fit needs customers with frequency >= 1 and monetary_value > 0")
    x = eligible["frequency"].to_numpy(dtype=float)
    m = eligible["monetary_value"].to_numpy(dtype=float)
    n = x.size

    corr = None
    if n >= 2 and np.ptp(x) > 0 and np.ptp(m) > 0:
        corr = pearson_correlation(x, m)
        if abs(corr) > correlation_threshold:
            warnings.warn(
                f"frequency/monetary correlation {corr:.3f} exceeds {correlation_threshold}; "
                "the Gamma-Gamma independence assumption is doubtful",
                CorrelationWarning,
            )
    config = config or OptimizerConfig()

    def mean_neg_ll(params):
        values = individual_log_likelihood(params, x, m)
        if not np.all(np.isfinite(values)):
            return np.inf
        return -math.fsum(values) / n

    fit = fit_log_parameters(mean_neg_ll, n, len(PARAM_NAMES), config, penalizer)
    return GgParams(
        *map(float, fit.estimates),
        standard_errors=tuple(map(float, fit.standard_errors)),
        ci95=tuple((float(lo), float(hi)) for lo, hi in fit.ci95),
        log_likelihood=fit.log_likelihood,
        n_customers=n,
        sample_mean_value=float(math.fsum(m) / n),
        fit_config={
            **config.to_dict(),
            "penalizer": penalizer,
            "correlation_threshold": correlation_threshold,
            "correlation": corr,
            "iterations": fit.optim.iterations,
        },
    )


def conditional_mean_transaction_value(params, x, m):
    """
    Posterior mean spend per transaction, p(γ + x·m̄)/(px + q - 1): a blend of
    the population mean γp/(q-1) and the observed average m̄.

    Raises:
        DomainError: px + q <= 1.
    """
    p, q, g = _core(params)
    x_arr = np.asarray(x, dtype=float)
    m_arr = np.asarray(m, dtype=float)
    denom = p * x_arr + q - 1.0
    if np.any(denom <= 0):
        raise DomainError("conditional_mean_transaction_value needs p·x + q > 1")
    out = p * (g + x_arr * m_arr) / denom
    return float(out) if np.ndim(x) == 0 and np.ndim(m) == 0 else out


def eq11_literal(params, x, lambda_coeff):
    """
    The legacy shortcut (p + x) / (q + λ), kept for comparison only. Not used
    by the CLV pipeline: it has no monetary observation in it.
    """
    p, q, _ = _core(params)
    out = (p + np.asarray(x, dtype=float)) / (q + np.asarray(lambda_coeff, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


# --- Main Test Block ----------------------------------------------------------

if __name__ == "__main__":
    published = GgParams(4.495408, 0.038024, 4.360291)
    print("Parameter table:")
    print(published.coefficient_table().to_string(index=False))
    print(f"\nE[M | x=3, m=12]            = {conditional_mean_transaction_value(published, 3, 12.0):.4f}")
    print(f"literal (p+x)/(q+λ), x=2    = {eq11_literal(published, 2, 4.360291):.5f}")
    print(f"corr((1,2,3), (2,4,7))      = {pearson_correlation([1, 2, 3], [2, 4, 7]):.4f}")
