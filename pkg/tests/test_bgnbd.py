"""
BG/NBD likelihood, fit and prediction checks against closed forms,
numerical quadrature and simulation.

`pytest tests/test_bgnbd.py -m "not slow"` skips the simulation-scale checks.
"""
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from scripts.bgnbd import (
    BgnbdParams,
    LatentCustomer,
    conditional_expected_transactions,
    expected_transactions,
    fit_bgnbd,
    frequency_recency_matrix,
    individual_log_likelihood,
    individual_pmf,
    log_likelihood,
    population_pmf,
    probability_alive,
)
from scripts.errors import DomainError, FitError, InputError, NumericWarning
from scripts.numerics import make_rng
from scripts.simulate import SimulationConfig, rfm_from_simulation, simulate_customers


FITTED = BgnbdParams(0.982856, 2.902135, 0.437431, 0.017428)
TRUTH = BgnbdParams(0.25, 4.5, 0.8, 2.4)
SMOOTH = BgnbdParams(2.0, 3.0, 2.0, 3.0)

positive = st.floats(min_value=0.05, max_value=20.0)


def gamma_beta_quadrature(params, integrand):
    """∫∫ integrand(λ, p) g(λ | r, α) h(p | a, b) dλ dp."""
    r, alpha, a, b = params.core
    lam_pdf = stats.gamma(r, scale=1.0 / alpha).pdf
    p_pdf = stats.beta(a, b).pdf
    value, _ = integrate.dblquad(
        lambda lam, p: integrand(lam, p) * lam_pdf(lam) * p_pdf(p),
        0.0, 1.0, lambda p: 0.0, lambda p: np.inf,
        epsabs=0.0, epsrel=1e-10,
    )
    return value


def latent_likelihood(x, t_x, T):
    def likelihood(lam, p):
        alive = (1 - p) ** x * lam ** x * math.exp(-lam * T)
        dead = p * (1 - p) ** (x - 1) * lam ** x * math.exp(-lam * t_x) if x > 0 else 0.0
        return alive + dead
    return likelihood


# --- Individual pmf -----------------------------------------------------------

def test_individual_pmf_hand_values():
    customer = LatentCustomer(lam=0.5, p_dropout=0.2)
    assert individual_pmf(customer, 0, 4) == pytest.approx(math.exp(-2.0), rel=1e-12)
    expected = 0.8 * 2.0 * math.exp(-2.0) + 0.2 * (1.0 - math.exp(-2.0))
    assert individual_pmf(customer, 1, 4) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("lam_t", np.linspace(0.1, 10.0, 5))
@pytest.mark.parametrize("p", np.linspace(0.0, 0.9, 5))
def test_individual_pmf_normalised(lam_t, p):
    total = individual_pmf(LatentCustomer(lam=1.0, p_dropout=p), np.arange(201), lam_t).sum()
    assert total == pytest.approx(1.0, abs=1e-6)


def test_individual_pmf_certain_dropout():
    pmf = individual_pmf(LatentCustomer(lam=2.0, p_dropout=1.0), np.arange(4), 1.5)
    np.testing.assert_allclose(pmf, [math.exp(-3.0), 1 - math.exp(-3.0), 0.0, 0.0], atol=1e-15)


def test_individual_pmf_matches_renewal_simulation():
    # purchases arrive as Poisson(λt); the customer drops out after each one with probability p
    rng = make_rng(2718)
    n = 1_000_000
    purchases = np.minimum(rng.poisson(0.5 * 4.0, n), rng.geometric(0.2, n))
    hits = (purchases == 3).mean()
    se = math.sqrt(hits * (1 - hits) / n)
    assert individual_pmf(LatentCustomer(0.5, 0.2), 3, 4.0) == pytest.approx(hits, abs=4 * se)


def test_latent_customer_validation():
    with pytest.raises(DomainError):
        LatentCustomer(lam=0.0, p_dropout=0.5)
    with pytest.raises(DomainError):
        LatentCustomer(lam=1.0, p_dropout=1.5)


# --- Likelihood ---------------------------------------------------------------

def test_zero_frequency_likelihood_closed_form():
    value = individual_log_likelihood(BgnbdParams(0.5, 2.0, 1.0, 1.0), 0, 0, 3.0)
    assert value == pytest.approx(0.5 * math.log(2.0 / 5.0), abs=1e-12)


@pytest.mark.parametrize("params, x, t_x, T", [
    (SMOOTH, 0, 0.0, 10.0),
    (SMOOTH, 2, 5.0, 10.0),
    (SMOOTH, 6, 30.0, 32.0),
    (BgnbdParams(1.5, 4.0, 1.2, 2.5), 1, 1.0, 20.0),
    (BgnbdParams(3.0, 10.0, 1.0, 1.0), 4, 12.0, 25.0),
])
def test_likelihood_matches_quadrature(params, x, t_x, T):
    closed = math.exp(individual_log_likelihood(params, x, t_x, T))
    numeric = gamma_beta_quadrature(params, latent_likelihood(x, t_x, T))
    assert closed == pytest.approx(numeric, rel=1e-4)


@settings(max_examples=25, deadline=None)
@given(st.randoms(use_true_random=False))
def test_log_likelihood_order_independent(rnd):
    rng = np.random.default_rng(0)
    T = rng.uniform(5, 50, 200)
    tx = T * rng.uniform(0, 1, 200)
    x = rng.poisson(3, 200) * (tx > 0)
    rfm = pd.DataFrame({"frequency": x, "recency": tx, "T": T})
    order = list(range(200))
    rnd.shuffle(order)
    assert log_likelihood(FITTED, rfm) == log_likelihood(FITTED, rfm.iloc[order])


def test_log_likelihood_rejects_bad_rows():
    with pytest.raises(InputError):
        log_likelihood(TRUTH, pd.DataFrame({"frequency": [], "recency": [], "T": []}))
    with pytest.raises(InputError):
        log_likelihood(TRUTH, pd.DataFrame({"frequency": [1], "recency": [5.0], "T": [4.0]}))


def test_params_validation():
    with pytest.raises(DomainError):
        BgnbdParams(0.0, 1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        BgnbdParams(1.0, float("inf"), 1.0, 1.0)


def test_params_document_and_table():
    doc = FITTED.to_dict()
    assert doc["model"] == "bg/nbd"
    restored = BgnbdParams.from_dict(doc)
    assert restored.core == FITTED.core
    assert restored.ci95 == FITTED.ci95
    table = FITTED.coefficient_table()
    assert list(table.columns) == ["parameter", "coeff", "lower 95% CI", "upper 95% CI"]
    assert table["parameter"].tolist() == ["r", "alpha", "a", "b"]
    with pytest.raises(InputError):
        BgnbdParams.from_dict({**doc, "model": "gamma-gamma"})


def test_fit_needs_a_repeat_purchase():
    rfm = pd.DataFrame({"frequency": [0, 0], "recency": [0.0, 0.0], "T": [10.0, 20.0]})
    with pytest.raises(FitError):
        fit_bgnbd(rfm)


@pytest.fixture(scope="module")
def recovery_fit():
    sim = simulate_customers(SimulationConfig(
        n_customers=20_000, horizon_T=78.0, r=0.25, alpha=4.5, a=0.8, b=2.4, seed=2024,
    ))
    rfm = rfm_from_simulation(sim)
    return rfm, fit_bgnbd(rfm)


@pytest.mark.slow
def test_fit_recovers_simulated_parameters(recovery_fit):
    _, fit = recovery_fit
    for estimate, se, truth in zip(fit.core, fit.standard_errors, TRUTH.core):
        assert abs(estimate - truth) <= max(0.10 * truth, 3.0 * se)
    for (lo, hi), estimate in zip(fit.ci95, fit.core):
        assert lo < estimate < hi
    assert fit.n_customers == 20_000


@pytest.mark.slow
def test_fit_is_stationary(recovery_fit):
    rfm, fit = recovery_fit
    theta = np.log(fit.core)
    n = len(rfm)

    def objective(t):
        return -log_likelihood(np.exp(t), rfm) / n

    h = 1e-5
    grad = [
        (objective(theta + h * e) - objective(theta - h * e)) / (2 * h)
        for e in np.eye(4)
    ]
    assert max(abs(g) for g in grad) < 1e-3


# --- P(alive) -----------------------------------------------------------------

def test_probability_alive_hand_value():
    assert probability_alive(FITTED, 5, 30.0, 30.0) == pytest.approx(4.017428 / 4.454859, rel=1e-6)


@settings(max_examples=300)
@given(positive, positive, positive, positive, st.floats(min_value=0.0, max_value=500.0))
def test_probability_alive_without_repeats_is_one(r, alpha, a, b, T):
    assert probability_alive(BgnbdParams(r, alpha, a, b), 0, 0.0, T) == 1.0


@given(
    positive, positive, positive, positive,
    st.integers(min_value=1, max_value=50),
    st.floats(min_value=0.0, max_value=1.0),
    st.floats(min_value=0.0, max_value=1.0),
    st.floats(min_value=0.1, max_value=200.0),
)
def test_probability_alive_monotone_in_recency(r, alpha, a, b, x, u1, u2, T):
    params = BgnbdParams(r, alpha, a, b)
    lo, hi = sorted((u1 * T, u2 * T))
    assert probability_alive(params, x, lo, T) <= probability_alive(params, x, hi, T) + 1e-12


def test_probability_alive_rejects_recency_beyond_age():
    with pytest.raises(DomainError):
        probability_alive(TRUTH, 2, 10.0, 5.0)


def test_probability_alive_vectorised():
    out = probability_alive(FITTED, np.array([0, 5]), np.array([0.0, 30.0]), np.array([10.0, 30.0]))
    assert out.shape == (2,)
    assert out[0] == 1.0


# --- Expected transactions ----------------------------------------------------

def test_conditional_expectation_of_new_customer_is_population_mean():
    params = BgnbdParams(0.5, 5.0, 2.0, 3.0)
    assert conditional_expected_transactions(params, 20.0, 0, 0.0, 0.0) == pytest.approx(
        expected_transactions(params, 20.0), rel=1e-10
    )


def test_conditional_expectation_zero_horizon():
    assert conditional_expected_transactions(SMOOTH, 0.0, 3, 5.0, 10.0) == 0.0


def test_conditional_expectation_warns_for_small_a():
    with pytest.warns(NumericWarning):
        conditional_expected_transactions(TRUTH, 10.0, 1, 2.0, 5.0)


def test_conditional_expectation_bounded_over_long_horizon():
    params = BgnbdParams(2.0, 3.0, 2.5, 3.2)
    ceiling = (2.5 + 3.2 + 2 - 1) / (2.5 - 1)
    far = conditional_expected_transactions(params, 1e6, 2, 8.0, 10.0)
    near = conditional_expected_transactions(params, 1e4, 2, 8.0, 10.0)
    assert math.isfinite(far)
    assert near - 1e-9 <= far <= ceiling * probability_alive(params, 2, 8.0, 10.0) + 1e-9


@pytest.mark.parametrize("x", [100, 200])
def test_conditional_expectation_bounded_for_frequent_buyers(x):
    params = BgnbdParams(2.0, 3.0, 2.5, 3.2)
    T = 1.5 * x
    ceiling = (2.5 + 3.2 + x - 1) / (2.5 - 1)
    far = conditional_expected_transactions(params, 1e6, x, T, T)
    near = conditional_expected_transactions(params, 1e4, x, T, T)
    assert math.isfinite(far) and math.isfinite(near)
    assert near - 1e-9 <= far <= ceiling * probability_alive(params, x, T, T) + 1e-9


def test_conditional_expectation_finite_for_long_history():
    params = BgnbdParams(0.25, 4.5, 2.0, 2.4)
    value = conditional_expected_transactions(params, 2000.0, 1100, 1200.0, 1200.0)
    assert math.isfinite(value)
    assert 0.0 < value <= (2.0 + 2.4 + 1100 - 1) / (2.0 - 1)


def test_conditional_expectation_undefined_at_a_one():
    with pytest.raises(DomainError):
        conditional_expected_transactions(BgnbdParams(1.0, 1.0, 1.0, 2.0), 5.0, 1, 2.0, 3.0)


@pytest.mark.filterwarnings("ignore::scripts.errors.NumericWarning")
@pytest.mark.parametrize("params, x, t_x, T, t", [
    (TRUTH, 2, 30.0, 40.0, 39.0),
    (TRUTH, 0, 0.0, 25.0, 39.0),
    (SMOOTH, 5, 18.0, 20.0, 10.0),
])
def test_conditional_expectation_matches_posterior_quadrature(params, x, t_x, T, t):
    # alive customers buy until the dropout epoch: E[X(t) | λ, p] = (1 - e^{-λpt}) / p
    def alive_forward(lam, p):
        return (1 - p) ** x * lam ** x * math.exp(-lam * T) * -math.expm1(-lam * p * t) / p

    numeric = gamma_beta_quadrature(params, alive_forward) / math.exp(individual_log_likelihood(params, x, t_x, T))
    assert conditional_expected_transactions(params, t, x, t_x, T) == pytest.approx(numeric, rel=1e-5)


def test_expected_transactions_undefined_at_a_one():
    with pytest.raises(DomainError):
        expected_transactions(BgnbdParams(1.0, 1.0, 1.0, 2.0), 5.0)


@pytest.mark.slow
def test_expected_transactions_matches_simulation():
    sim = simulate_customers(SimulationConfig(
        n_customers=200_000, horizon_T=39.0, r=0.25, alpha=4.5, a=0.8, b=2.4, seed=99,
    ))
    freq = rfm_from_simulation(sim)["frequency"].to_numpy(dtype=float)
    se = freq.std(ddof=1) / math.sqrt(freq.size)
    assert abs(freq.mean() - expected_transactions(TRUTH, 39.0)) < 3 * se


def test_population_pmf_normalised_with_matching_mean():
    x = np.arange(600)
    pmf = population_pmf(TRUTH, x, 39.0)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-8)
    assert (pmf * x).sum() == pytest.approx(expected_transactions(TRUTH, 39.0), rel=1e-6)


def test_population_pmf_at_zero_time():
    assert population_pmf(TRUTH, 0, 0.0) == pytest.approx(1.0)
    assert population_pmf(TRUTH, 1, 0.0) == pytest.approx(0.0, abs=1e-15)


# --- Frequency / recency grid -------------------------------------------------

def test_frequency_recency_matrix_axes():
    grid = frequency_recency_matrix(FITTED, max_frequency=5, max_recency=30, age_T=20)
    assert grid.shape == (31, 6)
    assert grid.index.name == "recency"
    assert grid.columns.name == "frequency"
    assert grid.loc[21.0:].isna().all().all()
    assert (grid.loc[:20.0, 0] == 1.0).all()
    assert grid.loc[10.0, 3] == pytest.approx(probability_alive(FITTED, 3, 10.0, 20.0))


@pytest.mark.filterwarnings("ignore::scripts.errors.NumericWarning")
def test_frequency_recency_matrix_expected_purchases():
    grid = frequency_recency_matrix(FITTED, 4, 10, 10, mode="expected_purchases", horizon_t=5.0, recency_step=5.0)
    assert grid.shape == (3, 5)
    assert grid.loc[5.0, 2] == pytest.approx(conditional_expected_transactions(FITTED, 5.0, 2, 5.0, 10.0))


def test_frequency_recency_matrix_rejects_unknown_mode():
    with pytest.raises(DomainError):
        frequency_recency_matrix(FITTED, 3, 10, 10, mode="spend")


# --- Main Test Block ----------------------------------------------------------

if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
