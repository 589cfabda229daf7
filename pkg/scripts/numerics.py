"""
Numerical building blocks shared by the statistical modules.

Provides:
- ln_gamma(), ln_beta(): log special functions with domain checks (scipy.special).
- hyp2f1(): Gaussian hypergeometric 2F1 on 0 <= z < 1 by power series, with the
  Euler transformation for z > 0.5.
- nelder_mead(): deterministic derivative-free simplex minimiser with restarts
  (scipy.optimize, Nelder-Mead).
- numerical_hessian(): symmetric central finite-difference Hessian.
- fit_log_parameters(): MLE over log-parameters with delta-method 95% CIs.
- rng_draws() / make_rng(): seeded, platform-independent sampling on numpy's PCG64.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import betaln, gammaln

from scripts.errors import DomainError, FitError, InputError, NumericError, NumericWarning


Z_95 = 1.96
HYP2F1_MAX_TERMS = 10_000
HYP2F1_RTOL = 1e-14
EULER_THRESHOLD = 0.5

SEED_MASK = (1 << 64) - 1


# --- Special functions --------------------------------------------------------

def _as_float(values):
    arr = np.asarray(values, dtype=float)
    return arr, arr.ndim == 0


def ln_gamma(x):
    """ln Γ(x) for x > 0 (scalar or array)."""
    arr, scalar = _as_float(x)
    if np.any(~(arr > 0)):
        raise DomainError(f"ln_gamma requires x > 0, got {x!r}")
    out = gammaln(arr)
    return float(out) if scalar else out


def ln_beta(a, b):
    """ln B(a, b) = ln Γ(a) + ln Γ(b) - ln Γ(a+b) for a, b > 0."""
    a_arr, a_scalar = _as_float(a)
    b_arr, b_scalar = _as_float(b)
    if np.any(~(a_arr > 0)) or np.any(~(b_arr > 0)):
        raise DomainError(f"ln_beta requires a > 0 and b > 0, got ({a!r}, {b!r})")
    out = betaln(a_arr, b_arr)
    return float(out) if (a_scalar and b_scalar) else out


def _hyp2f1_series(a, b, c, z, max_terms, rtol):
    total = np.ones_like(z)
    term = np.ones_like(z)
    active = z != 0.0
    for n in range(max_terms):
        if not active.any():
            return total
        ratio = (a + n) * (b + n) / ((c + n) * (n + 1.0)) * z
        term = np.where(active, term * ratio, 0.0)
        total = total + term
        next_ratio = (a + n + 1.0) * (b + n + 1.0) / ((c + n + 1.0) * (n + 2.0)) * z
        # the tail is only bounded once the term ratio has dropped below one
        done = (term == 0.0) | ((np.abs(term) <= rtol * np.abs(total)) & (np.abs(next_ratio) < 1.0))
        active &= ~done
    if active.any():
        raise NumericError(
            f"hyp2f1 series did not converge within {max_terms} terms", terms=max_terms
        )
    return total


def hyp2f1(
    a, b, c, z,
    max_terms: int = HYP2F1_MAX_TERMS,
    rtol: float = HYP2F1_RTOL,
    euler_threshold: float = EULER_THRESHOLD,
):
    """
    Gaussian hypergeometric function 2F1(a, b; c; z) for 0 <= z < 1.

    Direct power series for z <= euler_threshold; above it the Euler
    transformation 2F1(a,b;c;z) = (1-z)^(c-a-b) 2F1(c-a, c-b; c; z) is summed
    instead. euler_threshold=1 always sums the direct series. Broadcasts over
    array arguments.

    Raises:
        DomainError: z outside [0, 1) or c a nonpositive integer.
        NumericError: series did not reach the relative tail threshold in
            `max_terms` terms (the error carries the term count).
    """
    a, b, c, z = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, c, z)))
    scalar = z.ndim == 0
    a, b, c, z = (np.array(v, dtype=float, ndmin=1) for v in (a, b, c, z))

    if np.any((z < 0.0) | (z >= 1.0) | np.isnan(z)):
        raise DomainError("hyp2f1 is only evaluated for 0 <= z < 1")
    if np.any((c <= 0.0) & (c == np.floor(c))):
        raise DomainError("hyp2f1 requires c not to be a nonpositive integer")

    euler = z > euler_threshold
    a_s = np.where(euler, c - a, a)
    b_s = np.where(euler, c - b, b)
    prefactor = np.power(1.0 - z, np.where(euler, c - a - b, 0.0))

    out = prefactor * _hyp2f1_series(a_s, b_s, c, z, max_terms, rtol)
    return float(out[0]) if scalar else out


# --- Optimisation -------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerConfig:
    initial_simplex_scale: float = 0.1
    tolerance: float = 1e-8
    max_iterations: int = 10_000
    restarts: int = 1

    def __post_init__(self):
        if not self.initial_simplex_scale > 0:
            raise DomainError("initial_simplex_scale must be positive")
        if not self.tolerance > 0:
            raise DomainError("tolerance must be positive")
        if int(self.max_iterations) < 1:
            raise DomainError("max_iterations must be >= 1")
        if int(self.restarts) < 0:
            raise DomainError("restarts must be >= 0")

    def to_dict(self):
        return {
            "initial_simplex_scale": self.initial_simplex_scale,
            "tolerance": self.tolerance,
            "max_iterations": int(self.max_iterations),
            "restarts": int(self.restarts),
        }


@dataclass(frozen=True)
class OptimResult:
    argmin: np.ndarray
    objective_value: float
    iterations: int
    converged: bool
    evaluations: int = 0


def _initial_simplex(x0: np.ndarray, scale: float) -> np.ndarray:
    simplex = np.tile(x0, (x0.size + 1, 1))
    simplex[1:] += scale * np.eye(x0.size)
    return simplex


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    x0: Sequence[float],
    config: Optional[OptimizerConfig] = None,
) -> OptimResult:
    """
    Minimise `objective` from `x0` with the Nelder-Mead simplex method.

    The simplex is rebuilt around the best point `config.restarts` times.
    Non-finite objective values inside the run are treated as +inf, so the
    simplex simply steps away from them. The iteration budget is shared by
    all restarts.

    Raises:
        InputError: objective is not finite at x0.
    """
    config = config or OptimizerConfig()
    x_best = np.asarray(x0, dtype=float).copy()
    f_best = float(objective(x_best))
    if not np.isfinite(f_best):
        raise InputError(f"Objective is not finite at the starting point {x_best.tolist()}")

    def guarded(x):
        value = float(objective(x))
        return value if np.isfinite(value) else np.inf

    iterations = 0
    evaluations = 1
    converged = False
    for _ in range(int(config.restarts) + 1):
        remaining = int(config.max_iterations) - iterations
        if remaining <= 0:
            break
        res = minimize(
            guarded,
            x_best,
            method="Nelder-Mead",
            options={
                "initial_simplex": _initial_simplex(x_best, config.initial_simplex_scale),
                "xatol": config.tolerance,
                "fatol": config.tolerance,
                "maxiter": remaining,
                "maxfev": 20 * remaining,
            },
        )
        iterations += int(res.nit)
        evaluations += int(res.nfev)
        converged = bool(res.success)
        if res.fun <= f_best:
            x_best, f_best = np.asarray(res.x, dtype=float), float(res.fun)

    return OptimResult(
        argmin=x_best,
        objective_value=f_best,
        iterations=iterations,
        converged=converged and iterations <= config.max_iterations,
        evaluations=evaluations,
    )


def numerical_hessian(
    objective: Callable[[np.ndarray], float],
    x: Sequence[float],
    step: float = 1e-4,
    min_step: float = 1e-6,
) -> np.ndarray:
    """
    Central finite-difference Hessian of `objective` at `x`.

    Coordinate i uses h_i = max(step * |x_i|, min_step). The result is
    symmetrised as (H + H^T) / 2.

    Raises:
        NumericError: any objective evaluation is not finite.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    h = np.maximum(step * np.abs(x), min_step)

    def f(point):
        value = float(objective(point))
        if not np.isfinite(value):
            raise NumericError(f"Objective is not finite at {point.tolist()} while differencing")
        return value

    f0 = f(x)
    hess = np.empty((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        hess[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            value = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
            hess[i, j] = hess[j, i] = value
    return 0.5 * (hess + hess.T)


@dataclass(frozen=True)
class MleFit:
    estimates: np.ndarray
    standard_errors: np.ndarray
    ci95: np.ndarray
    log_likelihood: float
    optim: OptimResult


def fit_log_parameters(
    mean_neg_log_likelihood: Callable[[np.ndarray], float],
    n_obs: int,
    n_params: int,
    config: Optional[OptimizerConfig] = None,
    penalizer: float = 0.0,
    hessian_step: float = 1e-4,
) -> MleFit:
    """
    Maximum-likelihood fit of strictly positive parameters.

    Minimises mean_neg_log_likelihood(exp(θ)) + penalizer·Σθ² over θ starting
    at θ = 0 (all parameters 1). Standard errors come from the inverse of
    n_obs × the Hessian of the unpenalised mean objective in θ, mapped back by
    the delta method (se = exp(θ)·sd(θ)); ci95 = estimate ± 1.96·se.

    Raises:
        FitError: the simplex did not converge (best point attached).
    """
    if penalizer < 0:
        raise DomainError("penalizer must be nonnegative")

    def unpenalised(theta):
        with np.errstate(all="ignore"):
            return mean_neg_log_likelihood(np.exp(theta))

    def objective(theta):
        return unpenalised(theta) + penalizer * float(np.sum(theta ** 2))

    res = nelder_mead(objective, np.zeros(n_params), config)
    estimates = np.exp(res.argmin)
    if not res.converged:
        raise FitError(
            f"Optimizer did not converge after {res.iterations} iterations", best_params=estimates
        )

    hess = n_obs * numerical_hessian(unpenalised, res.argmin, step=hessian_step, min_step=hessian_step)
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        warnings.warn("Hessian is singular; using its pseudo-inverse", NumericWarning)
        cov = np.linalg.pinv(hess)
    variances = np.diag(cov)
    if np.any(variances < 0):
        warnings.warn("Negative variance estimates clipped to zero", NumericWarning)
        variances = np.clip(variances, 0.0, None)

    se = estimates * np.sqrt(variances)
    ci = np.column_stack([estimates - Z_95 * se, estimates + Z_95 * se])
    return MleFit(
        estimates=estimates,
        standard_errors=se,
        ci95=ci,
        log_likelihood=-n_obs * float(unpenalised(res.argmin)),
        optim=res,
    )


# --- Seeded sampling ----------------------------------------------------------

@dataclass(frozen=True)
class Distribution:
    """Distribution descriptor: kind is gamma | beta | exponential | uniform."""

    kind: str
    params: tuple = field(default_factory=tuple)

    @classmethod
    def gamma(cls, shape, rate):
        return cls("gamma", (float(shape), float(rate)))

    @classmethod
    def beta(cls, a, b):
        return cls("beta", (float(a), float(b)))

    @classmethod
    def exponential(cls, rate):
        return cls("exponential", (float(rate),))

    @classmethod
    def uniform(cls):
        return cls("uniform", ())

    def validate(self):
        expected = {"gamma": 2, "beta": 2, "exponential": 1, "uniform": 0}
        if self.kind not in expected:
            raise DomainError(f"Unknown distribution kind: {self.kind!r}")
        if len(self.params) != expected[self.kind]:
            raise DomainError(f"{self.kind} takes {expected[self.kind]} parameter(s), got {self.params}")
        if any(not (p > 0 and np.isfinite(p)) for p in self.params):
            raise DomainError(f"{self.kind} parameters must be positive and finite, got {self.params}")


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    PCG64 generator for `seed`, optionally split by integer `keys`
    (e.g. a block index) through numpy's SeedSequence.
    """
    entropy = [int(seed) & SEED_MASK] + [int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def draw(rng: np.random.Generator, dist: Distribution, n: int) -> np.ndarray:
    """
    `n` draws from `dist` using `rng`. Gamma draws use numpy's
    Marsaglia-Tsang sampler (shape >= 1) with its shape-boost for shape < 1;
    rates are converted to numpy's scale convention here.
    """
    dist.validate()
    if dist.kind == "gamma":
        shape, rate = dist.params
        return rng.gamma(shape, 1.0 / rate, size=n)
    if dist.kind == "beta":
        return rng.beta(*dist.params, size=n)
    if dist.kind == "exponential":
        return rng.exponential(1.0 / dist.params[0], size=n)
    return rng.random(size=n)


def rng_draws(seed: int, dist: Distribution, n: int) -> np.ndarray:
    """Identical (seed, dist, n) give identical sequences."""
    if int(n) < 0:
        raise DomainError("n must be nonnegative")
    return draw(make_rng(seed), dist, int(n))


# --- Main Test Block ----------------------------------------------------------

if __name__ == "__main__":
    print(f"ln_gamma(0.5)          = {ln_gamma(0.5):.10f}")
    print(f"ln_beta(2, 3)          = {ln_beta(2, 3):.10f}")
    print(f"hyp2f1(1, 1, 2, 0.5)   = {hyp2f1(1, 1, 2, 0.5):.10f}")

    rosen = lambda v: (1 - v[0]) ** 2 + 100 * (v[1] - v[0] ** 2) ** 2
    res = nelder_mead(rosen, [-1.2, 1.0])
    print(f"Rosenbrock argmin      = {res.argmin} ({res.iterations} iterations, converged={res.converged})")
    print(f"Hessian of x^2 + y^2   =\n{numerical_hessian(lambda v: v @ v, [1.0, 2.0])}")
    print(f"gamma(1, 2) draws      = {rng_draws(42, Distribution.gamma(1, 2), 5)}")
