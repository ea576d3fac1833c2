"""Gaussian process regression with an anisotropic Matern-3/2 kernel.

The covariance between two positions is

    k(xi, xj) = sigma2 * (1 + r) * exp(-r),   r^2 = (xi-xj)^T M (xi-xj)

with M = diag(3/l0^2, 3/l1^2), i.e. independent length scales per axis.
This kernel is once differentiable, which is exactly enough to read a
gradient off the posterior mean analytically:

    dk/dp(p, xj) = -sigma2 * exp(-r) * M (p - xj)

All linear algebra goes through a Cholesky factor of K + sigma^2 I; the
covariance matrix is never inverted explicitly and its determinant comes
from the factor's diagonal. When the factorization fails, a jitter ladder
adds 1e-10*sigma2 to the diagonal, escalating tenfold up to 1e-4*sigma2
before giving up with IllConditionedError.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .errors import (
    CoincidentPointError,
    FittingFailedError,
    IllConditionedError,
    ValidationError,
)

_COINCIDENT_TOL = 1e-12
_JITTER_START = 1e-10
_JITTER_STOP = 1e-4
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KernelParams:
    """Process variance and per-axis length scales of the Matern-3/2 kernel."""

    sigma2: float
    l0: float
    l1: float

    def __post_init__(self):
        for name in ("sigma2", "l0", "l1"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"KernelParams.{name} must be positive and finite, got {v}")

    def scale(self):
        """Per-axis factors sqrt(3)/l so that r = |scale * (xi - xj)|."""
        return np.array([math.sqrt(3.0) / self.l0, math.sqrt(3.0) / self.l1])

    def m_diag(self):
        """Diagonal of M in the quadratic form r^2 = d^T M d."""
        return np.array([3.0 / self.l0**2, 3.0 / self.l1**2])


@dataclass(frozen=True)
class NoiseModel:
    """Homoscedastic measurement noise, stored as a standard deviation."""

    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValidationError(f"NoiseModel.sigma must be >= 0 and finite, got {self.sigma}")


class TrainingSet:
    """Positions (n, 2) with one value per position."""

    def __init__(self, positions, values):
        self.positions = np.array(positions, dtype=float)
        self.values = np.array(values, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValidationError(f"positions must be (n, 2), got {self.positions.shape}")
        if self.values.shape != (self.positions.shape[0],):
            raise ValidationError(
                f"values shape {self.values.shape} does not match {self.positions.shape[0]} positions"
            )
        if len(self.values) == 0:
            raise ValidationError("training set must not be empty")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.values))):
            raise ValidationError("training data must be finite")

    def __len__(self):
        return len(self.values)


def kernel_matrix(params, a, b):
    """Covariance block K[i, j] = k(a[i], b[j]) for position arrays (n, 2), (m, 2)."""
    za = np.asarray(a, dtype=float) * params.scale()
    zb = np.asarray(b, dtype=float) * params.scale()
    diff = za[:, None, :] - zb[None, :, :]
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    return params.sigma2 * (1.0 + r) * np.exp(-r)


def kernel(params, xi, xj):
    """Covariance between two single positions."""
    return float(kernel_matrix(params, np.atleast_2d(xi), np.atleast_2d(xj))[0, 0])


def kernel_gradient(params, p_star, pj):
    """Gradient of k(p_star, pj) with respect to p_star.

    Raises CoincidentPointError when the two points coincide (within 1e-12):
    the direction d/r is undefined there, and downstream users are expected
    to exclude the query point from their conditioning set instead.
    """
    p_star = np.asarray(p_star, dtype=float)
    pj = np.asarray(pj, dtype=float)
    d = p_star - pj
    if math.sqrt(float(d @ d)) <= _COINCIDENT_TOL:
        raise CoincidentPointError(f"gradient query at {tuple(p_star)} coincides with a data point")
    z = d * params.scale()
    r = math.sqrt(float(z @ z))
    return -params.sigma2 * math.exp(-r) * (params.m_diag() * d)


def _factor(params, noise, positions):
    """Cholesky of K + sigma^2 I, climbing the jitter ladder if needed."""
    k = kernel_matrix(params, positions, positions)
    k[np.diag_indices_from(k)] += noise.sigma**2
    jitter = 0.0
    while True:
        try:
            lower = np.linalg.cholesky(k if jitter == 0.0 else k + jitter * np.eye(len(k)))
            return lower, jitter
        except np.linalg.LinAlgError:
            jitter = _JITTER_START * params.sigma2 if jitter == 0.0 else jitter * 10.0
            if jitter > _JITTER_STOP * params.sigma2 * (1 + 1e-12):
                raise IllConditionedError(
                    f"covariance factorization failed for {len(k)} points "
                    f"even with jitter {_JITTER_STOP * params.sigma2:g}"
                ) from None


def log_marginal_likelihood(params, noise, train):
    """Marginal log-likelihood of the training values under the GP prior.

    Evaluates -1/2 y^T (K + sigma^2 I)^{-1} y - 1/2 log det(K + sigma^2 I)
    - n/2 log 2pi through the Cholesky factor.
    """
    lower, _ = _factor(params, noise, train.positions)
    alpha = cho_solve((lower, True), train.values, check_finite=False)
    n = len(train)
    return float(
        -0.5 * train.values @ alpha - np.sum(np.log(np.diag(lower))) - 0.5 * n * _LOG_2PI
    )


@dataclass
class GpPosterior:
    """GP conditioned on a data set; prediction happens against this object.

    ``alpha`` solves (K + sigma^2 I) alpha = values, cached so that repeated
    mean/gradient queries cost one kernel row each. ``jitter`` records any
    diagonal boost the factorization needed.
    """

    params: KernelParams
    noise: NoiseModel
    positions: np.ndarray
    values: np.ndarray
    lower: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0

    def predict_mean(self, p):
        k_star = kernel_matrix(self.params, np.atleast_2d(p), self.positions)[0]
        return float(k_star @ self.alpha)

    def predict_variance(self, p, kstar_star="process"):
        """Posterior variance at ``p``.

        ``kstar_star`` selects the prior term: "process" uses the kernel's
        own k(p, p) = sigma2 (the default); "noise" substitutes the
        measurement noise variance instead, a deliberately available
        alternative reading whose raw (possibly negative) value is returned
        untouched for comparison purposes.
        """
        if kstar_star not in ("process", "noise"):
            raise ValidationError(f"kstar_star must be 'process' or 'noise', got {kstar_star!r}")
        k_star = kernel_matrix(self.params, np.atleast_2d(p), self.positions)[0]
        v = solve_triangular(self.lower, k_star, lower=True, check_finite=False)
        explained = float(v @ v)
        if kstar_star == "noise":
            return self.noise.sigma**2 - explained
        var = self.params.sigma2 - explained
        if var < 0:
            if var >= -1e-9:
                return 0.0
            raise IllConditionedError(f"posterior variance {var:g} is negative beyond roundoff")
        return var

    def predict_mean_gradient(self, p):
        """Analytic gradient of the posterior mean at ``p``.

        Each conditioning point contributes its kernel gradient row; the
        rows are contracted with the cached alpha vector. ``p`` must not
        coincide with any conditioning point.
        """
        p = np.asarray(p, dtype=float)
        d = p[None, :] - self.positions
        dist2 = np.sum(d * d, axis=1)
        if np.any(dist2 <= _COINCIDENT_TOL**2):
            raise CoincidentPointError(
                f"gradient query at {tuple(p)} coincides with a conditioning point"
            )
        z = d * self.params.scale()
        r = np.sqrt(np.sum(z * z, axis=1))
        rows = (-self.params.sigma2 * np.exp(-r))[:, None] * (d * self.params.m_diag())
        return rows.T @ self.alpha


def condition(params, noise, positions, values):
    """Condition the GP on data, returning a reusable GpPosterior."""
    train = TrainingSet(positions, values)
    lower, jitter = _factor(params, noise, train.positions)
    alpha = cho_solve((lower, True), train.values, check_finite=False)
    return GpPosterior(
        params=params,
        noise=noise,
        positions=train.positions,
        values=train.values,
        lower=lower,
        alpha=alpha,
        jitter=jitter,
    )


@dataclass
class FitResult:
    """Outcome of a hyperparameter search."""

    params: KernelParams
    lml: float
    init_lml: float
    n_evaluations: int
    trace: list

    def summary(self):
        span = f"{self.trace[0]:.4f} .. {max(self.trace):.4f}" if self.trace else "no evaluations"
        return (
            f"pooled LML {self.init_lml:.4f} -> {self.lml:.4f} "
            f"({self.n_evaluations} evaluations, trace {span})"
        )


class _BudgetExhausted(Exception):
    pass


def fit_hyperparameters(
    train_days,
    noise,
    init,
    *,
    budget=2000,
    n_starts=5,
    seed=0,
    log_span=8.0,
):
    """Maximize the pooled log marginal likelihood over kernel parameters.

    The objective is the sum of per-day marginal likelihoods, optimized over
    log(sigma2, l0, l1) with L-BFGS-B restarted from ``n_starts`` points
    (the initial guess plus seeded log-space perturbations). Gradients come
    from central finite differences; every probed candidate is recorded, and
    the returned parameters are the best of everything evaluated, so the
    result never scores below ``init``. ``budget`` caps the total number of
    objective evaluations across all starts.

    Raises FittingFailedError if no evaluation (including the initial guess)
    produced a finite objective; the exception carries the best candidate
    seen, if any.
    """
    days = list(train_days)
    if not days:
        raise ValidationError("fit_hyperparameters needs at least one training day")
    if budget < 1:
        raise ValidationError(f"budget must be >= 1, got {budget}")
    if n_starts < 1:
        raise ValidationError(f"n_starts must be >= 1, got {n_starts}")

    def pooled(params):
        return sum(log_marginal_likelihood(params, noise, day) for day in days)

    best = {"params": None, "lml": -np.inf}
    trace = []
    spent = [0]

    def objective(theta):
        if spent[0] >= budget:
            raise _BudgetExhausted
        spent[0] += 1
        try:
            params = KernelParams(*np.exp(theta))
            value = pooled(params)
        except (IllConditionedError, ValidationError, FloatingPointError):
            trace.append(-np.inf)
            return 1e25
        if not math.isfinite(value):
            trace.append(-np.inf)
            return 1e25
        trace.append(value)
        if value > best["lml"]:
            best["params"], best["lml"] = params, value
        return -value

    theta0 = np.log([init.sigma2, init.l0, init.l1])
    try:
        init_lml = pooled(init)
    except IllConditionedError:
        init_lml = -np.inf
    if init_lml > best["lml"]:
        best["params"], best["lml"] = init, init_lml

    rng = np.random.default_rng(seed)
    starts = [theta0] + [
        theta0 + rng.uniform(-2.0, 2.0, size=3) for _ in range(n_starts - 1)
    ]
    bounds = [(t - log_span, t + log_span) for t in theta0]
    for x0 in starts:
        if spent[0] >= budget:
            break
        try:
            minimize(
                objective,
                x0,
                method="L-BFGS-B",
                jac="3-point",
                bounds=bounds,
                options={"maxfun": max(budget - spent[0], 1)},
            )
        except _BudgetExhausted:
            continue

    if best["params"] is None:
        raise FittingFailedError(
            "every objective evaluation was ill-conditioned or non-finite", best=None
        )
    return FitResult(
        params=best["params"],
        lml=best["lml"],
        init_lml=init_lml,
        n_evaluations=spent[0],
        trace=trace,
    )
