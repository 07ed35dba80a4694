"""Truncated-normal fitting, realization-mean summaries, linear regression.

The surrogate pipeline fits a truncated normal density on [0, n_states] to a
discrete state distribution, constrained so the density's mean equals the
distribution's mean.  The constraint makes the problem one-dimensional: the
truncated-normal mean is strictly increasing in mu at fixed sigma, so mu is
recovered by bisection and only sigma is searched (coarse grid plus
golden-section refinement).  This keeps the fit deterministic and free of
general-purpose optimizers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, erfc

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Bisection for mu never standardizes the bounds beyond this, keeping the
# normal tail quantities representable in float64 (exp(-36^2/2) ~ 1e-282).
_MAX_STANDARDIZED = 36.0

SIGMA_MIN = 0.1
MU_TOL = 1e-10
SIGMA_TOL = 1e-10


class FitError(ValueError):
    """The constrained fit cannot be carried out on this input."""


def std_normal_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    out = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return float(out) if out.ndim == 0 else out


def std_normal_cdf(x):
    """Standard normal cumulative distribution, accurate to ~1 ulp via erf."""
    x = np.asarray(x, dtype=float)
    out = 0.5 * (1.0 + erf(x / _SQRT2))
    return float(out) if out.ndim == 0 else out


def _upper_tail(x):
    """P(Z > x), cancellation-free for large positive x."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / _SQRT2)


def _cdf_gap(alpha, beta):
    """Phi(beta) - Phi(alpha) for alpha < beta without tail cancellation."""
    if alpha >= 0.0:
        return float(_upper_tail(alpha) - _upper_tail(beta))
    if beta <= 0.0:
        # lower tails: Phi(x) = erfc(-x/sqrt2)/2
        return float(0.5 * erfc(-beta / _SQRT2) - 0.5 * erfc(-alpha / _SQRT2))
    return float(std_normal_cdf(beta) - std_normal_cdf(alpha))


# Beyond this standardized distance the erfc tails underflow float64, so the
# mean shift switches to a Mills-ratio expansion.
_TAIL_LIMIT = 30.0


def _mills(x: float) -> float:
    """Mills ratio P(Z > x) / pdf(x) for x >= _TAIL_LIMIT (asymptotic series)."""
    inv2 = 1.0 / (x * x)
    series = 1.0 + inv2 * (-1.0 + inv2 * (3.0 + inv2 * (-15.0 + inv2 * (105.0 - 945.0 * inv2))))
    return series / x


def _mean_shift(alpha: float, beta: float) -> float:
    """(pdf(alpha) - pdf(beta)) / (Phi(beta) - Phi(alpha)), tail-safe."""
    if alpha >= _TAIL_LIMIT:
        # both bounds deep in the upper tail; r = pdf(beta)/pdf(alpha)
        r = math.exp(-0.5 * (beta - alpha) * (beta + alpha))
        return (1.0 - r) / (_mills(alpha) - r * _mills(beta))
    if beta <= -_TAIL_LIMIT:
        r = math.exp(-0.5 * (alpha - beta) * (alpha + beta))
        return -(1.0 - r) / (_mills(-beta) - r * _mills(-alpha))
    return float(std_normal_pdf(alpha) - std_normal_pdf(beta)) / _cdf_gap(alpha, beta)


@dataclass(frozen=True)
class TruncNormParams:
    """Location/scale of a normal restricted and renormalized to [a, b]."""

    mu: float
    sigma: float
    a: float
    b: float

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        if not self.a < self.b:
            raise ValueError("need a < b")

    def standardized_bounds(self) -> tuple[float, float]:
        return (self.a - self.mu) / self.sigma, (self.b - self.mu) / self.sigma


def trunc_normal_pdf(x, params: TruncNormParams):
    """Density of the truncated normal; zero outside [a, b] by convention."""
    alpha, beta = params.standardized_bounds()
    z = _cdf_gap(alpha, beta)
    if z == 0.0:
        raise ValueError("truncation interval too deep in the tail to "
                         "normalize in float64")
    x = np.asarray(x, dtype=float)
    inside = (x >= params.a) & (x <= params.b)
    vals = std_normal_pdf((x - params.mu) / params.sigma) / (params.sigma * z)
    out = np.where(inside, vals, 0.0)
    return float(out) if out.ndim == 0 else out


def trunc_normal_mean(params: TruncNormParams) -> float:
    """Expected value: mu + sigma * (pdf(alpha) - pdf(beta)) / (cdf gap)."""
    alpha, beta = params.standardized_bounds()
    return params.mu + params.sigma * _mean_shift(alpha, beta)


def _solve_mu(sigma: float, a: float, b: float, target: float,
              tol: float = MU_TOL) -> float:
    """Invert the strictly increasing map mu -> truncated-normal mean."""
    if not a < target < b:
        raise FitError(f"target mean {target} outside ({a}, {b})")

    def mean_at(mu):
        return trunc_normal_mean(TruncNormParams(mu, sigma, a, b))

    lo_cap = a - _MAX_STANDARDIZED * sigma
    hi_cap = b + _MAX_STANDARDIZED * sigma
    lo, hi = max(target - sigma, lo_cap), min(target + sigma, hi_cap)
    step = sigma
    while mean_at(lo) > target:
        if lo <= lo_cap:
            raise FitError("target mean unreachable from below at this sigma")
        lo = max(lo - step, lo_cap)
        step *= 2.0
    step = sigma
    while mean_at(hi) < target:
        if hi >= hi_cap:
            raise FitError("target mean unreachable from above at this sigma")
        hi = min(hi + step, hi_cap)
        step *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mean_at(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class TruncNormFit:
    """Result of the mean-constrained least-squares fit."""

    params: TruncNormParams
    sse: float
    constraint_residual: float
    iterations: int

    @property
    def mu(self) -> float:
        return self.params.mu

    @property
    def sigma(self) -> float:
        return self.params.sigma


def fit_trunc_normal(pmf, n_states: int) -> TruncNormFit:
    """Fit a truncated normal on [0, n_states] to a discrete distribution.

    Minimizes the sum of squared differences between the density evaluated
    at the integer states and the given probabilities, subject to the
    density's mean matching the distribution's mean exactly.  For each trial
    sigma the constraint pins mu (bisection); sigma itself is minimized by a
    coarse scan over [SIGMA_MIN, n_states] refined with golden-section.
    """
    p = np.asarray(pmf, dtype=float)
    if p.ndim != 1 or len(p) != n_states + 1:
        raise FitError(f"pmf must have length n_states+1 = {n_states + 1}")
    if np.any(p < 0) or not np.isfinite(p).all():
        raise FitError("pmf entries must be finite and nonnegative")
    total = p.sum()
    if total <= 0:
        raise FitError("pmf has no mass")
    p = p / total
    if np.count_nonzero(p) < 2:
        raise FitError("degenerate distribution: fewer than two states with mass")

    a, b = 0.0, float(n_states)
    states = np.arange(n_states + 1, dtype=float)
    target = float(p @ states)
    if not a < target < b:
        raise FitError(f"distribution mean {target} not interior to [{a}, {b}]")
    evals = 0

    def sse_at(sigma: float):
        nonlocal evals
        evals += 1
        try:
            mu = _solve_mu(sigma, a, b, target)
        except FitError:
            return math.inf, None
        params = TruncNormParams(mu, sigma, a, b)
        resid = trunc_normal_pdf(states, params) - p
        return float(resid @ resid), params

    sigma_hi = float(n_states)
    empirical_std = float(math.sqrt(max(p @ (states - target) ** 2, 1e-12)))
    grid = np.unique(np.concatenate([
        np.linspace(SIGMA_MIN, sigma_hi, 81),
        np.clip([0.5 * empirical_std, empirical_std, 2.0 * empirical_std],
                SIGMA_MIN, sigma_hi),
    ]))
    scores = [sse_at(s)[0] for s in grid]
    k = int(np.argmin(scores))
    if not math.isfinite(scores[k]):
        raise FitError("constraint unsatisfiable over the whole sigma range")
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]

    # Golden-section refinement inside the bracketing grid interval.
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - inv_phi * (hi - lo)
    x2 = lo + inv_phi * (hi - lo)
    f1, _ = sse_at(x1)
    f2, _ = sse_at(x2)
    while hi - lo > SIGMA_TOL:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - inv_phi * (hi - lo)
            f1, _ = sse_at(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + inv_phi * (hi - lo)
            f2, _ = sse_at(x2)
    sigma = 0.5 * (lo + hi)
    sse, params = sse_at(sigma)
    if params is None:
        raise FitError("refined sigma left the feasible region")
    residual = abs(trunc_normal_mean(params) - target)
    return TruncNormFit(params=params, sse=sse,
                        constraint_residual=residual, iterations=evals)


@dataclass
class NormalSummary:
    """Sample mean and standard deviation of per-realization time averages."""

    mean: float
    std: float
    count: int


def summarize_realization_means(samples) -> NormalSummary:
    """Sample mean and n-1 standard deviation of the pooled time averages."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise ValueError("need at least two realization means")
    return NormalSummary(mean=float(x.mean()), std=float(x.std(ddof=1)),
                         count=len(x))


@dataclass
class RegressionResult:
    """Ordinary least squares line with coefficient of determination."""

    slope: float
    intercept: float
    r_squared: float


def linear_fit(x, y) -> RegressionResult:
    """OLS fit y = slope * x + intercept with R^2 = 1 - SS_res / SS_tot."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("need two equal-length 1-D samples")
    xm, ym = x.mean(), y.mean()
    sxx = float((x - xm) @ (x - xm))
    if sxx == 0.0:
        raise ValueError("all x values identical: slope undefined")
    slope = float((x - xm) @ (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float((y - ym) @ (y - ym))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RegressionResult(slope=slope, intercept=float(intercept), r_squared=r2)


def flat_rows(fits: dict, regressions: dict) -> list[dict]:
    """Combine fits and per-kind regressions into plot-ready flat records.

    ``fits`` maps (radius, kind_value) to a TruncNormFit and ``regressions``
    maps kind_value to a RegressionResult; each output row carries
    radius, kind, mu, sigma, sse, slope, intercept, r2.
    """
    rows = []
    for (radius, kind), fit in sorted(fits.items()):
        reg = regressions.get(kind)
        rows.append({
            "radius": radius,
            "kind": kind,
            "mu": fit.mu,
            "sigma": fit.sigma,
            "sse": fit.sse,
            "slope": reg.slope if reg else math.nan,
            "intercept": reg.intercept if reg else math.nan,
            "r2": reg.r_squared if reg else math.nan,
        })
    return rows


FLAT_FIELDS = ("radius", "kind", "mu", "sigma", "sse", "slope", "intercept", "r2")


def write_flat_csv(fits: dict, regressions: dict, path) -> None:
    """Write :func:`flat_rows` as CSV with 17-significant-digit floats."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FLAT_FIELDS)
        for row in flat_rows(fits, regressions):
            writer.writerow([
                format(row[f], ".17g") if isinstance(row[f], float) else row[f]
                for f in FLAT_FIELDS
            ])


def write_flat_json(fits: dict, regressions: dict, path) -> None:
    """Write :func:`flat_rows` as a JSON array of records."""
    import json

    with open(path, "w") as fh:
        json.dump(flat_rows(fits, regressions), fh, indent=1)
