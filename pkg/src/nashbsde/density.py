"""Transition densities, two-sided Gaussian envelopes, and ratio integrability.

Analytic densities exist for the two bundled diffusions only: the
constant-coefficient case (Gaussian) and the state-proportional case.
For the latter, the reference form omits the 1/y Jacobian a normalized
density carries; both variants are provided and the mass report states
which one integrates to one.  Envelope constants are always inputs to
check, never derived.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "AronsonParams",
    "gaussian_density",
    "lognormal_density",
    "lognormal_density_corrected",
    "AronsonReport",
    "check_aronson",
    "DominationReport",
    "domination_check",
    "density_mass_1d",
    "lognormal_mass_report",
]


@dataclass(frozen=True)
class AronsonParams:
    """Constants of the two-sided Gaussian envelope.

    Lower bound: rho1 tau^(-m/2) exp(-lambda_big |x - x0|^2 / tau);
    upper bound: rho2 tau^(-m/2) exp(-lambda_small |x - x0|^2 / tau).
    """

    rho1: float
    rho2: float
    lambda_small: float
    lambda_big: float
    dim_m: int = 1

    def __post_init__(self):
        if not (0 < self.rho1 <= self.rho2):
            raise ValueError("need 0 < rho1 <= rho2")
        if not (0 < self.lambda_small <= self.lambda_big):
            raise ValueError("need 0 < lambda_small <= lambda_big")
        if self.dim_m < 1:
            raise ValueError("dim_m must be a positive integer")


def gaussian_density(t0: float, x0, s: float, x, sigma_const) -> float:
    """Transition density of dX = sigma dB with constant sigma.

    The law at time s started from (t0, x0) is Gaussian with covariance
    sigma sigma^T (s - t0); sigma may be a scalar or an m x m matrix.
    """
    if not s > t0:
        raise ValueError("need s > t0")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    m = x0.size
    tau = s - t0
    diff = x - x0
    if np.isscalar(sigma_const) or np.asarray(sigma_const).ndim == 0:
        var = float(sigma_const) ** 2
        quad = float(diff @ diff) / var
        logdet = m * np.log(var)
    else:
        sig = np.asarray(sigma_const, dtype=float)
        cov = sig @ sig.T
        sol = np.linalg.solve(cov, diff)
        quad = float(diff @ sol)
        sign, logdet = np.linalg.slogdet(cov)
        if sign <= 0:
            raise ValueError("sigma sigma^T must be positive definite")
    prefactor = (2.0 * np.pi) ** (-m / 2.0) * tau ** (-m / 2.0) * np.exp(-0.5 * logdet)
    return float(prefactor * np.exp(-(0.5 * quad) / tau))


def lognormal_density(t: float, x: float, s: float, y: float) -> float:
    """Reference-form transition density of dX = X dB started at x > 0.

    A Gaussian profile in ln(y/x) WITHOUT the 1/y change-of-variables
    factor, and 0 for y <= 0.  Kept deliberately in this form; it
    integrates to x, not to 1.  See ``lognormal_density_corrected``.
    """
    if not s > t:
        raise ValueError("need s > t")
    if not x > 0:
        raise ValueError("start state must be positive")
    if y <= 0:
        return 0.0
    tau = s - t
    arg = np.log(y / x) + 0.5 * tau
    return float(np.exp(-(arg * arg) / (2.0 * tau)) / np.sqrt(2.0 * np.pi * tau))


def lognormal_density_corrected(t: float, x: float, s: float, y: float) -> float:
    """Jacobian-corrected variant carrying the 1/y factor; integrates to 1."""
    if y <= 0:
        return 0.0
    return lognormal_density(t, x, s, y) / y


def density_mass_1d(density: Callable[[float], float], lo: float, hi: float,
                    n: int = 20001) -> float:
    """Trapezoid mass of a one-dimensional density over [lo, hi]."""
    xs = np.linspace(lo, hi, n)
    vals = np.array([density(float(x)) for x in xs])
    return float(np.trapezoid(vals, xs))


def lognormal_mass_report(t: float = 0.0, x: float = 2.0, s: float = 1.0,
                          hi: float = 150.0, n: int = 60001) -> dict:
    """Masses of both density variants; states which integrates to one."""
    reference = density_mass_1d(lambda y: lognormal_density(t, x, s, y), 1e-12, hi, n)
    corrected = density_mass_1d(lambda y: lognormal_density_corrected(t, x, s, y),
                                1e-12, hi, n)
    unit = "corrected" if abs(corrected - 1.0) < abs(reference - 1.0) else "reference"
    return {
        "start_state": x,
        "reference_form_mass": reference,
        "corrected_form_mass": corrected,
        "integrates_to_one": unit,
    }


@dataclass
class AronsonReport:
    """Largest envelope violations over a (time, state) grid."""

    max_lower_violation: float
    max_upper_violation: float
    tol: float
    grid_size: int
    passed: bool
    rows: list  # (s, x, density, lower, upper, lower_violation, upper_violation)


def check_aronson(params: AronsonParams, density: Callable, t0: float, x0,
                  s_values: Sequence[float], x_values,
                  tol: float = 1e-12, keep_rows: bool = True) -> AronsonReport:
    """Check the two-sided Gaussian envelope pointwise on a grid.

    ``density(s, x)`` is the transition density from (t0, x0).  Passes
    when neither bound is violated by more than ``tol`` anywhere.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    m = params.dim_m
    max_lo, max_hi = 0.0, 0.0
    rows = []
    count = 0
    for s in s_values:
        s = float(s)
        if not s > t0:
            raise ValueError("grid times must exceed t0")
        tau = s - t0
        for x in np.atleast_2d(np.asarray(x_values, dtype=float)):
            x = np.atleast_1d(x)
            r2 = float(np.sum((x - x0) ** 2))
            lower = params.rho1 * tau ** (-m / 2.0) * np.exp(-params.lambda_big * r2 / tau)
            upper = params.rho2 * tau ** (-m / 2.0) * np.exp(-params.lambda_small * r2 / tau)
            rho = float(density(s, x if x.size > 1 else float(x[0])))
            lo_viol = max(0.0, lower - rho)
            hi_viol = max(0.0, rho - upper)
            max_lo = max(max_lo, lo_viol)
            max_hi = max(max_hi, hi_viol)
            count += 1
            if keep_rows:
                rows.append((s, x.copy(), rho, float(lower), float(upper),
                             lo_viol, hi_viol))
    return AronsonReport(max_lower_violation=max_lo, max_upper_violation=max_hi,
                         tol=tol, grid_size=count,
                         passed=(max_lo <= tol and max_hi <= tol), rows=rows)


@dataclass
class DominationReport:
    """Refined quadrature of the q-th power of a density ratio."""

    value: float
    history: list
    rel_change: float
    q: float
    passed: bool


def domination_check(num_density: Callable, den_density: Callable,
                     t1: float, delta: float, horizon_T: float,
                     k: float, q: float,
                     x_domain: Optional[tuple] = None,
                     n_time: int = 9, n_space: int = 33,
                     max_refinements: int = 6,
                     rel_tol: float = 0.01) -> DominationReport:
    """Integrate (num/den)^q den over the slab [t1+delta, T] x state window.

    One-dimensional state only.  ``num_density(s, x)`` and
    ``den_density(s, x)`` are transition densities of the compared
    families.  Trapezoid in both variables, refined by doubling until the
    value moves less than ``rel_tol`` relatively; passes when finite and
    refinement-stable.  Raises when the denominator family vanishes on
    the integration domain.
    """
    if not (0 < delta <= horizon_T - t1):
        raise ValueError("delta must lie in (0, T - t1]")
    if not q > 1:
        raise ValueError("q must exceed 1")
    lo, hi = x_domain if x_domain is not None else (-k, k)
    if not hi > lo:
        raise ValueError("empty state window")

    def integral(nt, nx):
        ss = np.linspace(t1 + delta, horizon_T, nt)
        xs = np.linspace(lo, hi, nx)
        vals = np.empty((nt, nx))
        for i, s in enumerate(ss):
            for j, x in enumerate(xs):
                den = float(den_density(float(s), float(x)))
                if not den > 1e-300:
                    raise ValueError(
                        f"denominator density vanishes at (s={s:g}, x={x:g}); ratio undefined")
                num = float(num_density(float(s), float(x)))
                vals[i, j] = (num / den) ** q * den
        inner = np.trapezoid(vals, xs, axis=1)
        return float(np.trapezoid(inner, ss))

    history = [integral(n_time, n_space)]
    rel = np.inf
    for _ in range(max_refinements):
        n_time = 2 * n_time - 1
        n_space = 2 * n_space - 1
        history.append(integral(n_time, n_space))
        rel = abs(history[-1] - history[-2]) / max(abs(history[-1]), 1e-300)
        if rel <= rel_tol:
            break
    value = history[-1]
    passed = np.isfinite(value) and rel <= rel_tol
    return DominationReport(value=value, history=history, rel_change=float(rel),
                            q=q, passed=passed)
