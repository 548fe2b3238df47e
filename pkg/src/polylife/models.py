"""Ready-made model builders: the calibrated two-factor market and test models.

The workhorse specification has a Jacobi factor X on [-1, 1] driving the
benchmark portfolio and a drift-only factor Y driving the survival index:

    dX = psi (b - X) dt + sigma sqrt(1 - X^2) dW
    dY = (d (b - X) + kappa (eta - Y)) dt
    1/S*_t = exp(-alpha t) (p0 + p1 X_t)
    I_t    = exp(-gamma t) (q0 + q1 Y_t)

``CALIBRATED`` holds the parameter set estimated from the MSCI world index and
the LLMA German-cohort longevity index (monthly 1970-2013); the bundled
calibrated model uses it with the published gamma installed as an override.
"""

from __future__ import annotations

import math

import numpy as np

from .generator import DiffusionSpec
from .market import LevelReport, MarketModel, calibrate_levels
from .polynomials import Polynomial

# Parameters estimated on the MSCI / LLMA data set (time unit: full sample).
CALIBRATED = {
    "psi": 14.98581,     # X mean-reversion speed
    "b": -0.79506,       # X long-run level
    "sigma": 1.25299,    # X volatility scale
    "d": 5.18417,        # X -> Y coupling
    "kappa": -5.87517,   # Y relaxation rate (negative: unstable drift)
    "eta": -5.05117,     # Y level parameter
    "p0": 0.01,          # benchmark-inverse intercept
    "p1": 0.006,         # benchmark-inverse loading on X
    "q0": 0.998,         # survival-index intercept
    "q1": -0.00044,      # survival-index loading on Y
    "gamma": 0.0045607,  # published index level parameter
}


def jacobi_spec(psi: float, b: float, sigma: float, x0: float = 0.0) -> DiffusionSpec:
    """One-dimensional Jacobi diffusion on [-1, 1] (no Y block)."""
    x = Polynomial.variable(1, 0)
    drift = Polynomial.affine(1, psi * b, [-psi])
    a11 = Polynomial(1, {(0,): sigma**2, (2,): -(sigma**2)})
    bound = x * x - 1.0
    return DiffusionSpec(
        dim_x=1, dim_y=0,
        drift=(drift,),
        diffusion=((a11,),),
        box_lo=(-1.0,), box_hi=(1.0,),
        z0=(x0,),
        boundary=(bound,),
    )


def y_envelope(u_lo: float, u_hi: float, rate: float, y0: float, horizon: float,
               pad: float = 0.02) -> tuple[float, float]:
    """Reachable-set envelope of dY = u(t) + rate * Y with u(t) in [u_lo, u_hi].

    Solves the two extremal linear ODEs over [0, horizon]; their solutions are
    monotone in time, so the envelope extremes sit at the endpoints.  Sides
    that move away from y0 get a small outward pad so that discrete
    integration overshoot never leaves the working box.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")

    def terminal(u: float) -> float:
        if rate == 0.0:
            return y0 + u * horizon
        return (y0 + u / rate) * math.exp(rate * horizon) - u / rate

    lo = min(y0, terminal(u_lo))
    hi = max(y0, terminal(u_hi))
    width = max(hi - lo, 1e-12 * max(1.0, abs(y0)))
    if lo < y0:
        lo -= pad * width
    if hi > y0:
        hi += pad * width
    return lo, hi


def _scalar_y_box(spec_drift_y: Polynomial, dim_x: int, x_lo, x_hi,
                  y0: float, horizon: float) -> tuple[float, float]:
    """Working box of a scalar Y coordinate from its degree-1 drift."""
    const = spec_drift_y.coefficient((0,) * spec_drift_y.dim)
    rate = 0.0
    u_lo = u_hi = const
    for mono, coeff in spec_drift_y.terms.items():
        if sum(mono) == 0:
            continue
        j = mono.index(1)
        if j < dim_x:
            contrib = (coeff * x_lo[j], coeff * x_hi[j])
            u_lo += min(contrib)
            u_hi += max(contrib)
        else:
            rate = coeff
    return y_envelope(u_lo, u_hi, rate, y0, horizon)


def two_factor_spec(psi: float, b: float, sigma: float, d: float, kappa: float,
                    eta: float, horizon: float = 1.0,
                    z0: tuple[float, float] = (0.0, 0.0)) -> DiffusionSpec:
    """The two-factor state dynamics (Jacobi X, drift-only Y) on its working box."""
    dim = 2
    drift_x = Polynomial.affine(dim, psi * b, [-psi, 0.0])
    drift_y = Polynomial.affine(dim, d * b + kappa * eta, [-d, -kappa])
    a11 = Polynomial(dim, {(0, 0): sigma**2, (2, 0): -(sigma**2)})
    zero = Polynomial.zero(dim)
    x1 = Polynomial.variable(dim, 0)
    y_lo, y_hi = _scalar_y_box(drift_y, 1, [-1.0], [1.0], z0[1], horizon)
    return DiffusionSpec(
        dim_x=1, dim_y=1,
        drift=(drift_x, drift_y),
        diffusion=((a11, zero), (zero, zero)),
        box_lo=(-1.0, y_lo), box_hi=(1.0, y_hi),
        z0=z0,
        boundary=(x1 * x1 - 1.0,),
    )


def two_factor_market(psi: float, b: float, sigma: float, d: float, kappa: float,
                      eta: float, p0: float, p1: float, q0: float, q1: float,
                      horizon: float = 1.0,
                      alpha: float | None = None, gamma: float | None = None,
                      ) -> tuple[MarketModel, LevelReport]:
    """Assemble the two-factor market; levels default to the computed bounds."""
    spec = two_factor_spec(psi, b, sigma, d, kappa, eta, horizon)
    p = Polynomial.affine(2, p0, [p1, 0.0])
    q = Polynomial.affine(2, q0, [0.0, q1])
    return calibrate_levels(spec, p, q, alpha_override=alpha, gamma_override=gamma)


def calibrated_market(horizon: float = 1.0) -> tuple[MarketModel, LevelReport]:
    """The bundled calibrated market on its horizon-dependent working box.

    alpha is the computed upper bound of (G p)/p (matching the published value
    to every reported digit); gamma installs the published estimate, with the
    computed bound kept in the report for comparison.
    """
    c = CALIBRATED
    return two_factor_market(
        c["psi"], c["b"], c["sigma"], c["d"], c["kappa"], c["eta"],
        c["p0"], c["p1"], c["q0"], c["q1"],
        horizon=horizon, gamma=c["gamma"])


# Parameters of the two-noise hedging test model: two independent Jacobi
# factors, the benchmark loading on the first, the survival index (through Y)
# on the second, so that the OIS bond and the longevity bond span the risk.
HEDGE_DEMO = {
    "psi1": 3.0, "b1": 0.1, "sigma1": 0.5,
    "psi2": 3.0, "b2": -0.2, "sigma2": 0.5,
    "d": 1.0, "kappa": 2.0, "eta": 0.0,
    "p0": 1.0, "p1": 0.45,
    "q0": 1.0, "q1": -0.05,
}


def hedge_demo_spec(horizon: float = 1.0) -> DiffusionSpec:
    c = HEDGE_DEMO
    dim = 3
    drift_1 = Polynomial.affine(dim, c["psi1"] * c["b1"], [-c["psi1"], 0.0, 0.0])
    drift_2 = Polynomial.affine(dim, c["psi2"] * c["b2"], [0.0, -c["psi2"], 0.0])
    drift_y = Polynomial.affine(
        dim, c["d"] * c["b2"] + c["kappa"] * c["eta"], [0.0, -c["d"], -c["kappa"]])
    a11 = Polynomial(dim, {(0, 0, 0): c["sigma1"] ** 2, (2, 0, 0): -c["sigma1"] ** 2})
    a22 = Polynomial(dim, {(0, 0, 0): c["sigma2"] ** 2, (0, 2, 0): -c["sigma2"] ** 2})
    zero = Polynomial.zero(dim)
    y_lo, y_hi = _scalar_y_box(drift_y, 2, [-1.0, -1.0], [1.0, 1.0], 0.0, horizon)
    x1 = Polynomial.variable(dim, 0)
    x2 = Polynomial.variable(dim, 1)
    return DiffusionSpec(
        dim_x=2, dim_y=1,
        drift=(drift_1, drift_2, drift_y),
        diffusion=((a11, zero, zero), (zero, a22, zero), (zero, zero, zero)),
        box_lo=(-1.0, -1.0, y_lo), box_hi=(1.0, 1.0, y_hi),
        z0=(0.0, 0.0, 0.0),
        boundary=(x1 * x1 - 1.0, x2 * x2 - 1.0),
    )


def hedge_demo_market(horizon: float = 1.0) -> tuple[MarketModel, LevelReport]:
    """Two-noise test market with an invertible hedging matrix in the interior."""
    c = HEDGE_DEMO
    spec = hedge_demo_spec(horizon)
    p = Polynomial.affine(3, c["p0"], [c["p1"], 0.0, 0.0])
    q = Polynomial.affine(3, c["q0"], [0.0, 0.0, c["q1"]])
    return calibrate_levels(spec, p, q)
