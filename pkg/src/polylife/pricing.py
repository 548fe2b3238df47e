"""Real-world prices of the three life-insurance building blocks.

For a homogeneous portfolio of survivors and a polynomial payoff the prices
are explicit through the moment formula:

  pure endowment   V = (n - N) e^{-(g+a)(T-t)}  E[(p q payoff)(Z_T)|z] / (p q)(z)
  term insurance   V = (n - N) e^{(g+a)t} int_t^T e^{-(g+a)u}
                         E[(payoff p (g q - grad q' b))(Z_u)|z] du / (p q)(z)
  annuity          V = pure endowment + term insurance with the same payoff

with the time integral evaluated by Gauss-Legendre quadrature (the integrand
is analytic in u).  Continuous payoffs are priced through tensorized
Chebyshev interpolants with a grid-measured sup-error estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .generator import rational_bounds
from .market import MarketModel, ModelError
from .polynomials import Polynomial


@dataclass(frozen=True)
class PortfolioState:
    """Homogeneous portfolio bookkeeping: n policies, deaths so far, clock."""

    n: int
    deaths: int = 0
    t: float = 0.0

    def __post_init__(self):
        if not 0 <= self.deaths <= self.n:
            raise ValueError("deaths must lie in [0, n]")
        if self.t < 0:
            raise ValueError("t must be nonnegative")

    @property
    def survivors(self) -> int:
        return self.n - self.deaths


def _denominator(model: MarketModel, z: np.ndarray) -> float:
    pz = float(model.p(z))
    qz = float(model.q(z))
    if pz <= 0 or qz <= 0:
        raise ModelError("p(z) q(z) must be strictly positive at the pricing point")
    return pz * qz


def price_pure_endowment(
    model: MarketModel,
    portfolio: PortfolioState,
    payoff: Polynomial,
    maturity: float,
    z: Sequence[float] | np.ndarray,
) -> float:
    """Value of (n - N_t) survival-contingent payments of payoff(Z_T) at T."""
    t = portfolio.t
    if t > maturity:
        raise ValueError("pricing time is past the maturity")
    z = np.asarray(z, dtype=float)
    model._require_on_E(z)
    if portfolio.survivors == 0:
        return 0.0
    pqg = model.pq * payoff
    num = model.propagated_value(pqg, z, maturity - t)
    disc = math.exp(-(model.gamma + model.alpha) * (maturity - t))
    return portfolio.survivors * disc * float(num) / _denominator(model, z)


def _gauss_legendre(a: float, b: float, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(nodes)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def price_term_insurance(
    model: MarketModel,
    portfolio: PortfolioState,
    payoff: Polynomial,
    maturity: float,
    z: Sequence[float] | np.ndarray,
    quad_nodes: int = 64,
) -> float:
    """Value of payments of payoff(Z_tau) at each death before the maturity."""
    t = portfolio.t
    if t > maturity:
        raise ValueError("pricing time is past the maturity")
    if quad_nodes < 2:
        raise ValueError("need at least 2 quadrature nodes")
    z = np.asarray(z, dtype=float)
    model._require_on_E(z)
    if portfolio.survivors == 0 or t == maturity or payoff.is_zero():
        return 0.0

    r_poly = payoff * model.pq                           # payoff p q
    s_poly = payoff * model.p * model.index_drift_poly   # payoff p (grad q' b)
    degree = max(r_poly.degree(), s_poly.degree())
    gen = model.generator_matrix(degree)
    coeffs = np.stack([r_poly.coordinate_vector(gen.basis),
                       s_poly.coordinate_vector(gen.basis)], axis=1)
    basis_z = gen.basis_values(z)

    level = model.gamma + model.alpha
    us, ws = _gauss_legendre(t, maturity, quad_nodes)
    total = 0.0
    for u, w in zip(us, ws):
        propagated = gen.propagator(u - t) @ coeffs
        r_hat, s_hat = basis_z @ propagated
        total += w * math.exp(-level * u) * (model.gamma * r_hat - s_hat)
    return (portfolio.survivors * math.exp(level * t) * total
            / _denominator(model, z))


def price_annuity(
    model: MarketModel,
    portfolio: PortfolioState,
    payoff: Polynomial,
    maturity: float,
    z: Sequence[float] | np.ndarray,
    quad_nodes: int = 64,
) -> float:
    """Continuous-stream contract: terminal payment plus death benefit, same payoff."""
    return (price_pure_endowment(model, portfolio, payoff, maturity, z)
            + price_term_insurance(model, portfolio, payoff, maturity, z, quad_nodes))


# ---------------------------------------------------------------------------
# Chebyshev approximation of continuous payoffs
# ---------------------------------------------------------------------------

def _cheb_nodes(m: int) -> np.ndarray:
    """Chebyshev-Gauss points on [-1, 1] (roots of T_m), ascending."""
    j = np.arange(m)
    return np.sort(np.cos((2 * j + 1) * np.pi / (2 * m)))


def _cheb_transform(values: np.ndarray) -> np.ndarray:
    """Tensor Chebyshev coefficients from values on the tensor node grid."""
    coeffs = values.astype(float)
    for axis in range(values.ndim):
        m = coeffs.shape[axis]
        j = np.arange(m)
        k = np.arange(m)
        # nodes ascending = cos(theta_j) with theta descending; reverse to match
        theta = (2 * j[::-1] + 1) * np.pi / (2 * m)
        mat = np.cos(np.outer(k, theta)) * (2.0 / m)
        mat[0] *= 0.5
        coeffs = np.  moveaxis(np.tensordot(mat, np.moveaxis(coeffs, axis, 0), axes=1), 0, axis)
    return coeffs


def _cheb_basis_polys(dim: int, axis: int, degree: int,
                      lo: float, hi: float) -> list[Polynomial]:
    """T_0..T_degree composed with the affine map of coordinate ``axis`` to [-1,1]."""
    u = Polynomial.affine(
        dim,
        -(hi + lo) / (hi - lo),
        [0.0 if i != axis else 2.0 / (hi - lo) for i in range(dim)])
    polys = [Polynomial.constant(dim, 1.0), u]
    for _ in range(2, degree + 1):
        polys.append(2.0 * u * polys[-1] - polys[-2])
    return polys[:degree + 1]


def approximate_payoff(
    fn: Callable[[np.ndarray], np.ndarray],
    box_lo: Sequence[float],
    box_hi: Sequence[float],
    degree: int,
    validation_factor: int = 10,
) -> tuple[Polynomial, float]:
    """Tensor Chebyshev interpolant of fn on the box and its measured sup error.

    The error estimate is max |fn - interpolant| over a validation grid
    ``validation_factor`` times denser than the interpolation grid per axis.
    Polynomials of degree <= degree per axis are reproduced exactly (up to
    roundoff).
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    box_lo = [float(v) for v in box_lo]
    box_hi = [float(v) for v in box_hi]
    d = len(box_lo)
    m = degree + 1
    axes_nodes = [0.5 * (lo + hi) + 0.5 * (hi - lo) * _cheb_nodes(m)
                  for lo, hi in zip(box_lo, box_hi)]
    mesh = np.meshgrid(*axes_nodes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=-1)
    vals = np.asarray(fn(pts), dtype=float)
    if not np.isfinite(vals).all():
        raise ValueError("payoff returned non-finite values on the node grid")
    coeffs = _cheb_transform(vals.reshape((m,) * d))

    basis = [_cheb_basis_polys(d, axis, degree, box_lo[axis], box_hi[axis])
             for axis in range(d)]
    poly = Polynomial.zero(d)
    flat = coeffs.reshape(-1)
    for pos, c in enumerate(flat):
        if c == 0.0:
            continue
        idx = np.unravel_index(pos, coeffs.shape)
        term = Polynomial.constant(d, c)
        for axis, k in enumerate(idx):
            if k > 0:
                term = term * basis[axis][k]
        poly = poly + term

    fine = [np.linspace(lo, hi, validation_factor * m)
            for lo, hi in zip(box_lo, box_hi)]
    mesh = np.meshgrid(*fine, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=-1)
    sup_error = float(np.max(np.abs(np.asarray(fn(pts)) - poly(pts))))
    return poly, sup_error


def approximation_price_bound(
    model: MarketModel,
    portfolio: PortfolioState,
    maturity: float,
    z: Sequence[float] | np.ndarray,
    sup_error: float,
) -> float:
    """Bound on the pure-endowment price error induced by a payoff sup error.

    |V_approx - V| <= survivors e^{-(g+a)(T-t)} sup_E(pq) sup_error / (p q)(z).
    """
    z = np.asarray(z, dtype=float)
    one = Polynomial.constant(model.spec.dim, 1.0)
    _, sup_pq = rational_bounds(model.pq, one, model.spec.box_lo, model.spec.box_hi,
                                grid_per_axis=201)
    disc = math.exp(-(model.gamma + model.alpha) * (maturity - portfolio.t))
    return portfolio.survivors * disc * sup_pq * sup_error / _denominator(model, z)


# ---------------------------------------------------------------------------
# Payoff specifications (config-facing)
# ---------------------------------------------------------------------------

KINDS = ("pure_endowment", "term_insurance", "annuity")


def index_put(model: MarketModel, strike: float, maturity: float
              ) -> Callable[[np.ndarray], np.ndarray]:
    """max(K - I_T, 0) as a function of the terminal state."""
    factor = math.exp(-model.gamma * maturity)

    def g(z: np.ndarray) -> np.ndarray:
        return np.maximum(strike - factor * model.q(z), 0.0)

    return g


def index_call(model: MarketModel, strike: float, maturity: float
               ) -> Callable[[np.ndarray], np.ndarray]:
    """max(I_T - K, 0) as a function of the terminal state."""
    factor = math.exp(-model.gamma * maturity)

    def g(z: np.ndarray) -> np.ndarray:
        return np.maximum(factor * model.q(z) - strike, 0.0)

    return g


@dataclass
class PayoffSpec:
    """One payoff to price: a building-block kind plus a polynomial payoff or a
    continuous payoff with an approximation degree."""

    kind: str
    polynomial: Polynomial | None = None
    function: Callable[[np.ndarray], np.ndarray] | None = None
    degree: int | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown building block '{self.kind}'")
        if (self.polynomial is None) == (self.function is None):
            raise ValueError("provide exactly one of polynomial or function")
        if self.function is not None and self.degree is None:
            raise ValueError("continuous payoffs need an approximation degree")


@dataclass
class PriceResult:
    value: float
    method: str
    approx_error_bound: float = 0.0


def price(
    model: MarketModel,
    portfolio: PortfolioState,
    spec: PayoffSpec,
    maturity: float,
    z: Sequence[float] | np.ndarray,
    quad_nodes: int = 64,
) -> PriceResult:
    """Price one payoff spec, resolving continuous payoffs through Chebyshev."""
    if spec.polynomial is not None:
        poly = spec.polynomial
        method = "closed_form"
        bound = 0.0
    else:
        poly, sup_err = approximate_payoff(
            spec.function, model.spec.box_lo, model.spec.box_hi, spec.degree)
        method = f"chebyshev_degree_{spec.degree}"
        bound = approximation_price_bound(model, portfolio, maturity, z, sup_err)
    dispatch = {
        "pure_endowment": lambda: price_pure_endowment(model, portfolio, poly, maturity, z),
        "term_insurance": lambda: price_term_insurance(model, portfolio, poly, maturity,
                                                       z, quad_nodes),
        "annuity": lambda: price_annuity(model, portfolio, poly, maturity, z, quad_nodes),
    }
    return PriceResult(value=dispatch[spec.kind](), method=method,
                       approx_error_bound=bound)
