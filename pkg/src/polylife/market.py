"""Benchmark-approach market built on a polynomial diffusion.

The inverse benchmark portfolio is exp(-alpha t) p(Z_t) for a polynomial p
strictly positive on the state space, and the survival index is
exp(-gamma t) q(Y_t) with q strictly positive on the Y box.  OIS bonds,
longevity bonds, the short rate and the mortality intensity all follow in
closed form from the moment formula; the level parameters alpha and gamma are
fixed at the upper bounds of the corresponding rational functions so that the
short rate and the intensity stay nonnegative.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .generator import (
    DiffusionSpec,
    GeneratorMatrix,
    apply_generator,
    build_generator,
    rational_bounds,
)
from .polynomials import Polynomial


class ModelError(ValueError):
    """The market model is violated at the requested point (p <= 0, z off E...)."""


@dataclass
class LevelReport:
    """Bounds behind the level calibration, kept for diagnostics.

    ``alpha_high``/``gamma_high`` are the values a freshly calibrated model
    adopts; explicit overrides (e.g. published estimates) are recorded against
    them rather than asserted equal.
    """

    alpha_low: float
    alpha_high: float
    gamma_low: float
    gamma_high: float
    eps_p: float
    eps_q: float
    y_box: tuple[tuple[float, float], ...]
    notes: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class MarketModel:
    """Immutable market: diffusion spec, benchmark polynomial p, index polynomial q.

    ``p`` and ``q`` live in the full d state variables; q may only involve the
    Y coordinates.  ``alpha`` and ``gamma`` are the level parameters of the
    benchmark and of the survival index.
    """

    spec: DiffusionSpec
    p: Polynomial
    q: Polynomial
    alpha: float
    gamma: float

    def __post_init__(self):
        d = self.spec.dim
        if self.p.dim != d or self.q.dim != d:
            raise ValueError("p and q must be polynomials in the full state variables")
        for i in range(self.spec.dim_x):
            if self.q.depends_on(i):
                raise ValueError("q may only depend on the Y coordinates")
        eps_p, _ = rational_bounds(self.p, Polynomial.constant(d, 1.0),
                                   self.spec.box_lo, self.spec.box_hi, grid_per_axis=61)
        eps_q, _ = rational_bounds(self.q, Polynomial.constant(d, 1.0),
                                   self.spec.box_lo, self.spec.box_hi, grid_per_axis=61)
        if eps_p <= 0:
            raise ValueError(f"p must be strictly positive on the box (min {eps_p:.3g})")
        if eps_q <= 0:
            raise ValueError(f"q must be strictly positive on the Y box (min {eps_q:.3g})")
        object.__setattr__(self, "_eps_p", eps_p)
        object.__setattr__(self, "_eps_q", eps_q)
        object.__setattr__(self, "_pq", self.p * self.q)
        object.__setattr__(self, "_Gp", apply_generator(self.spec, self.p))
        dqb = Polynomial.zero(d)
        for i, dq_i in enumerate(self.q.gradient()):
            if not dq_i.is_zero():
                dqb = dqb + dq_i * self.spec.drift[i]
        object.__setattr__(self, "_dqb", dqb)
        object.__setattr__(self, "_gens", {})

    # -- cached plumbing ------------------------------------------------------

    @property
    def pq(self) -> Polynomial:
        return self._pq

    @property
    def drift_of_log_p(self) -> Polynomial:
        """The polynomial G p (numerator of the short-rate correction)."""
        return self._Gp

    @property
    def index_drift_poly(self) -> Polynomial:
        """grad(q)' b, the numerator of the mortality-intensity correction."""
        return self._dqb

    @property
    def eps_p(self) -> float:
        return self._eps_p

    @property
    def eps_q(self) -> float:
        return self._eps_q

    def generator_matrix(self, degree: int) -> GeneratorMatrix:
        gen = self._gens.get(degree)
        if gen is None:
            gen = build_generator(self.spec, degree)
            self._gens[degree] = gen
        return gen

    def propagated_value(self, poly: Polynomial, z: np.ndarray, horizon: float
                         ) -> float | np.ndarray:
        """H(z)' exp(horizon G) poly_vec for a polynomial on the state space."""
        gen = self.generator_matrix(poly.degree())
        w = gen.propagate(poly.coordinate_vector(gen.basis), horizon)
        vals = gen.basis_values(z) @ w
        return float(vals) if np.asarray(z).ndim == 1 else vals

    # -- point handling -------------------------------------------------------

    def _require_on_E(self, z: Sequence[float] | np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.spec.dim:
            raise ModelError(f"state point must have dimension {self.spec.dim}")
        if not bool(np.all(self.spec.in_box(z))):
            raise ModelError("state point outside the state space E")
        return z

    def _p_at(self, z: np.ndarray) -> np.ndarray:
        vals = self.p(z)
        if np.any(np.asarray(vals) <= 0):
            raise ModelError("benchmark polynomial p is nonpositive at the point")
        return vals

    def _q_at(self, z: np.ndarray) -> np.ndarray:
        vals = self.q(z)
        if np.any(np.asarray(vals) <= 0):
            raise ModelError("index polynomial q is nonpositive at the point")
        return vals

    # -- market quantities ----------------------------------------------------

    def benchmark_inverse(self, t: float, z: Sequence[float] | np.ndarray
                          ) -> float | np.ndarray:
        """1/S*_t = exp(-alpha t) p(z), strictly positive on E."""
        z = self._require_on_E(z)
        return np.exp(-self.alpha * t) * self._p_at(z)

    def ois_bond(self, t: float, T: float, z: Sequence[float] | np.ndarray
                 ) -> float | np.ndarray:
        """Zero-coupon OIS bond P(t, T); equals 1 exactly at t = T."""
        if not 0 <= t <= T:
            raise ValueError("need 0 <= t <= T")
        z = self._require_on_E(z)
        phat = self.propagated_value(self.p, z, T - t)
        return np.exp(-self.alpha * (T - t)) * phat / self._p_at(z)

    def short_rate(self, z: Sequence[float] | np.ndarray) -> float | np.ndarray:
        """r = alpha - (G p)(z) / p(z); nonnegative when alpha is the upper bound."""
        z = self._require_on_E(z)
        return self.alpha - self._Gp(z) / self._p_at(z)

    def longevity_index(self, t: float, z: Sequence[float] | np.ndarray
                        ) -> float | np.ndarray:
        """Survival index I_t = exp(-gamma t) q(y).

        Accepts a full state point, or just the Y part (length dim_y), which
        is embedded since q does not involve X.
        """
        z = np.asarray(z, dtype=float)
        if z.shape[-1] == self.spec.dim_y and self.spec.dim_y != self.spec.dim:
            full = np.zeros(z.shape[:-1] + (self.spec.dim,))
            full[..., self.spec.dim_x:] = z
            full[..., :self.spec.dim_x] = np.asarray(self.spec.z0[:self.spec.dim_x])
            z = full
        z = self._require_on_E(z)
        return np.exp(-self.gamma * t) * self._q_at(z)

    def mortality_intensity(self, z: Sequence[float] | np.ndarray) -> float | np.ndarray:
        """mu = gamma - grad(q)' b / q; nonnegative when gamma is the upper bound."""
        z = self._require_on_E(z)
        return self.gamma - self._dqb(z) / self._q_at(z)

    def longevity_bond(self, t: float, T: float, z: Sequence[float] | np.ndarray
                       ) -> float | np.ndarray:
        """Longevity bond P^l(t, T), paying the survival index I_T at maturity."""
        if not 0 <= t <= T:
            raise ValueError("need 0 <= t <= T")
        z = self._require_on_E(z)
        pqhat = self.propagated_value(self._pq, z, T - t)
        return np.exp(-self.gamma * T - self.alpha * (T - t)) * pqhat / self._p_at(z)


def calibrate_levels(
    spec: DiffusionSpec,
    p: Polynomial,
    q: Polynomial,
    grid_per_axis: int | None = None,
    alpha_override: float | None = None,
    gamma_override: float | None = None,
) -> tuple[MarketModel, LevelReport]:
    """Build a market with alpha, gamma set to the rational upper bounds.

    ``alpha_override``/``gamma_override`` install an explicit level instead;
    the computed bounds are still reported so discrepancies stay visible.
    """
    probe = MarketModel(spec, p, q, alpha=0.0, gamma=0.0)
    a_lo, a_hi = rational_bounds(probe.drift_of_log_p, p,
                                 spec.box_lo, spec.box_hi, grid_per_axis)
    g_lo, g_hi = rational_bounds(probe.index_drift_poly, q,
                                 spec.box_lo, spec.box_hi, grid_per_axis)
    y_box = tuple((spec.box_lo[k], spec.box_hi[k])
                  for k in range(spec.dim_x, spec.dim))
    report = LevelReport(alpha_low=a_lo, alpha_high=a_hi,
                         gamma_low=g_lo, gamma_high=g_hi,
                         eps_p=probe.eps_p, eps_q=probe.eps_q, y_box=y_box)
    alpha = a_hi if alpha_override is None else float(alpha_override)
    gamma = g_hi if gamma_override is None else float(gamma_override)
    if alpha_override is not None:
        report.notes.append(
            f"alpha override {alpha:.6g} installed; computed upper bound {a_hi:.6g}")
    if gamma_override is not None:
        report.notes.append(
            f"gamma override {gamma:.6g} installed; computed upper bound {g_hi:.6g} "
            f"(intensity stays nonnegative iff override >= bound)")
    model = dataclasses.replace(probe, alpha=alpha, gamma=gamma)
    return model, report
