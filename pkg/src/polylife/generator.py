"""Generator matrices for polynomial diffusions on compact state spaces.

The state variable splits into a diffusive block X (first ``dim_x`` coordinates)
and a drift-only block Y.  The infinitesimal generator

    G f = 1/2 Tr(a(z) Hess f(z)) + b(z)' grad f(z)

maps polynomials of degree <= n to polynomials of degree <= n whenever every
``a_ij`` has degree <= 2 and every ``b_i`` degree <= 1, so on a fixed monomial
basis it is a finite matrix ``G_n``.  Conditional expectations of polynomials
are then matrix exponentials: E[p(Z_T) | Z_t = z] = H_n(z)' exp((T-t) G_n) p_vec.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import product as iter_product
from typing import Sequence

import numpy as np
import scipy.linalg

from .polynomials import MultiIndex, Polynomial, enumerate_basis


class NumericalError(RuntimeError):
    """A numerical operation produced unusable output (non-finite, singular...)."""


# ---------------------------------------------------------------------------
# Diffusion specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionSpec:
    """Coefficients and state space of a polynomial diffusion dZ = b dt + sigma dW.

    Parameters
    ----------
    dim_x, dim_y : sizes of the diffusive X block and the drift-only Y block.
    drift : one degree-<=1 polynomial per coordinate, in d = dim_x + dim_y
        variables.
    diffusion : symmetric d x d matrix of degree-<=2 polynomials a = sigma sigma';
        rows and columns for Y coordinates must be identically zero.
    box_lo, box_hi : bounding box of the state space, one pair per coordinate.
        For Y coordinates this is the working envelope of the reachable set,
        not an invariant region.
    boundary : polynomials P with E = {z : P(z) <= 0 for all P}; may be empty
        when only the box matters.
    z0 : initial state, inside the box.

    The driving noise enters only through ``a``: any pointwise factor
    sigma(z) with sigma sigma' = a(z) induces the same law, and all consumers
    (simulation, hedging) use the symmetric PSD square root of the X block.
    """

    dim_x: int
    dim_y: int
    drift: tuple[Polynomial, ...]
    diffusion: tuple[tuple[Polynomial, ...], ...]
    box_lo: tuple[float, ...]
    box_hi: tuple[float, ...]
    z0: tuple[float, ...]
    boundary: tuple[Polynomial, ...] = ()

    def __post_init__(self):
        d = self.dim
        object.__setattr__(self, "drift", tuple(self.drift))
        object.__setattr__(self, "diffusion", tuple(tuple(row) for row in self.diffusion))
        object.__setattr__(self, "boundary", tuple(self.boundary))
        object.__setattr__(self, "box_lo", tuple(float(v) for v in self.box_lo))
        object.__setattr__(self, "box_hi", tuple(float(v) for v in self.box_hi))
        object.__setattr__(self, "z0", tuple(float(v) for v in self.z0))
        if self.dim_x < 1 or self.dim_y < 0:
            raise ValueError("need dim_x >= 1 and dim_y >= 0")
        if len(self.drift) != d:
            raise ValueError(f"need {d} drift polynomials, got {len(self.drift)}")
        if len(self.diffusion) != d or any(len(row) != d for row in self.diffusion):
            raise ValueError("diffusion matrix must be d x d")
        if len(self.box_lo) != d or len(self.box_hi) != d or len(self.z0) != d:
            raise ValueError("box and z0 must have one entry per coordinate")
        for i, b in enumerate(self.drift):
            if b.dim != d:
                raise ValueError(f"drift[{i}] has dim {b.dim}, expected {d}")
            if b.degree() > 1:
                raise ValueError(f"drift[{i}] has degree {b.degree()} > 1")
        for i in range(d):
            for j in range(d):
                a_ij = self.diffusion[i][j]
                if a_ij.dim != d:
                    raise ValueError(f"diffusion[{i}][{j}] has wrong dimension")
                if a_ij.degree() > 2:
                    raise ValueError(f"diffusion[{i}][{j}] has degree > 2")
                if a_ij.terms != self.diffusion[j][i].terms:
                    raise ValueError("diffusion matrix must be symmetric")
                if (i >= self.dim_x or j >= self.dim_x) and not a_ij.is_zero():
                    raise ValueError("diffusion rows/columns of Y coordinates must vanish")
        for k in range(d):
            if self.box_lo[k] > self.box_hi[k]:
                raise ValueError(f"empty box on coordinate {k + 1}")
            if not self.box_lo[k] - 1e-12 <= self.z0[k] <= self.box_hi[k] + 1e-12:
                raise ValueError(f"z0 outside the box on coordinate {k + 1}")

    @property
    def dim(self) -> int:
        return self.dim_x + self.dim_y

    # -- pointwise evaluation, vectorized over (..., dim) arrays -------------

    def drift_at(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.empty(z.shape[:-1] + (self.dim,))
        for i, b in enumerate(self.drift):
            out[..., i] = b(z)
        return out

    def diffusion_x_at(self, z: np.ndarray) -> np.ndarray:
        """The X block of a(z), shape (..., dim_x, dim_x)."""
        z = np.asarray(z, dtype=float)
        m = self.dim_x
        out = np.empty(z.shape[:-1] + (m, m))
        for i in range(m):
            for j in range(m):
                out[..., i, j] = self.diffusion[i][j](z)
        return out

    def sigma_at(self, z: np.ndarray) -> np.ndarray:
        """Symmetric PSD square root of the X block of a(z), shape (..., m, m).

        Negative eigenvalues from roundoff or boundary overshoot are clamped
        to zero, matching the sqrt(max(a, 0)) convention of the simulator.
        """
        m = self.dim_x
        if m == 1:
            a = self.diffusion[0][0](z)
            return np.sqrt(np.maximum(a, 0.0))[..., None, None]
        if self._diagonal_diffusion():
            z = np.asarray(z, dtype=float)
            out = np.zeros(z.shape[:-1] + (m, m))
            for i in range(m):
                out[..., i, i] = np.sqrt(np.maximum(self.diffusion[i][i](z), 0.0))
            return out
        a = self.diffusion_x_at(z)
        vals, vecs = np.linalg.eigh(a)
        vals = np.sqrt(np.maximum(vals, 0.0))
        return np.einsum("...ik,...k,...jk->...ij", vecs, vals, vecs)

    def _diagonal_diffusion(self) -> bool:
        cached = getattr(self, "_diag_flag", None)
        if cached is None:
            cached = all(self.diffusion[i][j].is_zero()
                         for i in range(self.dim_x) for j in range(self.dim_x) if i != j)
            object.__setattr__(self, "_diag_flag", cached)
        return cached

    def in_box(self, z: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        lo = np.asarray(self.box_lo)
        hi = np.asarray(self.box_hi)
        slack = rtol * np.maximum(1.0, np.abs(hi - lo))
        return np.all((z >= lo - slack) & (z <= hi + slack), axis=-1)

    def y_drift_coefficients(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Write the Y drift as A x + B y + c; returns (A, B, c).

        Valid because Y drift polynomials have degree <= 1.
        """
        m1, m2, d = self.dim_x, self.dim_y, self.dim
        A = np.zeros((m2, m1))
        B = np.zeros((m2, m2))
        c = np.zeros(m2)
        for k in range(m2):
            poly = self.drift[m1 + k]
            for mono, coeff in poly.terms.items():
                total = sum(mono)
                if total == 0:
                    c[k] = coeff
                else:
                    j = mono.index(1)
                    if j < m1:
                        A[k, j] = coeff
                    else:
                        B[k, j - m1] = coeff
        return A, B, c


def apply_generator(spec: DiffusionSpec, poly: Polynomial) -> Polynomial:
    """The polynomial G(poly) = 1/2 Tr(a Hess poly) + b' grad poly."""
    d = spec.dim
    if poly.dim != d:
        raise ValueError(f"polynomial dim {poly.dim} does not match state dim {d}")
    grad = poly.gradient()
    out = Polynomial.zero(d)
    for i in range(d):
        if not grad[i].is_zero():
            out = out + spec.drift[i] * grad[i]
    for i in range(spec.dim_x):
        gi = grad[i]
        if gi.is_zero():
            continue
        for j in range(spec.dim_x):
            a_ij = spec.diffusion[i][j]
            if a_ij.is_zero():
                continue
            hess_ij = gi.partial(j)
            if not hess_ij.is_zero():
                out = out + 0.5 * a_ij * hess_ij
    return out


# ---------------------------------------------------------------------------
# Generator matrix and the moment formula
# ---------------------------------------------------------------------------

class GeneratorMatrix:
    """Matrix G_n of the generator on the degree-<=n monomial basis.

    Column j holds the coordinates of G applied to the j-th basis monomial,
    so that G p(z) = H_n(z)' G_n p_vec for p(z) = H_n(z)' p_vec.
    """

    def __init__(self, n: int, basis: Sequence[MultiIndex], matrix: np.ndarray):
        self.n = n
        self.basis = tuple(basis)
        self.matrix = np.asarray(matrix, dtype=float)
        if self.matrix.shape != (len(self.basis),) * 2:
            raise ValueError("matrix shape does not match basis size")
        self._dim = len(self.basis[0]) if self.basis else 0
        self._max_expo = [max(m[i] for m in self.basis) for i in range(self._dim)]

    @property
    def size(self) -> int:
        return len(self.basis)

    def _power_tables(self, z: np.ndarray) -> list[list[np.ndarray]]:
        """pows[i][e] = z_i ** e as arrays over the leading axes of z."""
        tables = []
        for i in range(self._dim):
            zi = z[..., i]
            tab = [np.ones(z.shape[:-1]), zi]
            for _ in range(2, self._max_expo[i] + 1):
                tab.append(tab[-1] * zi)
            tables.append(tab)
        return tables

    def basis_values(self, z: np.ndarray) -> np.ndarray:
        """H_n(z) with shape (..., N); z has shape (..., d)."""
        z = np.asarray(z, dtype=float)
        pows = self._power_tables(z)
        out = np.empty(z.shape[:-1] + (len(self.basis),))
        for j, mono in enumerate(self.basis):
            acc = None
            for i, e in enumerate(mono):
                if e:
                    acc = pows[i][e] if acc is None else acc * pows[i][e]
            out[..., j] = 1.0 if acc is None else acc
        return out

    def basis_gradient_values(self, z: np.ndarray, n_coords: int | None = None) -> np.ndarray:
        """Partial derivatives of every basis monomial, shape (..., n_coords, N)."""
        z = np.asarray(z, dtype=float)
        if n_coords is None:
            n_coords = self._dim
        pows = self._power_tables(z)
        out = np.zeros(z.shape[:-1] + (n_coords, len(self.basis)))
        for j, mono in enumerate(self.basis):
            for i in range(n_coords):
                e = mono[i]
                if e == 0:
                    continue
                term = e * pows[i][e - 1]
                for k, ek in enumerate(mono):
                    if ek and k != i:
                        term = term * pows[k][ek]
                out[..., i, j] = term
        return out

    def propagator(self, horizon: float) -> np.ndarray:
        return matrix_exponential(self.matrix, horizon)

    def propagate(self, coeffs: np.ndarray, horizon: float) -> np.ndarray:
        """exp(horizon * G_n) @ coeffs."""
        return self.propagator(horizon) @ np.asarray(coeffs, dtype=float)

    def stationary_moments(self) -> np.ndarray:
        """Moment vector mu of the stationary law: mu' G_n = 0, mu[0] = 1.

        Only meaningful when the generator has a unique invariant law (all
        nonzero eigenvalues in the open left half plane).
        """
        ns = scipy.linalg.null_space(self.matrix.T, rcond=1e-10)
        if ns.shape[1] == 0:
            raise NumericalError("generator has no left null vector")
        # Prefer the null vector with the largest constant-monomial component.
        k = int(np.argmax(np.abs(ns[0, :])))
        vec = ns[:, k]
        if abs(vec[0]) < 1e-12:
            raise NumericalError("left null vector has vanishing mass on constants")
        return vec / vec[0]


def matrix_exponential(mat: np.ndarray, t: float = 1.0) -> np.ndarray:
    """exp(t * mat) by scaling-and-squaring with Pade approximants.

    Delegates to scipy's implementation of the Al-Mohy/Higham algorithm
    (order-13 diagonal Pade with norm-based scaling).
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("matrix must be square")
    if not np.isfinite(mat).all():
        raise NumericalError("matrix exponential of non-finite matrix")
    if t < 0:
        raise ValueError(f"horizon must be nonnegative, got {t}")
    if t == 0.0 or mat.size == 0:
        return np.eye(mat.shape[0])
    out = scipy.linalg.expm(t * mat)
    if not np.isfinite(out).all():
        raise NumericalError("matrix exponential overflowed")
    return out


def build_generator(spec: DiffusionSpec, n: int) -> GeneratorMatrix:
    """Assemble G_n column by column via symbolic application of the generator."""
    basis = enumerate_basis(spec.dim, n)
    index = {m: i for i, m in enumerate(basis)}
    size = len(basis)
    G = np.zeros((size, size))
    for j, mono in enumerate(basis):
        image = apply_generator(spec, Polynomial.monomial(spec.dim, mono))
        for m, coeff in image.terms.items():
            row = index.get(m)
            if row is None:
                raise ValueError(
                    f"generator left Pol_{n}: monomial {mono} mapped onto {m}; "
                    "check the degree constraints on a and b")
            G[row, j] = coeff
    return GeneratorMatrix(n, basis, G)


def _check_point(spec: DiffusionSpec, z: np.ndarray) -> None:
    if not bool(np.all(spec.in_box(z))):
        warnings.warn(
            "evaluation point outside the state-space box; the moment formula "
            "extrapolates but the model is only meaningful on E",
            stacklevel=3)


def conditional_expectation(
    spec: DiffusionSpec,
    poly: Polynomial,
    z: Sequence[float] | np.ndarray,
    horizon: float,
    gen: GeneratorMatrix | None = None,
) -> float | np.ndarray:
    """E[poly(Z_{t+horizon}) | Z_t = z] via the moment formula.

    At horizon 0 this is exactly poly(z).  ``gen`` may carry a prebuilt
    generator matrix of degree >= deg(poly) to avoid rebuilding in loops.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    z = np.asarray(z, dtype=float)
    _check_point(spec, z)
    if gen is None:
        gen = build_generator(spec, poly.degree())
    coeffs = poly.coordinate_vector(gen.basis)
    w = gen.propagate(coeffs, horizon)
    values = gen.basis_values(z) @ w
    return float(values) if z.ndim == 1 else values


def conditional_expectation_path(
    spec: DiffusionSpec,
    poly: Polynomial,
    z: Sequence[float] | np.ndarray,
    horizon: float,
    gen: GeneratorMatrix | None = None,
) -> tuple[float | np.ndarray, np.ndarray]:
    """Value and X-gradient of the propagated polynomial at z.

    Returns (value, grad) where grad has shape (..., dim_x): the derivative of
    z -> H_n(z)' exp(horizon G_n) p_vec with respect to the diffusive
    coordinates, as needed by hedging integrands.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    z = np.asarray(z, dtype=float)
    _check_point(spec, z)
    if gen is None:
        gen = build_generator(spec, poly.degree())
    coeffs = poly.coordinate_vector(gen.basis)
    w = gen.propagate(coeffs, horizon)
    values = gen.basis_values(z) @ w
    grads = gen.basis_gradient_values(z, spec.dim_x) @ w
    if z.ndim == 1:
        return float(values), grads
    return values, grads


# ---------------------------------------------------------------------------
# State-space validation (sufficient-condition checker, advisory)
# ---------------------------------------------------------------------------

@dataclass
class Violation:
    condition: str
    boundary_index: int | None
    point: tuple[float, ...]
    value: float


@dataclass
class StateSpaceReport:
    """Outcome of the existence-condition checks; violations are advisory."""

    psd_ok: bool
    invariance_ok: bool
    inward_drift_ok: bool
    violations: list[Violation] = field(default_factory=list)
    boundary_points_checked: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.psd_ok and self.invariance_ok and self.inward_drift_ok


def _box_grid(spec: DiffusionSpec, per_axis: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(spec.box_lo, spec.box_hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _boundary_points(spec: DiffusionSpec, poly: Polynomial,
                     lines_per_axis: int, pts_per_line: int) -> np.ndarray:
    """Sample {poly = 0} inside the box by bisecting sign changes on grid lines."""
    d = spec.dim
    hits: list[np.ndarray] = []
    for axis in range(d):
        other = [k for k in range(d) if k != axis]
        if other:
            coarse = [np.linspace(spec.box_lo[k], spec.box_hi[k], lines_per_axis)
                      for k in other]
            anchors = list(iter_product(*coarse))
        else:
            anchors = [()]
        ts = np.linspace(spec.box_lo[axis], spec.box_hi[axis], pts_per_line)
        for anchor in anchors:
            pts = np.zeros((pts_per_line, d))
            for k, v in zip(other, anchor):
                pts[:, k] = v
            pts[:, axis] = ts
            vals = poly(pts)
            sign = np.sign(vals)
            idx = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
            roots = list(ts[np.nonzero(vals == 0.0)[0]])
            for i in idx:
                lo_t, hi_t = ts[i], ts[i + 1]
                p = pts[i].copy()
                for _ in range(60):
                    mid = 0.5 * (lo_t + hi_t)
                    p[axis] = mid
                    if vals[i] * poly(p) <= 0:
                        hi_t = mid
                    else:
                        lo_t = mid
                roots.append(0.5 * (lo_t + hi_t))
            for r in roots:
                p = pts[0].copy()
                p[axis] = r
                hits.append(p.copy())
    if not hits:
        return np.empty((0, d))
    return np.unique(np.round(np.stack(hits), 9), axis=0)


def validate_state_space(
    spec: DiffusionSpec,
    grid_per_axis: int = 25,
    lines_per_axis: int = 15,
    pts_per_line: int = 201,
    invariance_tol: float = 1e-9,
    drift_margin: float = 1e-12,
) -> StateSpaceReport:
    """Check the sufficient existence conditions on dense samples of E.

    Conditions: (1) a(z) PSD on the box, (2) a grad P = 0 on each boundary set
    {P = 0}, (3) G P > 0 on E intersected with {P = 0}.  These are sufficient,
    not necessary, so failures are reported with witness points rather than
    raised.
    """
    report = StateSpaceReport(psd_ok=True, invariance_ok=True, inward_drift_ok=True)
    if not spec.boundary:
        report.notes.append("no boundary polynomials supplied; only PSD checked")

    grid = _box_grid(spec, grid_per_axis)
    a_vals = spec.diffusion_x_at(grid)
    min_eig = np.linalg.eigvalsh(a_vals).min(axis=-1)
    bad = np.nonzero(min_eig < -1e-9)[0]
    for i in bad[:10]:
        report.psd_ok = False
        report.violations.append(
            Violation("psd", None, tuple(grid[i]), float(min_eig[i])))

    for b_idx, P in enumerate(spec.boundary):
        pts = _boundary_points(spec, P, lines_per_axis, pts_per_line)
        report.boundary_points_checked += len(pts)
        if len(pts) == 0:
            report.notes.append(f"boundary polynomial {b_idx + 1}: no zero set in the box")
            continue
        grad = P.gradient()
        grad_vals = np.stack([g(pts) for g in grad], axis=-1)       # (M, d)
        a_full = np.zeros((len(pts), spec.dim, spec.dim))
        a_full[:, :spec.dim_x, :spec.dim_x] = spec.diffusion_x_at(pts)
        agrad = np.einsum("mij,mj->mi", a_full, grad_vals)
        agrad_norm = np.abs(agrad).max(axis=-1)
        for i in np.nonzero(agrad_norm > invariance_tol)[0][:10]:
            report.invariance_ok = False
            report.violations.append(
                Violation("a_grad_zero", b_idx, tuple(pts[i]), float(agrad_norm[i])))

        # E is {P <= 0}, so staying inside needs the drift of P to point
        # strictly inward on the zero set: G(-P) > margin, i.e. G P < -margin.
        GP = apply_generator(spec, P)
        gp_vals = GP(pts)
        in_E = np.ones(len(pts), dtype=bool)
        for k, Q in enumerate(spec.boundary):
            if k == b_idx:
                continue
            in_E &= Q(pts) <= invariance_tol
        for i in np.nonzero(in_E & (gp_vals >= -drift_margin))[0][:10]:
            report.inward_drift_ok = False
            report.violations.append(
                Violation("inward_drift", b_idx, tuple(pts[i]), float(gp_vals[i])))
    return report


# ---------------------------------------------------------------------------
# Bounds of rational functions over a box
# ---------------------------------------------------------------------------

def _golden_1d(f, lo: float, hi: float, minimize: bool, iters: int = 80) -> tuple[float, float]:
    """Golden-section search; returns (argopt, value)."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    sgn = 1.0 if minimize else -1.0
    for _ in range(iters):
        if sgn * fc < sgn * fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def rational_bounds(
    num: Polynomial,
    den: Polynomial,
    box_lo: Sequence[float],
    box_hi: Sequence[float],
    grid_per_axis: int | None = None,
    refine_sweeps: int = 3,
) -> tuple[float, float]:
    """(min, max) of num/den over the box, by tensor grid plus golden refinement.

    The denominator must be strictly positive on the grid.  Bounds are
    certified to grid-plus-local-search accuracy, which is ample at d <= 3;
    ``grid_per_axis`` is the density knob.
    """
    d = num.dim
    if den.dim != d:
        raise ValueError("numerator and denominator dimensions differ")
    box_lo = [float(v) for v in box_lo]
    box_hi = [float(v) for v in box_hi]
    if len(box_lo) != d or len(box_hi) != d:
        raise ValueError("box size does not match polynomial dimension")
    if grid_per_axis is None:
        grid_per_axis = 10001 if d == 1 else max(41, int(math.ceil(10000 ** (1.0 / d))))

    axes = [np.linspace(lo, hi, grid_per_axis) for lo, hi in zip(box_lo, box_hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    den_vals = den(pts)
    if np.min(den_vals) <= 0:
        k = int(np.argmin(den_vals))
        raise NumericalError(
            f"denominator nonpositive at {tuple(pts[k])}: {den_vals[k]:.3g}")
    ratio = num(pts) / den_vals

    def refine(start_idx: int, minimize: bool) -> float:
        x = pts[start_idx].copy()
        best = ratio[start_idx]
        step = [(hi - lo) / (grid_per_axis - 1) if grid_per_axis > 1 else 0.0
                for lo, hi in zip(box_lo, box_hi)]
        for _ in range(refine_sweeps):
            for k in range(d):
                if step[k] == 0.0:
                    continue
                lo_k = max(box_lo[k], x[k] - step[k])
                hi_k = min(box_hi[k], x[k] + step[k])

                def f(t: float, k=k) -> float:
                    x[k] = t
                    return num(x) / den(x)

                t_opt, v = _golden_1d(f, lo_k, hi_k, minimize)
                x[k] = t_opt
                best = v
        return best

    low = min(float(np.min(ratio)), refine(int(np.argmin(ratio)), minimize=True))
    high = max(float(np.max(ratio)), refine(int(np.argmax(ratio)), minimize=False))
    return low, high
