"""Estimation pipeline: Kalman-filter MLE for the X leg, least squares for Y.

The benchmark-inverse observations are affine in the hidden Jacobi factor,

    v1_k = e^{-alpha t_k} (rho + c X_k) + eps1,   eps1 ~ N(0, sigma1^2),

and the discretized transition matches the exact first two conditional
moments,

    X_k = phi0 + phi1 X_{k-1} + u,   phi1 = e^{-psi dt}, phi0 = b (1 - phi1),

with the innovation variance Q taken as the stationary expectation of the
conditional variance (a quadratic in the previous state, averaged under the
invariant law computed from the degree-2 generator matrix).  State-space box
restrictions are deliberately ignored inside the filter; filtered means are
clipped only by downstream pricing code.

The Y leg is reconstructed from the filtered X by a left Riemann sum of its
linear ODE and its parameters fitted by least squares against the sparse
longevity-index observations.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize

from .generator import build_generator
from .models import jacobi_spec
from .simulate import simulate_state


class FilterError(RuntimeError):
    """Kalman recursion produced a non-positive innovation variance."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class XParams:
    """Parameters of the observed benchmark-inverse leg."""

    psi: float
    b: float
    sigma: float
    sigma1: float
    rho: float = 0.01
    c: float = 0.006
    alpha: float = 0.0

    def __post_init__(self):
        if self.psi <= 0:
            raise ValueError("psi must be positive")
        if not -1.0 < self.b < 1.0:
            raise ValueError("b must lie in (-1, 1)")
        if self.sigma <= 0 or self.sigma1 <= 0:
            raise ValueError("sigma and sigma1 must be positive")


@dataclass(frozen=True)
class YParams:
    """Parameters of the reconstructed longevity leg."""

    d: float
    kappa: float
    eta: float
    q0: float = 0.998
    q1: float = -0.00044
    gamma: float = 0.0
    sigma2: float = 0.0


@dataclass
class ObservationSet:
    """Monthly benchmark-inverse observations plus sparse longevity readings.

    ``longevity_index`` carries NaN at times without a reading.
    """

    times: np.ndarray
    benchmark_inverse: np.ndarray
    longevity_index: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.benchmark_inverse = np.asarray(self.benchmark_inverse, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("observation times must be strictly increasing")
        if len(self.benchmark_inverse) != len(self.times):
            raise ValueError("one benchmark-inverse value per time is required")
        if self.longevity_index is not None:
            self.longevity_index = np.asarray(self.longevity_index, dtype=float)
            if len(self.longevity_index) != len(self.times):
                raise ValueError("longevity column length mismatch")

    @property
    def n(self) -> int:
        return len(self.times)

    def longevity_indices(self) -> np.ndarray:
        if self.longevity_index is None:
            return np.array([], dtype=int)
        return np.nonzero(np.isfinite(self.longevity_index))[0]


@dataclass
class KalmanResult:
    """Filtered path and innovation record of one likelihood evaluation."""

    loglik: float
    xhat: np.ndarray        # updated means
    xvar: np.ndarray        # updated variances
    xhat_pred: np.ndarray   # one-step predictions
    xvar_pred: np.ndarray
    innovations: np.ndarray
    innovation_var: np.ndarray
    fitted: np.ndarray      # Theta0 + Theta1 * xhat (model value of v1)

    def standardized_innovations(self) -> np.ndarray:
        return self.innovations / np.sqrt(self.innovation_var)


def transition_innovation_variance(psi: float, b: float, sigma: float, dt: float) -> float:
    """Stationary-average conditional variance of X over a step of length dt.

    Computed from the degree-2 moment formula: the conditional variance is a
    quadratic in the previous state, and the outer expectation is taken under
    the invariant law of the generator.  Equals (1 - e^{-2 psi dt}) times the
    stationary variance.
    """
    gen = build_generator(jacobi_spec(psi, b, sigma), 2)
    mu_inf = gen.stationary_moments()            # moments of (1, x, x^2)
    E = gen.propagator(dt)
    m2_coeffs = E @ np.array([0.0, 0.0, 1.0])    # E[X_dt^2 | x] in (1, x, x^2)
    phi1 = math.exp(-psi * dt)
    phi0 = b * (1.0 - phi1)
    mean_sq = np.array([phi0**2, 2.0 * phi0 * phi1, phi1**2])
    var_coeffs = m2_coeffs - mean_sq
    return float(mu_inf @ var_coeffs)


def stationary_mean_var(psi: float, b: float, sigma: float) -> tuple[float, float]:
    gen = build_generator(jacobi_spec(psi, b, sigma), 2)
    mu_inf = gen.stationary_moments()
    return float(mu_inf[1]), float(mu_inf[2] - mu_inf[1] ** 2)


def kalman_loglik(
    params: XParams,
    obs: ObservationSet,
    prior_mean: float | None = None,
    prior_var: float | None = None,
) -> KalmanResult:
    """Run the linear filter on the benchmark-inverse column; return loglik and path.

    The log likelihood accumulates -log(2 pi) - log(F)/2 - w^2/(2 F) per
    observation (the per-observation constant does not affect the argmax).
    """
    times = obs.times
    v1 = obs.benchmark_inverse
    N = len(times)
    if prior_mean is None or prior_var is None:
        m_inf, v_inf = stationary_mean_var(params.psi, params.b, params.sigma)
        prior_mean = m_inf if prior_mean is None else prior_mean
        prior_var = v_inf if prior_var is None else prior_var

    # per-gap transition coefficients; gaps equal up to roundoff share one Q
    gaps = np.diff(times)
    uniq, inverse = np.unique(np.round(gaps, 12), return_inverse=True)
    q_uniq = np.array([
        transition_innovation_variance(params.psi, params.b, params.sigma, float(g))
        for g in uniq])
    Q_arr = q_uniq[inverse]
    phi1_arr = np.exp(-params.psi * gaps)
    phi0_arr = params.b * (1.0 - phi1_arr)
    trend = np.exp(-params.alpha * times)
    theta0_arr = trend * params.rho
    theta1_arr = trend * params.c

    s1sq = params.sigma1 ** 2
    xhat = np.empty(N)
    xvar = np.empty(N)
    xhat_pred = np.empty(N)
    xvar_pred = np.empty(N)
    innovations = np.empty(N)
    innovation_var = np.empty(N)
    fitted = np.empty(N)

    loglik = 0.0
    log2pi = math.log(2.0 * math.pi)
    mean_prev = prior_mean
    var_prev = prior_var
    for k in range(N):
        if k == 0:
            pred_m, pred_v = prior_mean, prior_var
        else:
            phi0, phi1 = phi0_arr[k - 1], phi1_arr[k - 1]
            pred_m = phi0 + phi1 * mean_prev
            pred_v = phi1 * phi1 * var_prev + Q_arr[k - 1]
        theta0 = theta0_arr[k]
        theta1 = theta1_arr[k]
        F = theta1 * theta1 * pred_v + s1sq
        if not F > 0 or not math.isfinite(F):
            raise FilterError(k, f"innovation variance {F!r}")
        w = v1[k] - (theta0 + theta1 * pred_m)
        loglik += -log2pi - 0.5 * math.log(F) - 0.5 * w * w / F
        gain = pred_v * theta1 / F
        mean_prev = pred_m + gain * w
        var_prev = 1.0 / (1.0 / pred_v + theta1 * theta1 / s1sq)
        if var_prev <= 0:
            raise FilterError(k, "filtered variance collapsed")

        xhat_pred[k], xvar_pred[k] = pred_m, pred_v
        xhat[k], xvar[k] = mean_prev, var_prev
        innovations[k], innovation_var[k] = w, F
        fitted[k] = theta0 + theta1 * mean_prev
    return KalmanResult(loglik, xhat, xvar, xhat_pred, xvar_pred,
                        innovations, innovation_var, fitted)


# ---------------------------------------------------------------------------
# Maximum likelihood for the X leg
# ---------------------------------------------------------------------------

@dataclass
class MLEFit:
    params: XParams
    loglik: float
    result: KalmanResult
    converged: bool
    degenerate: bool
    start_logliks: list[float] = field(default_factory=list)


def _pack(params: XParams) -> np.ndarray:
    return np.array([math.log(params.psi), math.atanh(params.b),
                     math.log(params.sigma), math.log(params.sigma1)])


def _unpack(u: np.ndarray, template: XParams) -> XParams:
    return replace(template, psi=math.exp(u[0]), b=math.tanh(u[1]),
                   sigma=math.exp(u[2]), sigma1=math.exp(u[3]))


def _negative_loglik(u: np.ndarray, template: XParams, obs: ObservationSet) -> float:
    try:
        params = _unpack(u, template)
    except (OverflowError, ValueError):
        return np.inf
    try:
        return -kalman_loglik(params, obs).loglik
    except (FilterError, OverflowError, FloatingPointError):
        return np.inf


def _fit_one_start(args) -> tuple[float, np.ndarray, bool]:
    u0, template, obs, xatol, maxiter = args
    res = minimize(_negative_loglik, u0, args=(template, obs), method="Nelder-Mead",
                   options={"xatol": xatol, "fatol": 1e-10,
                            "maxiter": maxiter, "maxfev": maxiter})
    return float(res.fun), np.asarray(res.x), bool(res.success)


def fit_mle(
    obs: ObservationSet,
    init: XParams,
    starts: int = 8,
    seed: int = 0,
    xatol: float = 1e-6,
    maxiter: int = 4000,
    workers: int = 1,
) -> MLEFit:
    """Maximize the filter likelihood by multi-start Nelder-Mead.

    The search runs unconstrained in (log psi, atanh b, log sigma, log sigma1);
    rho, c and alpha are held fixed at their values in ``init``.  Start 0 is
    the supplied point, the rest are seeded perturbations of it.
    """
    rng = np.random.default_rng(seed)
    u0 = _pack(init)
    scales = np.array([0.5, 0.4, 0.3, 0.7])
    points = [u0] + [u0 + scales * rng.standard_normal(4) for _ in range(starts - 1)]
    jobs = [(p, init, obs, xatol, maxiter) for p in points]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_fit_one_start, jobs))
    else:
        outcomes = [_fit_one_start(j) for j in jobs]

    logliks = [-f for f, _, _ in outcomes]
    if not any(math.isfinite(l) for l in logliks):
        raise FilterError(-1, "no start produced a finite likelihood")
    best = int(np.argmax(logliks))
    fun, u_best, success = outcomes[best]
    params = _unpack(u_best, init)
    result = kalman_loglik(params, obs)
    v_scale = float(np.std(obs.benchmark_inverse)) or 1.0
    degenerate = params.sigma1 < 1e-8 * v_scale or params.sigma < 1e-10
    return MLEFit(params=params, loglik=-fun, result=result, converged=success,
                  degenerate=degenerate, start_logliks=logliks)


# ---------------------------------------------------------------------------
# Y leg: reconstruction and least squares
# ---------------------------------------------------------------------------

def reconstruct_Y(
    d: float,
    kappa: float,
    eta: float,
    b: float,
    xhat: Sequence[float] | np.ndarray,
    times: Sequence[float] | np.ndarray,
) -> np.ndarray:
    """Left-Riemann reconstruction of Y from the filtered X path.

    Y(t_k) = e^{-kappa t_k} sum_{s<k} (-d xhat_s + d b + kappa eta)
             e^{kappa t_s} (t_{s+1} - t_s),   Y(t_0) = 0.
    """
    xhat = np.asarray(xhat, dtype=float)
    times = np.asarray(times, dtype=float)
    if xhat.shape != times.shape:
        raise ValueError("xhat and times must have equal length")
    forcing = -d * xhat + d * b + kappa * eta
    steps = np.diff(times)
    increments = forcing[:-1] * np.exp(kappa * times[:-1]) * steps
    out = np.zeros_like(times)
    out[1:] = np.exp(-kappa * times[1:]) * np.cumsum(increments)
    return out


@dataclass
class YFit:
    params: YParams
    sse: float
    converged: bool
    degenerate: bool


def fit_Y_least_squares(
    obs: ObservationSet,
    xhat: np.ndarray,
    init: YParams,
    b: float,
    maxiter: int = 6000,
    xatol: float = 1e-8,
) -> YFit:
    """Fit (d, kappa, eta) to the longevity readings by Nelder-Mead least squares.

    q0, q1 and gamma stay fixed; the fitted sigma2 is the residual standard
    deviation.  With q1 = 0 the objective is flat and the initial point is
    returned with the degeneracy flag set.
    """
    idx = obs.longevity_indices()
    if len(idx) < 4:
        raise ValueError("need at least 4 longevity observations")
    v2 = obs.longevity_index[idx]
    t_obs = obs.times[idx]
    trend = np.exp(-init.gamma * t_obs)
    if init.q1 == 0.0:
        return YFit(params=init, sse=float(np.sum((v2 - trend * init.q0) ** 2)),
                    converged=True, degenerate=True)

    def sse(theta: np.ndarray) -> float:
        dd, kk, ee = theta
        y = reconstruct_Y(dd, kk, ee, b, xhat, obs.times)[idx]
        if not np.isfinite(y).all():
            return np.inf
        resid = v2 - trend * (init.q0 + init.q1 * y)
        return float(resid @ resid)

    res = minimize(sse, np.array([init.d, init.kappa, init.eta]),
                   method="Nelder-Mead",
                   options={"xatol": xatol, "fatol": 1e-18,
                            "maxiter": maxiter, "maxfev": maxiter})
    dd, kk, ee = res.x
    dof = max(len(idx) - 3, 1)
    sigma2 = math.sqrt(max(res.fun, 0.0) / dof)
    fitted = replace(init, d=float(dd), kappa=float(kk), eta=float(ee), sigma2=sigma2)
    return YFit(params=fitted, sse=float(res.fun), converged=bool(res.success),
                degenerate=False)


# ---------------------------------------------------------------------------
# Synthetic observations and the RMSE study
# ---------------------------------------------------------------------------

def generate_observations(
    x_params: XParams,
    times: Sequence[float] | np.ndarray,
    seed: int,
    y_params: YParams | None = None,
    longevity_stride: int = 12,
    x_dynamics: str = "sde",
    sde_substeps: int = 20,
) -> ObservationSet:
    """Simulate one synthetic observation record at the given parameters.

    ``x_dynamics="sde"`` drives X with the simulated diffusion (substepped
    between observations); ``"ar1"`` uses the filter's own Gaussian transition
    (useful for studies of pure filter error).  The longevity index, when
    requested, is built from the true X path by the same left-Riemann
    recursion used in estimation and observed every ``longevity_stride``-th
    time with N(0, sigma2^2) noise.
    """
    times = np.asarray(times, dtype=float)
    if times[0] != 0.0:
        raise ValueError("the first observation time must be 0")
    rng = np.random.default_rng(seed)
    N = len(times)
    if x_dynamics == "ar1":
        x = np.empty(N)
        m_inf = x_params.b  # the process starts at the model origin x = 0
        x[0] = 0.0
        for k in range(1, N):
            dt = times[k] - times[k - 1]
            phi1 = math.exp(-x_params.psi * dt)
            Q = transition_innovation_variance(x_params.psi, x_params.b,
                                               x_params.sigma, dt)
            x[k] = (x_params.b * (1 - phi1) + phi1 * x[k - 1]
                    + math.sqrt(Q) * rng.standard_normal())
    elif x_dynamics == "sde":
        spec = jacobi_spec(x_params.psi, x_params.b, x_params.sigma)
        gaps = np.diff(times)
        dt = gaps.min() / sde_substeps
        bundle = simulate_state(spec, n_paths=1, dt=dt, horizon=float(times[-1]),
                                seed=seed, store_stride=1)
        x = np.interp(times, bundle.times, bundle.states[0, :, 0])
    else:
        raise ValueError("x_dynamics must be 'sde' or 'ar1'")

    trend = np.exp(-x_params.alpha * times)
    v1 = trend * (x_params.rho + x_params.c * x) + x_params.sigma1 * rng.standard_normal(N)
    v2 = None
    if y_params is not None:
        y = reconstruct_Y(y_params.d, y_params.kappa, y_params.eta, x_params.b,
                          x, times)
        v2 = np.full(N, np.nan)
        idx = np.arange(0, N, longevity_stride)
        v2[idx] = (np.exp(-y_params.gamma * times[idx])
                   * (y_params.q0 + y_params.q1 * y[idx])
                   + y_params.sigma2 * rng.standard_normal(len(idx)))
    return ObservationSet(times=times, benchmark_inverse=v1, longevity_index=v2)


@dataclass
class RmseResult:
    """Per-time root mean square pricing errors across replications, in basis points."""

    times: np.ndarray
    rmse_benchmark_bps: np.ndarray
    rmse_longevity_bps: np.ndarray | None
    longevity_times: np.ndarray | None
    replications: int

    @property
    def mean_benchmark_bps(self) -> float:
        return float(self.rmse_benchmark_bps.mean())

    @property
    def mean_longevity_bps(self) -> float | None:
        if self.rmse_longevity_bps is None:
            return None
        return float(self.rmse_longevity_bps.mean())


def rmse_monte_carlo(
    x_params: XParams,
    times: Sequence[float] | np.ndarray,
    replications: int = 100,
    seed: int = 0,
    y_params: YParams | None = None,
    longevity_stride: int = 12,
) -> RmseResult:
    """Filter pricing error across seeded synthetic replications.

    Each replication simulates observations at the given parameters with the
    filter's own transition law, re-runs the filter, and records the fitted-
    value errors; the RMSE at each time is taken across replications and
    reported in basis points.
    """
    if replications < 2:
        raise ValueError("need at least 2 replications")
    times = np.asarray(times, dtype=float)
    N = len(times)
    sq1 = np.zeros(N)
    idx = np.arange(0, N, longevity_stride) if y_params is not None else None
    sq2 = np.zeros(len(idx)) if idx is not None else None
    for r in range(replications):
        obs = generate_observations(x_params, times, seed=seed + 1000 * r,
                                    y_params=y_params,
                                    longevity_stride=longevity_stride,
                                    x_dynamics="ar1")
        result = kalman_loglik(x_params, obs)
        sq1 += (obs.benchmark_inverse - result.fitted) ** 2
        if y_params is not None:
            y = reconstruct_Y(y_params.d, y_params.kappa, y_params.eta,
                              x_params.b, result.xhat, times)
            fit2 = (np.exp(-y_params.gamma * times[idx])
                    * (y_params.q0 + y_params.q1 * y[idx]))
            sq2 += (obs.longevity_index[idx] - fit2) ** 2
    rmse1 = np.sqrt(sq1 / replications) * 1e4
    rmse2 = np.sqrt(sq2 / replications) * 1e4 if sq2 is not None else None
    return RmseResult(times=times, rmse_benchmark_bps=rmse1,
                      rmse_longevity_bps=rmse2,
                      longevity_times=times[idx] if idx is not None else None,
                      replications=replications)


# ---------------------------------------------------------------------------
# Observation CSV input/output
# ---------------------------------------------------------------------------

def monthly_grid(n: int = 517, span: float = 1.0) -> np.ndarray:
    """n equally spaced observation times covering [0, span]."""
    return np.linspace(0.0, span, n)


def load_observations(path: str | Path, time_scale: str = "unit",
                      bps: bool = False) -> ObservationSet:
    """Read `date, benchmark_inverse, longevity_index` rows.

    ``time_scale="unit"`` maps the date range onto [0, 1]; ``"years"``
    measures time in calendar years since the first date.  ``bps=True``
    rescales the benchmark column from basis points to decimals.
    """
    path = Path(path)
    dates: list[date] = []
    v1: list[float] = []
    v2: list[float] = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"date", "benchmark_inverse"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"{path}: need columns date, benchmark_inverse")
        has_longevity = "longevity_index" in (reader.fieldnames or [])
        for line_no, row in enumerate(reader, start=2):
            try:
                dates.append(datetime.strptime(row["date"].strip(), "%Y-%m-%d").date())
                v1.append(float(row["benchmark_inverse"]))
            except (KeyError, ValueError) as err:
                raise ValueError(f"{path}:{line_no}: {err}") from err
            raw = (row.get("longevity_index") or "").strip() if has_longevity else ""
            v2.append(float(raw) if raw else np.nan)
    if len(dates) < 2:
        raise ValueError(f"{path}: need at least 2 observations")
    days = np.array([(d - dates[0]).days for d in dates], dtype=float)
    if time_scale == "unit":
        times = days / days[-1]
    elif time_scale == "years":
        times = days / 365.25
    else:
        raise ValueError("time_scale must be 'unit' or 'years'")
    v1_arr = np.asarray(v1)
    if bps:
        v1_arr = v1_arr / 1e4
    v2_arr = np.asarray(v2)
    return ObservationSet(times=times,
                          benchmark_inverse=v1_arr,
                          longevity_index=v2_arr if has_longevity else None)


def save_observations(obs: ObservationSet, path: str | Path,
                      start: date = date(1970, 1, 1)) -> None:
    """Write the observation set with synthetic monthly ISO dates."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "benchmark_inverse", "longevity_index"])
        for k in range(obs.n):
            year = start.year + (start.month - 1 + k) // 12
            month = (start.month - 1 + k) % 12 + 1
            stamp = date(year, month, 1).isoformat()
            v2 = ""
            if obs.longevity_index is not None and np.isfinite(obs.longevity_index[k]):
                v2 = repr(float(obs.longevity_index[k]))
            writer.writerow([stamp, repr(float(obs.benchmark_inverse[k])), v2])
