"""Path simulation of the state variable, market processes, and death times.

X is advanced one step at a time with the diffusion frozen at the left
endpoint (Euler-Maruyama treatment of the noise, using the pointwise matrix
square root of the diffusion block) and post-step clipping to the box.  The
drift is affine, so its one-step action is applied exactly through the
conditional-mean map z -> P z + r (an augmented matrix exponential); plain
forward-Euler drift is available as ``drift_mode="euler"`` but its transient
bias is amplified by unstable Y blocks and visibly shifts Y moments at large
path counts.  The drift-only Y block is integrated by the implicit trapezoid
rule along the realized X path.

Death times come from the classic thinning construction: policyholder i dies
when the cumulative hazard crosses an independent unit exponential, which
realizes conditional independence given the market path.

Everything is deterministic given (seed, dt, n_paths).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .generator import DiffusionSpec, NumericalError
from .market import MarketModel
from .polynomials import Polynomial


@dataclass
class PathBundle:
    """Simulated paths stored on a thinned grid.

    ``states`` has shape (n_paths, len(times), d).  ``hazard`` is the running
    integral of the mortality intensity along each path (present only when a
    market model was attached) and is linearly interpolated between stored
    points when inverting for death times.
    """

    times: np.ndarray
    states: np.ndarray
    hazard: np.ndarray | None
    dt: float
    seed: int
    clipped_fraction: float
    negative_mu_steps: int
    spec: DiffusionSpec
    market: MarketModel | None = None

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def state_at(self, t: float) -> np.ndarray:
        """All paths' states linearly interpolated at a common time t."""
        idx = int(np.clip(np.searchsorted(self.times, t, side="right"), 1,
                          len(self.times) - 1))
        t0, t1 = self.times[idx - 1], self.times[idx]
        w = (t - t0) / (t1 - t0) if t1 > t0 else 0.0
        return self.states[:, idx - 1] + w * (self.states[:, idx] - self.states[:, idx - 1])

    def state_at_times(self, path_idx: np.ndarray, t: np.ndarray) -> np.ndarray:
        """States of specific paths at per-entry times, shape (len(t), d)."""
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.times, t, side="right"), 1, len(self.times) - 1)
        t0, t1 = self.times[idx - 1], self.times[idx]
        w = np.where(t1 > t0, (t - t0) / np.where(t1 > t0, t1 - t0, 1.0), 0.0)
        lo = self.states[path_idx, idx - 1]
        hi = self.states[path_idx, idx]
        return lo + w[:, None] * (hi - lo)


class _YStepper:
    """Implicit-trapezoid step for the linear Y block: dY = (A x + B y + c) dt."""

    def __init__(self, spec: DiffusionSpec, dt: float):
        self.m2 = spec.dim_y
        if self.m2 == 0:
            return
        A, B, c = spec.y_drift_coefficients()
        eye = np.eye(self.m2)
        self.A, self.c = A, c
        self.forward = eye + 0.5 * dt * B
        self.backward_inv = np.linalg.inv(eye - 0.5 * dt * B)
        self.dt = dt

    def step(self, y: np.ndarray, x_old: np.ndarray, x_new: np.ndarray) -> np.ndarray:
        if self.m2 == 0:
            return y
        rhs = (y @ self.forward.T
               + (0.5 * self.dt) * (x_old + x_new) @ self.A.T
               + self.dt * self.c)
        return rhs @ self.backward_inv.T


def _drift_linear_parts(spec: DiffusionSpec) -> tuple[np.ndarray, np.ndarray]:
    """The affine drift as b(z) = M z + c."""
    d = spec.dim
    M = np.zeros((d, d))
    c = np.zeros(d)
    for i, b in enumerate(spec.drift):
        for mono, coeff in b.terms.items():
            if sum(mono) == 0:
                c[i] = coeff
            else:
                M[i, mono.index(1)] = coeff
    return M, c


def _mean_map(spec: DiffusionSpec, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """One-step conditional-mean map z -> P z + r of the affine drift ODE."""
    d = spec.dim
    M, c = _drift_linear_parts(spec)
    aug = np.zeros((d + 1, d + 1))
    aug[:d, :d] = M
    aug[:d, d] = c
    E = scipy.linalg.expm(dt * aug)
    return E[:d, :d], E[:d, d]


def _intensity_fn(market: MarketModel) -> Callable[[np.ndarray], np.ndarray]:
    """Raw intensity gamma - (grad q' b)/q without box checks, for path loops."""
    dqb = market.index_drift_poly
    q = market.q
    gamma = market.gamma

    def mu(z: np.ndarray) -> np.ndarray:
        qv = q(z)
        if np.any(qv <= 0):
            raise NumericalError("index polynomial q hit zero along a simulated path")
        return gamma - dqb(z) / qv

    return mu


class StateStepper:
    """One-step kernel shared by the bundle simulator and the hedging loop.

    Applies the drift (exact conditional-mean map by default, forward Euler
    optionally), adds left-endpoint-frozen diffusion noise, clips the X block
    to its box and advances the Y block by implicit trapezoid.
    """

    def __init__(self, spec: DiffusionSpec, dt: float, drift_mode: str = "exact"):
        if drift_mode not in ("exact", "euler"):
            raise ValueError("drift_mode must be 'exact' or 'euler'")
        self.spec = spec
        self.dt = dt
        self.sqrt_dt = np.sqrt(dt)
        self.drift_mode = drift_mode
        self.m1 = spec.dim_x
        self.lo_x = np.asarray(spec.box_lo[:self.m1])
        self.hi_x = np.asarray(spec.box_hi[:self.m1])
        self.y_step = _YStepper(spec, dt)
        if drift_mode == "exact":
            self.P, self.r = _mean_map(spec, dt)
        self.clipped = 0
        self.steps_done = 0

    def draw(self, rng: np.random.Generator, n_paths: int) -> np.ndarray:
        return rng.standard_normal((n_paths, self.m1))

    def step(self, z: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Advance all paths one step in place; xi are standard normals."""
        m1 = self.m1
        x_old = z[:, :m1].copy()
        if self.drift_mode == "exact":
            x_det = z @ self.P[:m1].T + self.r[:m1]
        else:
            x_det = x_old + self.spec.drift_at(z)[:, :m1] * self.dt
        if m1 == 1:
            a = self.spec.diffusion[0][0](z)
            x_new = x_det[:, 0] + np.sqrt(np.maximum(a, 0.0)) * xi[:, 0] * self.sqrt_dt
            x_clipped = np.clip(x_new, self.lo_x[0], self.hi_x[0])
            self.clipped += int(np.count_nonzero(x_new != x_clipped))
            z[:, 0] = x_clipped
        else:
            sig = self.spec.sigma_at(z)
            x_new = x_det + np.einsum("pij,pj->pi", sig, xi) * self.sqrt_dt
            x_clipped = np.clip(x_new, self.lo_x, self.hi_x)
            self.clipped += int(np.count_nonzero(x_new != x_clipped))
            z[:, :m1] = x_clipped
        if self.spec.dim_y:
            z[:, m1:] = self.y_step.step(z[:, m1:], x_old, z[:, :m1])
        self.steps_done += 1
        if not np.isfinite(z).all():
            raise NumericalError(f"non-finite state at step {self.steps_done}")
        return z

    @property
    def clipped_fraction(self) -> float:
        if self.steps_done == 0:
            return 0.0
        return self.clipped / (self.steps_done * self.m1)  # per path-step-coord, x n_paths


def simulate_state(
    spec: DiffusionSpec,
    n_paths: int,
    dt: float,
    horizon: float,
    seed: int,
    market: MarketModel | None = None,
    store_stride: int = 1,
    drift_mode: str = "exact",
) -> PathBundle:
    """Simulate paths of Z on [0, horizon], stored every ``store_stride`` steps.

    The effective step is horizon / round(horizon / dt) so the grid lands on
    the horizon exactly.  When a market model is supplied the cumulative
    hazard is accumulated by the trapezoid rule at full resolution and stored
    on the thinned grid; negative intensities are clipped at zero and counted.
    """
    if dt <= 0 or horizon <= 0:
        raise ValueError("dt and horizon must be positive")
    n_steps = max(1, int(round(horizon / dt)))
    dt = horizon / n_steps
    rng = np.random.default_rng(seed)
    d = spec.dim

    stored = list(range(0, n_steps + 1, store_stride))
    if stored[-1] != n_steps:
        stored.append(n_steps)
    stored_set = {k: i for i, k in enumerate(stored)}

    z = np.tile(np.asarray(spec.z0, dtype=float), (n_paths, 1))
    states = np.empty((n_paths, len(stored), d))
    states[:, 0] = z
    stepper = StateStepper(spec, dt, drift_mode)

    mu_fn = _intensity_fn(market) if market is not None else None
    hazard = np.zeros((n_paths, len(stored))) if market is not None else None
    lam = np.zeros(n_paths)
    mu_prev = None
    negative_mu = 0
    if mu_fn is not None:
        mu_prev = mu_fn(z)
        negative_mu += int(np.count_nonzero(mu_prev < 0))
        mu_prev = np.maximum(mu_prev, 0.0)

    for k in range(n_steps):
        z = stepper.step(z, stepper.draw(rng, n_paths))

        if mu_fn is not None:
            mu_now = mu_fn(z)
            negative_mu += int(np.count_nonzero(mu_now < 0))
            mu_now = np.maximum(mu_now, 0.0)
            lam += 0.5 * dt * (mu_prev + mu_now)
            mu_prev = mu_now

        pos = stored_set.get(k + 1)
        if pos is not None:
            states[:, pos] = z
            if hazard is not None:
                hazard[:, pos] = lam

    times = np.array([k * dt for k in stored])
    return PathBundle(
        times=times, states=states, hazard=hazard, dt=dt, seed=seed,
        clipped_fraction=stepper.clipped / (n_steps * n_paths * spec.dim_x),
        negative_mu_steps=negative_mu, spec=spec, market=market)


def simulate_deaths(bundle: PathBundle, n: int, seed: int) -> np.ndarray:
    """Death times of n policyholders per path, shape (n_paths, n).

    tau_i = inf{t : hazard integral >= E_i} with E_i i.i.d. unit exponentials,
    independent across policyholders and of the state path; np.inf marks a
    death beyond the horizon and is used only as a sentinel, never in
    arithmetic.
    """
    if bundle.hazard is None:
        raise ValueError("bundle carries no hazard path; simulate with a market model")
    rng = np.random.default_rng(seed)
    n_paths, K = bundle.hazard.shape
    exponentials = rng.exponential(size=(n_paths, n))
    taus = np.full((n_paths, n), np.inf)
    times = bundle.times
    block = max(1, 20_000_000 // max(K * n, 1))
    for start in range(0, n_paths, block):
        sl = slice(start, min(start + block, n_paths))
        lam = bundle.hazard[sl]
        E = exponentials[sl]
        idx = (lam[:, :, None] < E[:, None, :]).sum(axis=1)  # first crossing index
        hit = idx < K
        rows, cols = np.nonzero(hit)
        i1 = idx[rows, cols]
        lam0 = lam[rows, i1 - 1]
        lam1 = lam[rows, i1]
        t0, t1 = times[i1 - 1], times[i1]
        frac = np.where(lam1 > lam0, (E[rows, cols] - lam0) / np.where(lam1 > lam0, lam1 - lam0, 1.0), 1.0)
        taus[sl][rows, cols] = t0 + frac * (t1 - t0)
    return taus


def mc_price(
    bundle: PathBundle,
    kind: str,
    payoff: Polynomial | Callable[[np.ndarray], np.ndarray],
    maturity: float,
    n: int = 1,
    deaths: np.ndarray | None = None,
    seed: int = 0,
) -> tuple[float, float]:
    """Brute-force price of a building block from simulated paths.

    Estimates the time-0 value S*_0 E[benchmarked payments]: survivors'
    terminal payment for a pure endowment, payments at death for term
    insurance, and their sum (same payoff) for the annuity.  Returns
    (estimate, standard error).
    """
    if bundle.n_paths < 100:
        raise ValueError("at least 100 paths are required for a usable estimate")
    if bundle.market is None:
        raise ValueError("bundle carries no market model")
    if maturity > bundle.horizon + 1e-12:
        raise ValueError("bundle horizon is shorter than the payoff maturity")
    if kind not in ("pure_endowment", "term_insurance", "annuity"):
        raise ValueError(f"unknown building block '{kind}'")
    model = bundle.market
    g = payoff if callable(payoff) else payoff  # Polynomial is callable
    if deaths is None:
        deaths = simulate_deaths(bundle, n, seed)
    elif deaths.shape != (bundle.n_paths, n):
        raise ValueError("deaths array shape does not match (n_paths, n)")

    k_T = int(np.argmin(np.abs(bundle.times - maturity)))
    if abs(bundle.times[k_T] - maturity) > 1e-9 * max(1.0, maturity):
        raise ValueError("maturity must lie on the stored time grid")
    z_T = bundle.states[:, k_T]
    bench_inv_T = np.exp(-model.alpha * maturity) * model.p(z_T)

    values = np.zeros(bundle.n_paths)
    if kind in ("pure_endowment", "annuity"):
        survivors = (deaths > maturity).sum(axis=1)
        values += survivors * bench_inv_T * g(z_T)
    if kind in ("term_insurance", "annuity"):
        tau = deaths.copy()
        died = np.isfinite(tau) & (tau <= maturity)
        if died.any():
            rows, cols = np.nonzero(died)
            t_death = tau[rows, cols]
            z_death = bundle.state_at_times(rows, np.clip(t_death, 0.0, bundle.horizon))
            pay = np.exp(-model.alpha * t_death) * model.p(z_death) * g(z_death)
            np.add.at(values, rows, pay)

    bench_inv_0 = float(model.benchmark_inverse(0.0, np.asarray(model.spec.z0)))
    values = values / bench_inv_0
    est = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(bundle.n_paths))
    return est, se


def dump_paths(bundle: PathBundle, max_paths: int | None = None) -> tuple[list[str], np.ndarray]:
    """Rows (path, t, X..., Y..., r, mu, I) for CSV export; needs a market model."""
    model = bundle.market
    spec = bundle.spec
    header = ["path", "t"]
    header += [f"x{i + 1}" for i in range(spec.dim_x)]
    header += [f"y{j + 1}" for j in range(spec.dim_y)]
    n_paths = bundle.n_paths if max_paths is None else min(max_paths, bundle.n_paths)
    cols = 2 + spec.dim
    if model is not None:
        header += ["short_rate", "mortality_intensity", "survival_index"]
        cols += 3
    K = len(bundle.times)
    out = np.empty((n_paths * K, cols))
    mu_fn = _intensity_fn(model) if model is not None else None
    for p in range(n_paths):
        rows = slice(p * K, (p + 1) * K)
        z = bundle.states[p]
        out[rows, 0] = p
        out[rows, 1] = bundle.times
        out[rows, 2:2 + spec.dim] = z
        if model is not None:
            out[rows, 2 + spec.dim] = model.alpha - model.drift_of_log_p(z) / model.p(z)
            out[rows, 3 + spec.dim] = mu_fn(z)
            out[rows, 4 + spec.dim] = np.exp(-model.gamma * bundle.times) * model.q(z)
    return header, out
