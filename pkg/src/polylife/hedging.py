"""Risk-minimizing hedging of pure endowments in the OIS and longevity bonds.

The benchmarked traded assets are martingales driven by the X noise:

    S1_t = e^{-aT}   phat_{(t,T)}(Z_t)        (benchmarked OIS bond)
    S2_t = e^{-(a+g)T} pqhat_{(t,T)}(Z_t)     (benchmarked longevity bond)

and the benchmarked payoff expectation U_t = pqghat_{(t,T)}(Z_t) shares the
same driving noise, so the orthogonal-projection strategy solves

    theta_t phi_t = sigma(X_t)' grad_x pqghat_{(t,T)}(Z_t)

with theta the (noise x 2) matrix of the assets' diffusion loadings.  When
theta is square and well conditioned the solve is exact; otherwise the
minimal-norm least-squares solution is used and flagged (with one noise
source and two assets theta is 1 x 2 and the system is consistent, so
replication is preserved).

The simulation loop rebalances at every grid step, draws deaths by hazard
thinning, and reports the terminal hedging-error distribution together with
cost-process diagnostics: jump sizes at deaths (equal to the per-policy value
up to O(dt)) and the compensated-cost residual, which vanishes with dt for
polynomial payoffs because the orthogonal continuous part is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .generator import GeneratorMatrix, matrix_exponential
from .market import MarketModel
from .polynomials import Polynomial
from .pricing import PortfolioState
from .simulate import StateStepper, _intensity_fn


@dataclass
class StrategyResult:
    """Holdings of (OIS bond, longevity bond) from the orthogonal projection."""

    delta: np.ndarray            # benchmarked holdings, shape (2,)
    phi: np.ndarray              # pre-scaling solution of theta phi = target
    residual: float              # |theta phi - target|, nonzero only off-span
    condition: float             # cond(theta) for square theta, else inf
    least_squares: bool          # True when the minimal-norm fallback was used


def theta_matrix(model: MarketModel, t: float, T: float,
                 z: Sequence[float] | np.ndarray) -> np.ndarray:
    """Diffusion-loading matrix of the two benchmarked bonds, shape (dim_x, 2)."""
    if not 0 <= t <= T:
        raise ValueError("need 0 <= t <= T")
    z = np.asarray(z, dtype=float)
    model._require_on_E(z)
    spec = model.spec
    h = T - t
    cols = []
    for poly, level in ((model.p, model.alpha), (model.pq, model.alpha + model.gamma)):
        gen = model.generator_matrix(poly.degree())
        w = gen.propagate(poly.coordinate_vector(gen.basis), h)
        grad = gen.basis_gradient_values(z, spec.dim_x) @ w
        cols.append(math.exp(-level * T) * grad)
    sigma = spec.sigma_at(z)
    return sigma.T @ np.stack(cols, axis=-1)


def _solve_theta(theta: np.ndarray, target: np.ndarray,
                 sv_cutoff: float = 1e-10) -> tuple[np.ndarray, float, float, bool]:
    """Solve theta phi = target; exact for well-conditioned square systems,
    minimal-norm least squares otherwise.  Returns (phi, residual, cond, used_lsq)."""
    m = theta.shape[0]
    if m == 2:
        det = theta[0, 0] * theta[1, 1] - theta[0, 1] * theta[1, 0]
        scale = np.abs(theta).max()
        if scale > 0 and abs(det) > (sv_cutoff * scale) ** 2:
            phi = np.array([
                (target[0] * theta[1, 1] - theta[0, 1] * target[1]) / det,
                (theta[0, 0] * target[1] - target[0] * theta[1, 0]) / det,
            ])
            gram = theta.T @ theta
            tr, dd = gram[0, 0] + gram[1, 1], gram[0, 0] * gram[1, 1] - gram[0, 1] ** 2
            disc = max(tr * tr - 4.0 * dd, 0.0)
            s_max = math.sqrt(max((tr + math.sqrt(disc)) / 2.0, 0.0))
            s_min = math.sqrt(max((tr - math.sqrt(disc)) / 2.0, 0.0))
            cond = s_max / s_min if s_min > 0 else np.inf
            return phi, 0.0, cond, False
    phi, _, _, svals = np.linalg.lstsq(theta, target, rcond=sv_cutoff)
    residual = float(np.linalg.norm(theta @ phi - target))
    cond = float(svals[0] / svals[-1]) if svals[-1] > 0 else np.inf
    return phi, residual, cond, True


def rm_strategy(
    model: MarketModel,
    portfolio: PortfolioState,
    payoff: Polynomial,
    t: float,
    T: float,
    z: Sequence[float] | np.ndarray,
) -> StrategyResult:
    """Risk-minimizing holdings for a pure endowment with a polynomial payoff."""
    z = np.asarray(z, dtype=float)
    theta = theta_matrix(model, t, T, z)
    pqg = model.pq * payoff
    gen = model.generator_matrix(pqg.degree())
    w = gen.propagate(pqg.coordinate_vector(gen.basis), T - t)
    grad = gen.basis_gradient_values(z, model.spec.dim_x) @ w
    target = model.spec.sigma_at(z).T @ grad
    phi, residual, cond, lsq = _solve_theta(theta, target)
    scale = (portfolio.survivors * math.exp(-model.alpha * T - model.gamma * (T - t))
             / float(model.q(z)))
    return StrategyResult(delta=scale * phi, phi=phi, residual=residual,
                          condition=cond, least_squares=lsq)


# ---------------------------------------------------------------------------
# Simulation of the hedge
# ---------------------------------------------------------------------------

@dataclass
class HedgeReport:
    """Distributional summary of a discretely rebalanced risk-minimizing hedge.

    Errors are benchmarked: terminal_error = A_T - V_0 - gains is the cost
    overrun of the hedged book, unhedged_error the same with no trading.
    ``cost_residual`` is the terminal residual of the compensated cost
    identity and vanishes with dt for polynomial payoffs.
    """

    times: np.ndarray
    mean_delta: np.ndarray          # (K, 2) mean holdings path
    mean_value: np.ndarray          # (K,) mean benchmarked book value
    mean_cost: np.ndarray           # (K,) mean benchmarked cost path
    initial_value: float
    terminal_error: np.ndarray      # (n_paths,)
    unhedged_error: np.ndarray      # (n_paths,)
    cost_residual: np.ndarray       # (n_paths,)
    death_counts: np.ndarray        # (n_paths,)
    jump_events: int
    jump_abs_residual_mean: float   # mean |realized - predicted| cost jump
    jump_abs_size_mean: float
    gkw_covariance: float
    gkw_covariance_se: float
    worst_condition: float
    least_squares_fraction: float
    clipped_fraction: float
    negative_mu_steps: int
    n_paths: int
    dt: float
    seed: int

    @property
    def variance_ratio(self) -> float:
        v_un = self.unhedged_error.var(ddof=1)
        return float(self.terminal_error.var(ddof=1) / v_un) if v_un > 0 else np.nan

    def summary(self) -> dict[str, float]:
        return {
            "n_paths": self.n_paths,
            "dt": self.dt,
            "seed": self.seed,
            "initial_value": self.initial_value,
            "terminal_error_mean": float(self.terminal_error.mean()),
            "terminal_error_rms": float(np.sqrt((self.terminal_error ** 2).mean())),
            "unhedged_error_rms": float(np.sqrt((self.unhedged_error ** 2).mean())),
            "variance_ratio": self.variance_ratio,
            "cost_residual_rms": float(np.sqrt((self.cost_residual ** 2).mean())),
            "death_count_mean": float(self.death_counts.mean()),
            "jump_events": self.jump_events,
            "jump_abs_residual_mean": self.jump_abs_residual_mean,
            "jump_abs_size_mean": self.jump_abs_size_mean,
            "gkw_covariance": self.gkw_covariance,
            "gkw_covariance_se": self.gkw_covariance_se,
            "worst_condition": self.worst_condition,
            "least_squares_fraction": self.least_squares_fraction,
            "clipped_fraction": self.clipped_fraction,
        }


class _Propagated:
    """Coefficient vectors e^{(T - k dt) G} v on the whole rebalancing grid."""

    def __init__(self, gen: GeneratorMatrix, poly: Polynomial, dt: float, n_steps: int):
        self.gen = gen
        v = poly.coordinate_vector(gen.basis)
        E = matrix_exponential(gen.matrix, dt)
        W = np.empty((n_steps + 1, len(v)))
        W[n_steps] = v
        for k in range(n_steps - 1, -1, -1):
            W[k] = E @ W[k + 1]
        self.W = W

    def value(self, k: int, basis_z: np.ndarray) -> np.ndarray:
        return basis_z @ self.W[k]

    def gradient(self, k: int, grad_z: np.ndarray) -> np.ndarray:
        return grad_z @ self.W[k]


def hedge_simulation(
    model: MarketModel,
    portfolio: PortfolioState,
    payoff: Polynomial,
    maturity: float,
    n_paths: int,
    dt: float,
    seed: int,
    store_stride: int = 10,
    sv_cutoff: float = 1e-10,
) -> HedgeReport:
    """Simulate the discretely rebalanced risk-minimizing hedge of a pure endowment.

    Rebalances at every time step using the predictable survivor count, draws
    deaths by thinning the running hazard, and accumulates benchmarked gains
    against the two bonds.  All randomness is fixed by the seed.
    """
    if portfolio.t != 0.0:
        raise ValueError("hedge simulation starts at t = 0")
    if dt > 1e-2:
        raise ValueError("rebalancing step too coarse (need dt <= 1e-2)")
    spec = model.spec
    m1 = spec.dim_x
    n_steps = max(1, int(round(maturity / dt)))
    dt = maturity / n_steps
    rng = np.random.default_rng(seed)
    stepper = StateStepper(spec, dt)
    mu_fn = _intensity_fn(model)

    pqg = model.pq * payoff
    prop_p = _Propagated(model.generator_matrix(model.p.degree()), model.p, dt, n_steps)
    prop_pq = _Propagated(model.generator_matrix(model.pq.degree()), model.pq, dt, n_steps)
    prop_pqg = _Propagated(model.generator_matrix(pqg.degree()), pqg, dt, n_steps)
    disc1 = math.exp(-model.alpha * maturity)
    disc2 = math.exp(-(model.alpha + model.gamma) * maturity)

    n = portfolio.survivors
    z = np.tile(np.asarray(spec.z0, dtype=float), (n_paths, 1))
    alive = np.ones((n_paths, n), dtype=bool)
    exponentials = rng.exponential(size=(n_paths, n))
    hazard = np.zeros(n_paths)
    negative_mu = 0

    compensator = np.zeros(n_paths)
    jump_sum = np.zeros(n_paths)
    gain_total = np.zeros(n_paths)
    death_mart = np.zeros(n_paths)         # for the orthogonality check
    jump_events = 0
    jump_abs_res = 0.0
    jump_abs_size = 0.0
    worst_condition = 0.0
    lsq_steps = 0
    solve_steps = 0

    stored = list(range(0, n_steps + 1, store_stride))
    if stored[-1] != n_steps:
        stored.append(n_steps)
    stored_pos = {k: i for i, k in enumerate(stored)}
    K = len(stored)
    mean_delta = np.zeros((K, 2))
    mean_value = np.zeros(K)
    mean_cost = np.zeros(K)

    def assets(k: int, basis_p: np.ndarray, basis_pq: np.ndarray) -> np.ndarray:
        return np.stack([disc1 * prop_p.value(k, basis_p),
                         disc2 * prop_pq.value(k, basis_pq)], axis=-1)

    def book_value(k: int, survivors: np.ndarray, basis_pqg: np.ndarray,
                   qv: np.ndarray) -> np.ndarray:
        t_k = k * dt
        w = math.exp(-model.alpha * maturity - model.gamma * (maturity - t_k))
        return survivors * w * prop_pqg.value(k, basis_pqg) / qv

    gen_p = prop_p.gen
    gen_pq = prop_pq.gen
    gen_pqg = prop_pqg.gen

    survivors = alive.sum(axis=1).astype(float)
    basis_p = gen_p.basis_values(z)
    basis_pq = gen_pq.basis_values(z)
    basis_pqg = gen_pqg.basis_values(z)
    qv = model.q(z)
    S_now = assets(0, basis_p, basis_pq)
    V_now = book_value(0, survivors, basis_pqg, qv)
    V0 = float(V_now[0])
    mu_now = np.maximum(mu_fn(z), 0.0)
    mean_delta_acc = None

    for k in range(n_steps):
        t_k = k * dt
        # per-policy benchmarked value and the hedge at the current state
        w_k = math.exp(-model.alpha * maturity - model.gamma * (maturity - t_k))
        unit_value = w_k * prop_pqg.value(k, basis_pqg) / qv

        sig = spec.sigma_at(z)
        target = np.einsum("pji,pj->pi", sig,
                           prop_pqg.gradient(k, gen_pqg.basis_gradient_values(z, m1)))
        theta = np.empty((n_paths, m1, 2))
        theta[..., 0] = disc1 * np.einsum(
            "pji,pj->pi", sig, prop_p.gradient(k, gen_p.basis_gradient_values(z, m1)))
        theta[..., 1] = disc2 * np.einsum(
            "pji,pj->pi", sig, prop_pq.gradient(k, gen_pq.basis_gradient_values(z, m1)))

        phi, max_cond, n_lsq = _solve_theta_batch(theta, target, sv_cutoff)
        worst_condition = max(worst_condition, max_cond)
        lsq_steps += n_lsq
        solve_steps += n_paths
        delta = (survivors * w_k / qv)[:, None] * phi

        pos = stored_pos.get(k)
        if pos is not None:
            mean_delta[pos] = delta.mean(axis=0)
            mean_value[pos] = V_now.mean()
            mean_cost[pos] = (V_now - gain_total).mean()

        # advance the state and the hazard
        z = stepper.step(z, stepper.draw(rng, n_paths))
        mu_next = mu_fn(z)
        negative_mu += int(np.count_nonzero(mu_next < 0))
        mu_next = np.maximum(mu_next, 0.0)
        d_lambda = 0.5 * dt * (mu_now + mu_next)
        hazard += d_lambda
        mu_now = mu_next

        # deaths in (t_k, t_{k+1}]
        newly_dead = alive & (exponentials <= hazard[:, None])
        dN = newly_dead.sum(axis=1).astype(float)
        alive &= ~newly_dead
        death_mart += dN - survivors * d_lambda
        compensator += survivors * unit_value * mu_now * dt
        jump_sum += dN * unit_value

        # mark to market at the new state
        basis_p = gen_p.basis_values(z)
        basis_pq = gen_pq.basis_values(z)
        basis_pqg = gen_pqg.basis_values(z)
        qv = model.q(z)
        S_next = assets(k + 1, basis_p, basis_pq)
        step_gain = ((S_next - S_now) * delta).sum(axis=1)
        gain_total += step_gain

        survivors_next = alive.sum(axis=1).astype(float)
        V_next = book_value(k + 1, survivors_next, basis_pqg, qv)

        died_here = dN > 0
        if died_here.any():
            jump_events += int(died_here.sum())
            realized = (V_next - V_now - step_gain)[died_here]
            predicted = (-dN * unit_value)[died_here]
            jump_abs_res += float(np.abs(realized - predicted).sum())
            jump_abs_size += float(np.abs(predicted).sum())

        S_now, V_now, survivors = S_next, V_next, survivors_next

    pos = stored_pos[n_steps]
    mean_delta[pos] = delta.mean(axis=0)
    mean_value[pos] = V_now.mean()
    mean_cost[pos] = (V_now - gain_total).mean()

    # settlement: benchmarked terminal payment per surviving policy
    A_T = survivors * disc1 * model.p(z) * payoff(z)
    terminal_error = A_T - V0 - gain_total
    unhedged_error = A_T - V0
    cost_residual = (A_T - gain_total - V0) - compensator + jump_sum

    prod = (gain_total - gain_total.mean()) * (death_mart - death_mart.mean())
    gkw_cov = float(prod.mean())
    gkw_se = float(prod.std(ddof=1) / math.sqrt(n_paths))

    return HedgeReport(
        times=np.array([k * dt for k in stored]),
        mean_delta=mean_delta,
        mean_value=mean_value,
        mean_cost=mean_cost,
        initial_value=V0,
        terminal_error=terminal_error,
        unhedged_error=unhedged_error,
        cost_residual=cost_residual,
        death_counts=(n - alive.sum(axis=1)).astype(float),
        jump_events=jump_events,
        jump_abs_residual_mean=jump_abs_res / jump_events if jump_events else 0.0,
        jump_abs_size_mean=jump_abs_size / jump_events if jump_events else 0.0,
        gkw_covariance=gkw_cov,
        gkw_covariance_se=gkw_se,
        worst_condition=worst_condition,
        least_squares_fraction=lsq_steps / solve_steps if solve_steps else 0.0,
        clipped_fraction=stepper.clipped / (n_steps * n_paths * m1),
        negative_mu_steps=negative_mu,
        n_paths=n_paths,
        dt=dt,
        seed=seed,
    )


def _solve_theta_batch(theta: np.ndarray, target: np.ndarray, sv_cutoff: float
                       ) -> tuple[np.ndarray, float, int]:
    """Batched theta solve over paths; returns (phi, worst condition, lsq count)."""
    n_paths, m1, _ = theta.shape
    if m1 == 1:
        # one noise source: consistent 1 x 2 system, minimal-norm solution
        row = theta[:, 0, :]
        gram = (row ** 2).sum(axis=1)
        safe = gram > (sv_cutoff * np.abs(row).max(initial=0.0)) ** 2
        coef = np.where(safe, target[:, 0] / np.where(safe, gram, 1.0), 0.0)
        return row * coef[:, None], np.inf, n_paths
    if m1 == 2:
        det = theta[:, 0, 0] * theta[:, 1, 1] - theta[:, 0, 1] * theta[:, 1, 0]
        scale = np.abs(theta).reshape(n_paths, -1).max(axis=1)
        ok = np.abs(det) > (sv_cutoff * np.maximum(scale, 1e-300)) ** 2
        phi = np.empty((n_paths, 2))
        safe_det = np.where(ok, det, 1.0)
        phi[:, 0] = (target[:, 0] * theta[:, 1, 1] - theta[:, 0, 1] * target[:, 1]) / safe_det
        phi[:, 1] = (theta[:, 0, 0] * target[:, 1] - target[:, 0] * theta[:, 1, 0]) / safe_det
        # condition number from the 2x2 Gram spectrum
        g00 = (theta[:, :, 0] ** 2).sum(axis=1)
        g11 = (theta[:, :, 1] ** 2).sum(axis=1)
        g01 = (theta[:, :, 0] * theta[:, :, 1]).sum(axis=1)
        tr, dd = g00 + g11, g00 * g11 - g01 ** 2
        disc = np.sqrt(np.maximum(tr * tr - 4 * dd, 0.0))
        s_hi = np.sqrt(np.maximum((tr + disc) / 2, 0.0))
        s_lo = np.sqrt(np.maximum((tr - disc) / 2, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            conds = np.where(s_lo > 0, s_hi / s_lo, np.inf)
        n_lsq = 0
        if not ok.all():
            for i in np.nonzero(~ok)[0]:
                phi[i] = np.linalg.lstsq(theta[i], target[i], rcond=sv_cutoff)[0]
            n_lsq = int((~ok).sum())
        finite = conds[ok]
        worst = float(finite.max()) if finite.size else np.inf
        return phi, worst, n_lsq
    phi = np.empty((n_paths, 2))
    for i in range(n_paths):
        phi[i] = np.linalg.lstsq(theta[i], target[i], rcond=sv_cutoff)[0]
    return phi, np.inf, n_paths
