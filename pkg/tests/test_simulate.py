import math

import numpy as np
import pytest

from polylife.generator import build_generator, conditional_expectation
from polylife.models import CALIBRATED, two_factor_market
from polylife.polynomials import Polynomial, enumerate_basis
from polylife.simulate import mc_price, simulate_deaths, simulate_state


PSI, B, SIG = CALIBRATED["psi"], CALIBRATED["b"], CALIBRATED["sigma"]


@pytest.fixture(scope="module")
def cal_bundle(cal_market):
    """Medium-size path set for distributional checks."""
    return simulate_state(cal_market.spec, n_paths=40_000, dt=1e-3, horizon=1.0,
                          seed=101, market=cal_market, store_stride=25)


class TestSimulateState:
    def test_deterministic_given_seed(self, cal_market):
        kw = dict(n_paths=500, dt=2e-3, horizon=0.5, seed=9,
                  market=cal_market, store_stride=10)
        a = simulate_state(cal_market.spec, **kw)
        b = simulate_state(cal_market.spec, **kw)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.hazard, b.hazard)

    def test_x_stays_in_box(self, cal_bundle):
        x = cal_bundle.states[..., 0]
        assert x.min() >= -1.0 and x.max() <= 1.0

    def test_clip_fraction_small(self, cal_bundle):
        assert cal_bundle.clipped_fraction < 0.01

    def test_zero_diffusion_is_exponential_relaxation(self):
        # sigma = 0 turns X into the ODE x' = psi (b - x)
        model, _ = two_factor_market(PSI, B, 0.0, CALIBRATED["d"], CALIBRATED["kappa"],
                                     CALIBRATED["eta"], 0.01, 0.006, 0.998, -0.00044,
                                     alpha=0.0, gamma=0.0)
        dt = 1e-4
        bundle = simulate_state(model.spec, n_paths=3, dt=dt, horizon=0.5, seed=1)
        # forward Euler on x' = psi(b - x) has max error ~ psi/(2e) * dt * |b|
        tol = PSI * dt
        for k, t in enumerate(bundle.times):
            expected = B + math.exp(-PSI * t) * (0.0 - B)
            np.testing.assert_allclose(bundle.states[:, k, 0], expected, atol=tol)

    def test_terminal_mean_matches_relaxation_formula(self, cal_bundle):
        x1 = cal_bundle.states[:, -1, 0]
        expected = B + math.exp(-PSI) * (0.0 - B)
        se = x1.std(ddof=1) / math.sqrt(len(x1))
        assert abs(x1.mean() - expected) < 3 * se

    def test_moment_consistency_degree_three(self, cal_market, cal_bundle):
        # every monomial of degree <= 3 against the moment formula at horizon 1
        zT = cal_bundle.states[:, -1]
        gen = build_generator(cal_market.spec, 3)
        for mono in enumerate_basis(2, 3):
            p = Polynomial.monomial(2, mono)
            samples = p(zT)
            se = samples.std(ddof=1) / math.sqrt(len(samples))
            exact = conditional_expectation(cal_market.spec, p,
                                            np.array(cal_market.spec.z0), 1.0, gen=gen)
            assert abs(samples.mean() - exact) < 3 * max(se, 1e-300), mono

    def test_stationary_variance(self, cal_market):
        # var of X_5 approaches sigma^2 (1 - b^2) / (sigma^2 + 2 psi) ~ 0.018313
        bundle = simulate_state(cal_market.spec, n_paths=20_000, dt=1e-3, horizon=5.0,
                                seed=77, store_stride=5000)
        var = bundle.states[:, -1, 0].var(ddof=1)
        target = SIG**2 * (1 - B * B) / (SIG**2 + 2 * PSI)
        assert var == pytest.approx(target, rel=0.05)

    def test_y_trapezoid_accuracy(self, cal_market):
        # with sigma = 0 the x path is deterministic and y has a closed form
        # via the linear ODE; the implicit trapezoid must track it to O(dt^2)
        model, _ = two_factor_market(PSI, B, 0.0, CALIBRATED["d"], CALIBRATED["kappa"],
                                     CALIBRATED["eta"], 0.01, 0.006, 0.998, -0.00044,
                                     alpha=0.0, gamma=0.0)
        bundle = simulate_state(model.spec, n_paths=1, dt=1e-4, horizon=1.0, seed=3)
        d, kap, eta = CALIBRATED["d"], CALIBRATED["kappa"], CALIBRATED["eta"]
        # y' = u(t) - kap y, u(t) = d(b - x(t)) + kap eta, x(t) = b - b e^{-psi t};
        # solve by quadrature at fine resolution
        ts = np.linspace(0, 1.0, 200_001)
        x = B + np.exp(-PSI * ts) * (0.0 - B)
        u = d * (B - x) + kap * eta
        integrand = u * np.exp(kap * ts)
        Y = np.exp(-kap * 1.0) * np.trapezoid(integrand, ts)
        got = bundle.states[0, -1, 1]
        assert got == pytest.approx(Y, rel=1e-6)


class TestSimulateDeaths:
    def test_zero_intensity_no_deaths(self):
        model, _ = two_factor_market(PSI, B, SIG, CALIBRATED["d"], CALIBRATED["kappa"],
                                     CALIBRATED["eta"], 0.01, 0.006, 1.0, 0.0,
                                     alpha=0.0, gamma=0.0)
        bundle = simulate_state(model.spec, n_paths=200, dt=1e-3, horizon=1.0,
                                seed=5, market=model, store_stride=100)
        taus = simulate_deaths(bundle, n=3, seed=6)
        assert np.isinf(taus).all()

    def test_constant_intensity_exponential_law(self):
        # q = 1 and gamma = c gives mu = c identically
        c = 1.3
        model, _ = two_factor_market(PSI, B, SIG, CALIBRATED["d"], CALIBRATED["kappa"],
                                     CALIBRATED["eta"], 0.01, 0.006, 1.0, 0.0,
                                     alpha=0.0, gamma=c)
        bundle = simulate_state(model.spec, n_paths=20_000, dt=1e-3, horizon=1.0,
                                seed=15, market=model, store_stride=100)
        taus = simulate_deaths(bundle, n=1, seed=16)[:, 0]
        for t in (0.25, 0.5, 1.0):
            frac = (taus > t).mean()
            se = math.sqrt(frac * (1 - frac) / len(taus))
            assert abs(frac - math.exp(-c * t)) < 3 * max(se, 1e-12)

    def test_thinning_identity(self, cal_bundle):
        # P(tau > T) estimated from deaths matches E[exp(-hazard)] pathwise
        taus = simulate_deaths(cal_bundle, n=1, seed=21)[:, 0]
        surv = ((taus > cal_bundle.horizon) | np.isinf(taus)).mean()
        target = np.exp(-cal_bundle.hazard[:, -1]).mean()
        se = math.sqrt(surv * (1 - surv) / len(taus))
        assert abs(surv - target) < 3 * se

    def test_death_times_positive_and_exchangeable(self, cal_bundle):
        from scipy.stats import ks_2samp

        taus = simulate_deaths(cal_bundle, n=2, seed=31)
        finite = taus[np.isfinite(taus)]
        assert (finite > 0).all()
        a = taus[:10_000, 0]
        b = taus[:10_000, 1]
        a = np.where(np.isfinite(a), a, 2.0)  # censor beyond horizon for the KS test
        b = np.where(np.isfinite(b), b, 2.0)
        stat = ks_2samp(a, b).statistic
        critical_1pct = 1.63 * math.sqrt(2 / 10_000.0)
        assert stat < critical_1pct


class TestMcPrice:
    def test_zero_payoff(self, cal_bundle):
        zero = Polynomial.zero(2)
        est, se = mc_price(cal_bundle, "pure_endowment", zero, 1.0, n=1, seed=3)
        assert est == 0.0 and se == 0.0

    def test_too_few_paths_rejected(self, cal_market):
        bundle = simulate_state(cal_market.spec, n_paths=50, dt=1e-2, horizon=1.0,
                                seed=1, market=cal_market, store_stride=10)
        with pytest.raises(ValueError):
            mc_price(bundle, "pure_endowment", Polynomial.zero(2), 1.0)

    def test_annuity_is_sum_of_parts(self, cal_bundle):
        one = Polynomial.constant(2, 1.0)
        deaths = simulate_deaths(cal_bundle, n=1, seed=9)
        pe, _ = mc_price(cal_bundle, "pure_endowment", one, 1.0, deaths=deaths)
        ti, _ = mc_price(cal_bundle, "term_insurance", one, 1.0, deaths=deaths)
        an, _ = mc_price(cal_bundle, "annuity", one, 1.0, deaths=deaths)
        assert an == pytest.approx(pe + ti, rel=1e-12)

    def test_pure_endowment_flat_market_is_survival_bond(self):
        # q = 1, gamma = c: the PE price is exp(-cT) P(0,T) per survivor
        c = 0.8
        model, _ = two_factor_market(PSI, B, SIG, CALIBRATED["d"], CALIBRATED["kappa"],
                                     CALIBRATED["eta"], 0.01, 0.006, 1.0, 0.0,
                                     alpha=0.0, gamma=c)
        bundle = simulate_state(model.spec, n_paths=30_000, dt=1e-3, horizon=1.0,
                                seed=19, market=model, store_stride=100)
        one = Polynomial.constant(2, 1.0)
        est, se = mc_price(bundle, "pure_endowment", one, 1.0, n=1, seed=20)
        target = math.exp(-c) * model.ois_bond(0.0, 1.0, np.array(model.spec.z0))
        assert abs(est - target) < 3 * se
