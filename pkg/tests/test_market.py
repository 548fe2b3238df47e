import math

import numpy as np
import pytest

from polylife.generator import DiffusionSpec
from polylife.market import MarketModel, ModelError, calibrate_levels
from polylife.models import CALIBRATED, two_factor_market
from polylife.polynomials import Polynomial


PSI, B, SIG = CALIBRATED["psi"], CALIBRATED["b"], CALIBRATED["sigma"]
RHO, C = CALIBRATED["p0"], CALIBRATED["p1"]
DELTA, NU = CALIBRATED["q0"], CALIBRATED["q1"]


@pytest.fixture(scope="module")
def flat_market():
    """p = q = 1: bonds are trivial, rate and intensity collapse to the levels."""
    model, _ = two_factor_market(PSI, B, SIG, CALIBRATED["d"], CALIBRATED["kappa"],
                                 CALIBRATED["eta"], p0=1.0, p1=0.0, q0=1.0, q1=0.0,
                                 alpha=0.0, gamma=0.0)
    return model


class TestBenchmarkInverse:
    def test_initial_value_is_intercept(self, cal_market, z0):
        assert cal_market.benchmark_inverse(0.0, z0) == pytest.approx(RHO, abs=1e-15)

    def test_flat_model_is_one(self, flat_market):
        z = np.array(flat_market.spec.z0)
        for t in (0.0, 0.7, 3.0):
            assert flat_market.benchmark_inverse(t, z) == 1.0

    def test_level_discounting(self, cal_market, z0):
        # arithmetic from the level table: 0.01 * exp(-alpha)
        got = cal_market.benchmark_inverse(1.0, z0)
        assert got == pytest.approx(0.01 * math.exp(-cal_market.alpha), rel=1e-12)
        assert got == pytest.approx(9.986e-5, rel=1e-3)

    def test_rejects_point_off_state_space(self, cal_market):
        with pytest.raises(ModelError):
            cal_market.benchmark_inverse(0.0, np.array([1.5, 0.0]))


class TestOisBond:
    def test_pull_to_par(self, cal_market, z0):
        assert cal_market.ois_bond(1.0, 1.0, z0) == pytest.approx(1.0, abs=1e-12)
        assert cal_market.ois_bond(0.3, 0.3, np.array([0.5, 100.0])) == pytest.approx(1.0, abs=1e-12)

    def test_flat_model_bond_is_one(self, flat_market):
        z = np.array(flat_market.spec.z0)
        assert flat_market.ois_bond(0.2, 1.7, z) == pytest.approx(1.0, abs=1e-12)

    def test_closed_form(self, cal_market):
        # direct evaluation of the affine bond formula
        #   P(t,T) = [(p0 + p1 b) e^{-a(T-t)} + p1 e^{-(a+psi)(T-t)} (x - b)] / (p0 + p1 x)
        a = cal_market.alpha
        for x, h in ((0.0, 1.0), (-0.5, 0.25), (0.8, 2.0)):
            z = np.array([x, 0.0])
            expected = ((RHO + C * B) * math.exp(-a * h)
                        + C * math.exp(-(a + PSI) * h) * (x - B)) / (RHO + C * x)
            assert cal_market.ois_bond(0.0, h, z) == pytest.approx(expected, rel=1e-12)

    def test_positive_and_bounded(self, cal_market, cal_report):
        rng = np.random.default_rng(2)
        spread = cal_report.alpha_high - cal_report.alpha_low
        for _ in range(50):
            x = rng.uniform(-1, 1)
            t = rng.uniform(0, 1)
            T = t + rng.uniform(0, 1)
            val = cal_market.ois_bond(t, T, np.array([x, 0.0]))
            assert 0.0 < val <= math.exp(spread * (T - t)) * (1 + 1e-12)

    def test_t_after_T_rejected(self, cal_market, z0):
        with pytest.raises(ValueError):
            cal_market.ois_bond(1.0, 0.5, z0)


class TestShortRate:
    def test_flat_model_rate_is_alpha(self, flat_market):
        z = np.array(flat_market.spec.z0)
        assert flat_market.short_rate(z) == pytest.approx(0.0, abs=1e-15)

    def test_calibrated_value_at_origin(self, cal_market, z0):
        # alpha - p1 psi (b - 0) / p0, which is about 11.756
        expected = cal_market.alpha - C * PSI * B / RHO
        got = cal_market.short_rate(z0)
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(11.756, abs=2e-3)

    def test_nonnegative_on_grid_and_zero_at_argmax(self, cal_market):
        xs = np.linspace(-1, 1, 100_000)
        pts = np.stack([xs, np.zeros_like(xs)], axis=-1)
        rates = cal_market.short_rate(pts)
        assert rates.min() >= -1e-8
        # the level bound is attained at the left edge of the X box
        assert rates[0] == pytest.approx(0.0, abs=1e-9)

    def test_consistent_with_bond_yield(self, cal_market, z0):
        # r = -d/dT log P(t,T) at T = t, via a small finite difference
        h = 1e-6
        approx = -(math.log(cal_market.ois_bond(0.0, h, z0))) / h
        assert approx == pytest.approx(cal_market.short_rate(z0), rel=1e-4)


class TestLongevityIndex:
    def test_initial_value(self, cal_market, z0):
        assert cal_market.longevity_index(0.0, z0) == pytest.approx(DELTA, abs=1e-15)

    def test_flat_model(self, flat_market):
        z = np.array(flat_market.spec.z0)
        assert flat_market.longevity_index(2.0, z) == 1.0

    def test_level_decay(self, cal_market, z0):
        got = cal_market.longevity_index(1.0, z0)
        assert got == pytest.approx(DELTA * math.exp(-CALIBRATED["gamma"]), rel=1e-12)
        assert got == pytest.approx(0.99346, abs=1e-5)

    def test_accepts_y_only_point(self, cal_market):
        got = cal_market.longevity_index(0.5, np.array([3.0]))
        want = math.exp(-cal_market.gamma * 0.5) * (DELTA + NU * 3.0)
        assert got == pytest.approx(want, rel=1e-12)


class TestMortalityIntensity:
    def test_flat_model_is_gamma(self, flat_market):
        z = np.array(flat_market.spec.z0)
        assert flat_market.mortality_intensity(z) == pytest.approx(0.0, abs=1e-15)

    def test_calibrated_value_at_origin(self, cal_market, z0):
        # gamma - nu (d b + kappa eta) / delta at the origin, about 0.01583
        cc = CALIBRATED
        drift0 = cc["d"] * cc["b"] + cc["kappa"] * cc["eta"]
        expected = cc["gamma"] - cc["q1"] * drift0 / cc["q0"]
        got = cal_market.mortality_intensity(z0)
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(0.01583, abs=2e-5)

    def test_nonnegative_on_working_box(self, cal_market):
        rng = np.random.default_rng(9)
        lo, hi = cal_market.spec.box_lo, cal_market.spec.box_hi
        pts = np.stack([rng.uniform(lo[k], hi[k], size=4000) for k in range(2)], axis=-1)
        assert np.min(cal_market.mortality_intensity(pts)) >= 0.0


class TestLongevityBond:
    def test_pays_index_at_maturity(self, cal_market):
        for T, y in ((1.0, 0.0), (0.6, 40.0)):
            z = np.array([0.1, y])
            got = cal_market.longevity_bond(T, T, z)
            assert got == pytest.approx(cal_market.longevity_index(T, z), abs=1e-12)

    def test_reduces_to_ois_bond_for_flat_index(self, flat_market):
        z = np.array(flat_market.spec.z0)
        for t, T in ((0.0, 1.0), (0.25, 0.5)):
            assert flat_market.longevity_bond(t, T, z) == pytest.approx(
                flat_market.ois_bond(t, T, z), abs=1e-13)

    def test_positive_on_reachable_states(self, cal_market):
        # y is sampled inside the reachable envelope at time t, so that the
        # remaining propagation to T stays within the working box
        from polylife.models import y_envelope

        cc = CALIBRATED
        u0 = cc["d"] * cc["b"] + cc["kappa"] * cc["eta"]
        rng = np.random.default_rng(12)
        for _ in range(30):
            x = rng.uniform(-1, 1)
            t = rng.uniform(0.01, 1)
            T = t + rng.uniform(0, 1 - t)
            _, y_hi = y_envelope(u0 - abs(cc["d"]), u0 + abs(cc["d"]),
                                 -cc["kappa"], 0.0, t, pad=0.0)
            y = rng.uniform(0, y_hi)
            assert cal_market.longevity_bond(t, T, np.array([x, y])) > 0.0


class TestCalibrateLevels:
    def test_alpha_matches_published_value(self, cal_market):
        assert cal_market.alpha == pytest.approx(4.6068, abs=5e-3)

    def test_alpha_closed_form(self, cal_report):
        # the rational bound is attained at x = -1: p1 psi (b + 1) / (p0 - p1)
        exact = C * PSI * (B + 1.0) / (RHO - C)
        assert cal_report.alpha_high == pytest.approx(exact, rel=1e-9)

    def test_flat_p_gives_zero_alpha(self):
        model, report = two_factor_market(PSI, B, SIG, CALIBRATED["d"],
                                          CALIBRATED["kappa"], CALIBRATED["eta"],
                                          p0=1.0, p1=0.0, q0=DELTA, q1=NU)
        assert report.alpha_high == pytest.approx(0.0, abs=1e-12)
        assert model.alpha == pytest.approx(0.0, abs=1e-12)

    def test_flat_q_gives_zero_gamma(self):
        model, report = two_factor_market(PSI, B, SIG, CALIBRATED["d"],
                                          CALIBRATED["kappa"], CALIBRATED["eta"],
                                          p0=RHO, p1=C, q0=1.0, q1=0.0)
        assert report.gamma_high == pytest.approx(0.0, abs=1e-12)

    def test_gamma_override_recorded(self, cal_report):
        assert CALIBRATED["gamma"] > cal_report.gamma_high
        assert any("gamma override" in note for note in cal_report.notes)

    def test_q_must_not_load_on_x(self, cal_market):
        q_bad = Polynomial.affine(2, 1.0, [0.5, 0.0])
        with pytest.raises(ValueError):
            MarketModel(cal_market.spec, cal_market.p, q_bad, 0.0, 0.0)

    def test_p_must_be_positive_on_box(self, cal_market):
        p_bad = Polynomial.affine(2, 0.001, [0.006, 0.0])  # negative at x = -1
        with pytest.raises(ValueError):
            MarketModel(cal_market.spec, p_bad, cal_market.q, 0.0, 0.0)
