import math

import numpy as np
import pytest

from polylife.polynomials import (
    Polynomial,
    PolynomialParseError,
    enumerate_basis,
    format_polynomial,
    grlex_key,
    parse_polynomial,
)


def random_poly(rng, dim, degree, n_terms=5):
    terms = {}
    for _ in range(n_terms):
        mono = tuple(int(rng.integers(0, degree + 1)) for _ in range(dim))
        if sum(mono) > degree:
            continue
        terms[mono] = float(rng.normal())
    return Polynomial(dim, terms)


class TestEnumerateBasis:
    def test_univariate(self):
        assert enumerate_basis(1, 2) == [(0,), (1,), (2,)]

    def test_bivariate_degree_one(self):
        assert enumerate_basis(2, 1) == [(0, 0), (1, 0), (0, 1)]

    def test_length_is_binomial(self):
        # oracle: dim Pol_n = C(dim + n, n)
        for dim in (1, 2, 3):
            for n in (0, 1, 2, 4):
                assert len(enumerate_basis(dim, n)) == math.comb(dim + n, n)

    def test_strictly_increasing_in_grlex(self):
        basis = enumerate_basis(3, 4)
        keys = [grlex_key(m) for m in basis]
        assert all(a < b for a, b in zip(keys, keys[1:]))

    def test_absurd_input_rejected(self):
        with pytest.raises(ValueError):
            enumerate_basis(10, 50)


class TestEval:
    def test_constant(self):
        one = Polynomial.constant(3, 1.0)
        assert one((0.3, -2.0, 7.0)) == 1.0

    def test_benchmark_polynomial_at_origin(self):
        p = Polynomial.affine(1, 0.01, [0.006])
        assert p((0.0,)) == 0.01

    def test_index_polynomial(self):
        # direct arithmetic: 0.998 - 0.00044 * 1
        q = Polynomial.affine(1, 0.998, [-0.00044])
        assert q((1.0,)) == pytest.approx(0.99756, abs=1e-15)

    def test_integer_exactness(self):
        p = Polynomial(2, {(3, 1): 2.0, (0, 2): -5.0, (0, 0): 7.0})
        assert p((3.0, 2.0)) == 2 * 27 * 2 - 5 * 4 + 7

    def test_dimension_mismatch(self):
        p = Polynomial.variable(2, 0)
        with pytest.raises(ValueError):
            p((1.0, 2.0, 3.0))

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(7)
        p = random_poly(rng, 2, 3)
        pts = rng.normal(size=(40, 2))
        vals = p(pts)
        for k in range(40):
            assert vals[k] == pytest.approx(p(pts[k]), rel=1e-14)


class TestArithmetic:
    def test_difference_of_squares(self):
        x = Polynomial.variable(1, 0)
        prod = (1.0 + x) * (1.0 - x)
        assert prod.terms == {(0,): 1.0, (2,): -1.0}

    def test_multiply_by_zero(self):
        x = Polynomial.variable(2, 1)
        assert (x * Polynomial.zero(2)).is_zero()

    def test_bilinear_product(self):
        # symbolic expansion: (rho + c x)(delta + nu y)
        rho, c, delta, nu = 0.01, 0.006, 0.998, -0.00044
        p = Polynomial.affine(2, rho, [c, 0.0])
        q = Polynomial.affine(2, delta, [0.0, nu])
        pq = p * q
        assert pq.coefficient((0, 0)) == pytest.approx(rho * delta)
        assert pq.coefficient((1, 0)) == pytest.approx(c * delta)
        assert pq.coefficient((0, 1)) == pytest.approx(rho * nu)
        assert pq.coefficient((1, 1)) == pytest.approx(c * nu)

    def test_degree_adds_under_product(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            a = random_poly(rng, 2, 3)
            b = random_poly(rng, 2, 2)
            if a.is_zero() or b.is_zero():
                continue
            assert (a * b).degree() == a.degree() + b.degree()

    def test_zero_polynomial_degree(self):
        assert Polynomial.zero(2).degree() == 0

    def test_ring_axioms_by_evaluation(self):
        rng = np.random.default_rng(23)
        pts = rng.normal(size=(50, 2))
        for _ in range(10):
            a = random_poly(rng, 2, 3)
            b = random_poly(rng, 2, 3)
            c = random_poly(rng, 2, 2)
            ab, ba = a * b, b * a
            np.testing.assert_allclose(ab(pts), ba(pts), rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(((a * b) * c)(pts), (a * (b * c))(pts),
                                       rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose((a * (b + c))(pts), (a * b + a * c)(pts),
                                       rtol=1e-12, atol=1e-12)

    def test_eval_of_product_is_product_of_evals(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            a = random_poly(rng, 3, 2)
            b = random_poly(rng, 3, 2)
            z = rng.normal(size=3)
            assert (a * b)(z) == pytest.approx(a(z) * b(z), rel=1e-12, abs=1e-12)


class TestGradient:
    def test_square(self):
        x = Polynomial.variable(1, 0)
        (g,) = (x * x).gradient()
        assert g.terms == {(1,): 2.0}

    def test_linear(self):
        q = Polynomial.affine(1, 0.998, [-0.00044])
        (g,) = q.gradient()
        assert g.terms == {(0,): -0.00044}

    def test_cross_term(self):
        xy = Polynomial.monomial(2, (1, 1))
        gx, gy = xy.gradient()
        assert gx.terms == {(0, 1): 1.0}
        assert gy.terms == {(1, 0): 1.0}

    def test_constant_has_zero_gradient(self):
        for g in Polynomial.constant(3, 4.2).gradient():
            assert g.is_zero()

    def test_product_rule_by_evaluation(self):
        rng = np.random.default_rng(41)
        for _ in range(10):
            a = random_poly(rng, 2, 3)
            b = random_poly(rng, 2, 3)
            z = rng.normal(size=2)
            for i in range(2):
                lhs = (a * b).partial(i)(z)
                rhs = a.partial(i)(z) * b(z) + a(z) * b.partial(i)(z)
                assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


class TestTextForm:
    def test_parse_simple(self):
        p = parse_polynomial("0.01 + 0.006 * x1", 1)
        assert p.terms == {(0,): 0.01, (1,): 0.006}

    def test_parse_minus_and_powers(self):
        p = parse_polynomial("1 - 1 * x1^2", 1)
        assert p.terms == {(0,): 1.0, (2,): -1.0}

    def test_parse_implicit_exponent_and_spaces(self):
        p = parse_polynomial("2 x1 x2^2", 2)
        assert p.terms == {(1, 2): 2.0}

    def test_roundtrip(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            p = random_poly(rng, 3, 4)
            back = parse_polynomial(format_polynomial(p), 3) if not p.is_zero() else p
            assert back.terms == p.terms

    def test_bad_token_reported(self):
        with pytest.raises(PolynomialParseError) as err:
            parse_polynomial("0.1 + bogus", 1)
        assert "bogus" in str(err.value)

    def test_out_of_range_variable(self):
        with pytest.raises(PolynomialParseError):
            parse_polynomial("x3", 2)
