"""Ring arithmetic: dense exponent grids, jets, majorant series."""

import numpy as np
import numpy.polynomial.chebyshev as C
import pytest
from hypothesis import given, settings, strategies as st

from robustlift.multipoly import (
    MajorantSeries,
    MultiPoly,
    TruncatedPoly,
    ring_chebval,
    shifted_cheb_taylor_bounds,
)

RNG = np.random.default_rng(7)


def random_poly(d: int, deg: int, rng) -> MultiPoly:
    shape = (deg + 1,) * d
    return MultiPoly(rng.standard_normal(shape))


class TestMultiPoly:
    def test_affine_evaluation(self):
        p = MultiPoly.affine(3, np.array([2.0, 0.0, -1.0]), 0.5)
        pts = RNG.standard_normal((40, 3))
        expect = 0.5 + 2.0 * pts[:, 0] - pts[:, 2]
        np.testing.assert_allclose(p(pts), expect, atol=1e-14)

    def test_ring_ops_match_pointwise(self):
        a = random_poly(2, 3, RNG)
        b = random_poly(2, 2, RNG)
        pts = RNG.uniform(-1, 1, size=(60, 2))
        np.testing.assert_allclose((a + b)(pts), a(pts) + b(pts), atol=1e-10)
        np.testing.assert_allclose((a - b)(pts), a(pts) - b(pts), atol=1e-10)
        np.testing.assert_allclose((a * b)(pts), a(pts) * b(pts), rtol=1e-10)
        np.testing.assert_allclose((a ** 3)(pts), a(pts) ** 3, rtol=1e-8)

    def test_substitution_is_composition(self):
        outer = random_poly(2, 2, RNG)
        inner = [random_poly(2, 2, RNG), random_poly(2, 1, RNG)]
        composed = outer.substitute(inner)
        pts = RNG.uniform(-0.7, 0.7, size=(25, 2))
        stage = np.stack([q(pts) for q in inner], axis=-1)
        np.testing.assert_allclose(composed(pts), outer(stage), rtol=1e-9,
                                   atol=1e-9)

    def test_total_degree_and_slices(self):
        v0 = MultiPoly.variable(2, 0)
        v1 = MultiPoly.variable(2, 1)
        p = v0 * v0 * v1 + v1 * 3.0 + 1.0
        assert p.total_degree() == 3
        assert p.degree_slice(3) == {(2, 1): 1.0}
        assert p.degree_slice(1) == {(0, 1): 3.0}
        assert p.degree_slice(0) == {(0, 0): 1.0}
        assert p.degree_slice(2) == {}

    def test_complex_evaluation_supported(self):
        p = random_poly(2, 3, RNG)
        z = RNG.standard_normal((10, 2)) + 1j * RNG.standard_normal((10, 2))
        vals = p(z)
        assert np.iscomplexobj(vals)
        np.testing.assert_allclose(p(np.real(z)), np.real(p(np.real(z))))


class TestTruncatedPoly:
    def test_kept_coefficients_are_exact(self):
        # jet product agrees with the full ring below the cap
        cap = 3
        a = random_poly(2, 2, RNG)
        b = random_poly(2, 2, RNG)
        ja = TruncatedPoly(a.coeffs, cap)
        jb = TruncatedPoly(b.coeffs, cap)
        full = a * b
        jet = ja * jb
        for ell in range(cap + 1):
            assert jet.degree_slice(ell) == pytest.approx(full.degree_slice(ell))

    def test_orders_above_cap_dropped(self):
        x = TruncatedPoly.variable(1, 0, cap=2)
        cube = x * x * x
        assert all(not cube.degree_slice(ell) for ell in range(3))

    def test_constant_term(self):
        j = TruncatedPoly.constant(2, 4.5, cap=3)
        assert j.constant_term() == 4.5


class TestMajorantSeries:
    def test_sum_and_product_majorize(self):
        r = 0.8
        a = MajorantSeries.from_bounds(np.array([0.2, 0.5, 0.1]), r)
        b = MajorantSeries.from_bounds(np.array([0.3, 0.4]), r)
        s = (a + b).bounds()
        assert s[0] == pytest.approx(0.5)
        assert s[1] == pytest.approx(0.9)
        p = (a * b).bounds()
        # convolution of the bound sequences
        assert p[0] == pytest.approx(0.2 * 0.3)
        assert p[1] == pytest.approx(0.2 * 0.4 + 0.5 * 0.3)

    def test_value_at_radius(self):
        a = MajorantSeries.from_bounds(np.array([1.0, 2.0, 4.0]), 0.5)
        assert a.value_at_radius() == pytest.approx(1.0 + 1.0 + 1.0)
        assert a.value(0.25) == pytest.approx(1.0 + 0.5 + 0.25)

    def test_negative_bounds_rejected(self):
        with pytest.raises(ValueError):
            MajorantSeries.from_bounds(np.array([0.1, -0.2]), 0.5)


class TestRingChebval:
    def test_matches_numpy_on_scalars(self):
        coeffs = RNG.standard_normal(7)
        xs = np.linspace(-1, 1, 33)
        np.testing.assert_allclose(ring_chebval(xs, coeffs),
                                   C.chebval(xs, coeffs), atol=1e-12)

    def test_poly_argument_composes(self):
        coeffs = RNG.standard_normal(5)
        arg = MultiPoly.affine(2, np.array([0.3, -0.2]), 0.1)
        composed = ring_chebval(arg, coeffs)
        pts = RNG.uniform(-1, 1, size=(30, 2))
        np.testing.assert_allclose(composed(pts), C.chebval(arg(pts), coeffs),
                                   rtol=1e-10, atol=1e-10)

    @given(st.integers(1, 6))
    @settings(max_examples=20, deadline=None)
    def test_degree_preserved(self, n):
        coeffs = np.zeros(n + 1)
        coeffs[-1] = 1.0
        x = MultiPoly.variable(1, 0)
        assert ring_chebval(x, coeffs).total_degree(tol=1e-9) == n


class TestShiftedTaylorBounds:
    def exact_taylor(self, full_coeffs, halfwidth, z0, kmax):
        # expand P(z0 + s) in s by monomial shift
        mono = C.cheb2poly(full_coeffs)
        # P(x) = sum mono_j (x / halfwidth)^j; shift x = z0 + s
        poly = np.polynomial.polynomial.Polynomial(mono)
        shifted = poly(np.polynomial.polynomial.Polynomial(
            [z0 / halfwidth, 1.0 / halfwidth]))
        out = shifted.coef
        return np.pad(out, (0, max(0, kmax + 1 - len(out))))[: kmax + 1]

    def test_bounds_dominate_exact_coefficients(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            full = rng.standard_normal(9)
            hw = float(rng.uniform(0.5, 3.0))
            z0 = float(rng.uniform(-0.5, 0.5)) * hw
            taus = shifted_cheb_taylor_bounds(full, hw, z0, kmax=8)
            exact = self.exact_taylor(full, hw, z0, kmax=8)
            assert (np.abs(exact) <= taus * (1 + 1e-9) + 1e-12).all()
