from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import integrate

from hdivlbb import polyalg
from hdivlbb.polyalg import Poly1, Poly2

from oracles import adaptive_blend


def test_legendre_zero_is_one():
    assert polyalg.eval_ortho("legendre", 0, 0.3) == pytest.approx(1.0)


@pytest.mark.parametrize("n", range(1, 21))
def test_integrated_jacobi_vanishes_at_one(n):
    assert abs(polyalg.eval_ortho("int_jacobi", n, 1.0)) < 1e-13


def test_integrated_jacobi_matches_defining_integral():
    val, _ = integrate.quad(lambda s: polyalg.eval_ortho("jacobi1", 4, s), 0.7, 1.0, epsabs=0, epsrel=1e-13)
    assert polyalg.eval_ortho("int_jacobi", 5, 0.7) == pytest.approx(-val, abs=1e-12)


def test_ortho_as_poly_small_cases():
    assert polyalg.ortho_as_poly("legendre", 1).allclose(Poly1([0.0, 1.0]))
    assert polyalg.ortho_as_poly("int_legendre", 0).allclose(Poly1([1.0, -1.0]))


def test_jacobi1_against_rodrigues():
    s = sp.symbols("s")
    rod = sp.expand(sp.diff((1 - s) * (s**2 - 1) ** 2, s, 2) / (2**2 * sp.factorial(2) * (1 - s)))
    rod = sp.Poly(sp.cancel(rod), s).all_coeffs()[::-1]
    got = polyalg.ortho_as_poly("jacobi1", 2).coeffs
    assert [Fraction(int(sp.numer(c)), int(sp.denom(c))) for c in rod] == list(got)


@pytest.mark.parametrize("kind", polyalg.ORTHO_KINDS)
def test_recurrence_matches_exact_polynomials(kind):
    xs = np.linspace(-1, 1, 17)
    for n in range(0, 33):
        p = polyalg.ortho_as_poly(kind, n)
        ref = np.array([float(sum(c * Fraction(v).limit_denominator(10**12) ** i for i, c in enumerate(p.coeffs))) for v in xs])
        assert np.allclose(polyalg.eval_ortho(kind, n, xs), ref, atol=1e-12, rtol=1e-12), (kind, n)


def test_weighted_orthogonality_off_diagonal():
    rule = polyalg.gauss_rule(40, "jacobi(1)")
    D = np.array([polyalg.eval_ortho("int_jacobi", n, rule.nodes, deriv=1) for n in range(1, 33)])
    G = (D * rule.weights) @ D.T
    off = G - np.diag(np.diag(G))
    assert np.abs(off).max() <= 1e-12
    # the diagonal is 2/n, recorded here rather than the printed 2/(n+1)
    assert np.allclose(np.diag(G), 2.0 / np.arange(1, 33), rtol=1e-12)


def test_gauss_rules():
    r = polyalg.gauss_rule(2, "unit", (0.0, 1.0))
    assert r.integrate(r.nodes**3) == pytest.approx(0.25, abs=1e-15)
    r = polyalg.gauss_rule(5, "jacobi(1)")
    assert r.integrate(np.ones(5)) == pytest.approx(2.0, abs=1e-14)
    r = polyalg.gauss_rule(8, "unit", (0.0, 1.0))
    assert r.integrate(r.nodes**15) == pytest.approx(1 / 16, abs=1e-14)


def test_triangle_rule_monomials():
    r = polyalg.triangle_rule(1)
    assert r.integrate(np.ones(len(r.weights))) == pytest.approx(0.5, abs=1e-15)
    r = polyalg.triangle_rule(4)
    assert r.integrate(r.x**2 * r.y) == pytest.approx(1 / 60, abs=1e-15)
    r = polyalg.triangle_rule(64)
    for i in range(0, 33, 4):
        for j in range(0, 33 - i, 5):
            exact = polyalg.monomial_integral(i, j)
            assert abs(r.integrate(r.x**i * r.y**j) - exact) <= 1e-13 * exact


def test_blend_integral_examples():
    p = polyalg.blend_integral(Poly1([0.0, 1.0]), (0, 1, 0), (0, 0, 1))
    assert p.allclose(Poly2.affine(0.0, 1.0, 0.5))
    assert p(0.3, 0.4) == pytest.approx(0.3 + 0.2)
    q = polyalg.blend_integral(Poly1([0.0, 0.0, 0.5]), (0, 1, 0), (0, 0, 1))
    for px, py in ((0.1, 0.2), (0.5, 0.3)):
        assert q(px, py) == pytest.approx((px**2 + px * py + py**2 / 3) / 2, abs=1e-15)
    r = polyalg.blend_integral(Poly1([0.0, 1.0, -1.0]), (0, 0, 0), (0, 1, 1), Poly1([0.0, 6.0, -6.0]))
    assert r(0.0, 1.0) == pytest.approx(0.2, abs=1e-15)


def test_blend_integral_against_adaptive_quadrature(rng):
    for _ in range(3):
        f = Poly1(rng.uniform(-1, 1, 21) / np.arange(1, 22))
        w = Poly1(rng.uniform(-1, 1, 3))
        a = tuple(rng.uniform(-0.5, 0.5, 3))
        b = tuple(rng.uniform(-0.5, 0.5, 3))
        P = polyalg.blend_integral(f, a, b, w)
        for _ in range(50):
            px, py = rng.uniform(0, 1, 2)
            if px + py > 1:
                px, py = 1 - px, 1 - py
            ref = adaptive_blend(f, a, b, w, px, py)
            assert abs(P(px, py) - ref) <= 1e-11 * max(1.0, abs(ref))


def test_deflate_roots():
    u = Poly1([0.0, 0.0, 1.0, -2.0, 1.0])  # x^2 (1-x)^2
    assert polyalg.deflate_roots(u, 1.0, 2).allclose(Poly1([0.0, 0.0, 1.0]))
    v = Poly1([2.0, -1.0, -4.0, 3.0])  # (1-x)^2 (3x+2)
    assert polyalg.deflate_roots(v, 1.0, 2).allclose(Poly1([2.0, 3.0]))
    with pytest.raises(ValueError):
        polyalg.deflate_roots(Poly1([0.0, 1.0]), 0.0, 2)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=8), st.floats(-1, 1), st.integers(1, 3))
def test_deflate_roots_round_trip(q, root, m):
    assume(abs(q[-1]) > 1e-3)
    qp = Poly1(q)
    u = qp
    for _ in range(m):
        u = u * Poly1([-root, 1.0])
    back = polyalg.deflate_roots(u, root, m)
    scale = max(1.0, float(np.abs(np.asarray(q, float)).max()))
    assert back.allclose(qp, atol=1e-11 * scale)


def test_calculus_identities(rng):
    c = Poly2.constant(3.0)
    gx, gy = polyalg.curl(c)
    assert gx.allclose(Poly2.constant(0.0)) and gy.allclose(Poly2.constant(0.0))
    for deg in (3, 7, 10):
        phi = Poly2(rng.uniform(-1, 1, (deg + 1, deg + 1)) * np.tri(deg + 1)[::-1], deg)
        vx, vy = polyalg.curl(phi)
        assert polyalg.div(vx, vy).allclose(Poly2.constant(0.0), atol=1e-12)
    p = Poly2.x() + Poly2.y() * 0.5
    assert polyalg.edge_trace(p, 1).allclose(Poly1([0.0, 1.0]))
