import numpy as np
import pytest

from hdivlbb import modal, norms
from hdivlbb.polyalg import gauss_rule


def _edge_coeffs(f, k):
    r = modal.edge_rule(k + 2)
    return modal.legendre01_project(f(r.nodes), r, k)


def test_h12semi_constant_and_linear():
    G = norms.gram_edge(3, "H12semi")
    c = _edge_coeffs(lambda s: np.ones_like(s), 3)
    assert norms.norm_value(c, G) == pytest.approx(0.0, abs=1e-13)
    c = _edge_coeffs(lambda s: s, 3)
    assert norms.norm_value(c, G) ** 2 == pytest.approx(1.0, abs=1e-13)


def test_weighted_zero_star_bubble():
    G = norms.gram_edge(2, "L2_weighted0star")
    # bubble01 basis at k = 2 is x(1-x) L_0
    assert G.entries[0, 0] == pytest.approx(1 / 6, abs=1e-15)


def test_divergent_norm_rejected():
    with pytest.raises(ValueError):
        norms.gram_edge(4, "H12star", basis="legendre01")


def test_triangle_grams():
    assert norms.gram_triangle(0, "L2", "monomial").entries[0, 0] == pytest.approx(0.5)
    assert norms.gram_triangle(0, "H1semi", "monomial").entries[0, 0] == 0.0
    G = norms.gram_triangle(1, "L2", "monomial")
    i = modal.monomial_index(1).index((1, 0))
    assert G.entries[i, i] == pytest.approx(1 / 12)


@pytest.mark.parametrize("k", [1, 4, 8, 16, 32])
def test_grams_symmetric_psd(k):
    for kind in norms.EDGE_KINDS:
        assert norms.gram_edge(k, kind).is_psd()
    for kind in norms.TRIANGLE_KINDS:
        assert norms.gram_triangle(k, kind).is_psd()
    assert norms.gram_dg_ref(k).is_psd()


def test_h12star_dominates_semi():
    for k in (4, 8, 16):
        star = norms.gram_edge(k, "H12star").entries
        semi = norms.gram_edge(k, "H12semi", basis="bubble01").entries
        ev = np.linalg.eigvalsh(star - semi)
        assert ev.min() >= -1e-10 * max(ev.max(), 1.0)


def test_dg_ref_examples():
    k = 3
    N = modal.dim_p(k)
    c = np.zeros(2 * N)
    c[0] = 1.0 / np.sqrt(2.0)  # vx = 1, the constant Dubiner mode is sqrt 2
    G = norms.gram_dg_ref(k)
    # tangential components of (1, 0): 1 on E1, 1/sqrt2 on E2 (length sqrt2), 0 on E3
    assert c @ G.entries @ c == pytest.approx(k * k * (1.0 + 0.5 * np.sqrt(2.0)), rel=1e-13)
    e1 = norms.dg_edge_part(k, weight=1.0)
    assert np.allclose(norms.dg_edge_part(k, weight=4.0), 4 * e1)


def test_dg_ref_zero_trace_field_is_h1():
    k = 4
    r = modal.tri_rule_for(2 * k + 2)
    b = r.x * r.y * (1 - r.x - r.y)
    cx = modal.dubiner_project(b * r.x, k, r)
    cy = modal.dubiner_project(b, k, r)
    c = np.concatenate([cx, cy])
    H1 = norms.gram_triangle(k, "H1semi").entries
    assert c @ norms.gram_dg_ref(k).entries @ c == pytest.approx(cx @ H1 @ cx + cy @ H1 @ cy, rel=1e-12)


def test_norm_value_against_quadrature(rng):
    k = 6
    c = rng.standard_normal(k + 1)
    G = norms.gram_edge(k, "H1semi")
    r = gauss_rule(20, "unit", (0.0, 1.0))
    _, dL = modal.legendre01(k, r.nodes, deriv=True)
    assert norms.norm_value(c, G) ** 2 == pytest.approx(r.integrate((c @ dL) ** 2), rel=1e-10)
    assert norms.norm_value(np.zeros(k + 1), G) == 0.0
    with pytest.raises(ValueError):
        norms.norm_value(np.zeros(3), G)


def test_interpolation_constant_recorded():
    ratios = []
    for k in (4, 8, 16, 32):
        star = norms.gram_edge(k, "H12star").entries
        l2 = norms.gram_edge(k, "L2", basis="bubble01").entries
        h1 = norms.gram_edge(k, "H1semi", basis="bubble01").entries + l2
        # largest ratio ||u||_{1/2*}^2 / (||u||_0 ||u||_1) sampled over eigenvectors of the pencil
        w, V = np.linalg.eigh(star)
        r = [np.sqrt(v @ star @ v) / np.sqrt(np.sqrt(v @ l2 @ v) * np.sqrt(v @ h1 @ v)) for v in V.T]
        ratios.append(max(r))
    assert max(ratios) / min(ratios) < 3.0
