import numpy as np
import pytest
from scipy import linalg, stats

from hdivlbb import femcore, infsup

from oracles import lbb_triangle_oracle


def test_k2_matches_svd_oracle():
    assert infsup.lbb_reference(2).beta == pytest.approx(lbb_triangle_oracle(2), abs=1e-8)


@pytest.mark.parametrize("k", [3, 5, 8])
def test_eigen_value_equals_direct_sup(k):
    K, B, _ = infsup.triangle_operators(k)
    eigs, q = infsup.schur_eigs(K, B)
    beta = np.sqrt(eigs[0])
    assert infsup.sup_direct(k, q) == pytest.approx(beta * np.linalg.norm(q), rel=1e-8)


def test_basis_invariance(rng):
    k = 4
    K, B, _ = infsup.triangle_operators(k)
    beta = np.sqrt(infsup.schur_eigs(K, B)[0][0])
    S = rng.standard_normal((B.shape[0],) * 2) + 3 * np.eye(B.shape[0])
    assert np.sqrt(infsup.schur_eigs(K, S @ B, S @ S.T)[0][0]) == pytest.approx(beta, rel=1e-10)
    Q = stats.ortho_group.rvs(K.shape[0], random_state=7)
    assert np.sqrt(infsup.schur_eigs(Q.T @ K @ Q, B @ Q)[0][0]) == pytest.approx(beta, rel=1e-10)


def test_single_element_mesh_matches_reference():
    for k in (2, 4):
        ref = infsup.lbb_reference(k).beta
        assert infsup.lbb_mesh(femcore.reference_mesh(), k, h=1.0).beta == pytest.approx(ref, abs=1e-8)


def test_mesh_refinement_stability():
    betas = [infsup.lbb_mesh(femcore.square_mesh(n), 2).beta for n in (2, 4, 8)]
    assert min(betas) > 0
    assert max(betas) / min(betas) <= 1.2


@pytest.mark.xfail(strict=True, reason="beta decays in k like the reference-element values (0.677 to 0.525, 29%)")
def test_k_sweep_on_fixed_mesh():
    m = femcore.square_mesh(2)
    betas = [infsup.lbb_mesh(m, k).beta for k in range(2, 7)]
    assert min(betas) > 0
    assert max(betas) / min(betas) <= 1.15


def test_form_constants():
    a1 = {}
    for k in (2, 4, 8, 16):
        a1[k], a3 = infsup.form_constants(k, 4.0)
        assert a3 > 0 and np.isfinite(a1[k])
    assert a1[16] / a1[4] <= 1.5
    _, a3_small = infsup.form_constants(8, 1e-3)
    assert a3_small <= 0
    with pytest.raises(ValueError):
        infsup.form_constants(4, 0.0)


def test_schur_rejects_indefinite():
    with pytest.raises(infsup.InfSupError):
        infsup.schur_eigs(-np.eye(3), np.ones((1, 3)))


def test_reference_input_validation():
    with pytest.raises(ValueError):
        infsup.lbb_reference(1)
    with pytest.raises(ValueError):
        infsup.lbb_reference(4, shape="hexagon")


def test_quadrilateral_reports_variant():
    r = infsup.lbb_reference(4, shape="quadrilateral")
    assert r.beta > 0 and r.variant.startswith("tensor")
