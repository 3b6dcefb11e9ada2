"""Discrete inf-sup (LBB) constants as generalized eigenvalues.

For a velocity Gram matrix ``K`` (the DG norm), a divergence coupling ``B``
(pressure rows, velocity columns) and a pressure mass matrix ``M`` on the
zero-mean pressure space,

    beta^2 = lambda_min(B K^-1 B^T, M).

Constraints (zero normal trace, zero mean) are eliminated with explicit
null-space bases; no penalties are used because they would perturb exactly
the small eigenvalues of interest.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import modal, norms
from .modal import dim_p
from .polyalg import gauss_rule


class InfSupError(RuntimeError):
    """Singular velocity Gram or failed eigensolve."""


@dataclass(frozen=True)
class InfSupResult:
    k: int
    beta: float
    lambda_spectrum_head: tuple
    space_dims: tuple
    shape: str
    seconds: float = 0.0
    variant: str = ""
    extras: dict = field(default_factory=dict)


def schur_eigs(K, B, M=None, count=5):
    """Smallest generalized eigenvalues of ``B K^-1 B^T`` against ``M``.

    ``K`` must be symmetric positive definite; ``M`` defaults to identity.
    Returns the eigenvalues (ascending, at most ``count``) and the
    eigenvector of the smallest one in the pressure coordinates.
    """
    try:
        L = linalg.cholesky(K, lower=True)
    except linalg.LinAlgError as exc:
        raise InfSupError(f"velocity Gram matrix is not positive definite: {exc}") from exc
    X = linalg.solve_triangular(L, B.T, lower=True)
    S = X.T @ X
    S = 0.5 * (S + S.T)
    if M is None:
        w, v = linalg.eigh(S)
    else:
        w, v = linalg.eigh(S, M)
    w = np.maximum(w, 0.0)
    return w[:count], v[:, 0]


def _result(k, eigs, dims, shape, t0, variant="", extras=None):
    return InfSupResult(
        k=k,
        beta=float(np.sqrt(eigs[0])),
        lambda_spectrum_head=tuple(float(e) for e in eigs),
        space_dims=tuple(int(d) for d in dims),
        shape=shape,
        seconds=time.perf_counter() - t0,
        variant=variant,
        extras=extras or {},
    )


# ---------------------------------------------------------------------------
# reference triangle
# ---------------------------------------------------------------------------


def triangle_operators(k, weight=None):
    """``(K, B, Z)`` on the zero-normal-trace subspace of ``[P^k]^2``.

    Pressure coordinates are the Dubiner functions of ``P^{k-1}`` without
    the constant, which is an orthonormal basis of the zero-mean space, so
    the pressure mass matrix is the identity.
    """
    Z = norms.zero_normal_basis(k)
    K = Z.T @ norms.gram_dg_ref(k, weight=weight).entries @ Z
    Dx, Dy = modal.diff_matrices(k)
    n = dim_p(k - 1)
    B = np.hstack([Dx[1:n], Dy[1:n]]) @ Z
    return K, B, Z


def lbb_triangle(k, weight=None):
    if not 1 <= k <= 64:
        raise ValueError("degree out of range")
    t0 = time.perf_counter()
    K, B, _ = triangle_operators(k, weight)
    eigs, _ = schur_eigs(K, B)
    variant = "dg-k2" if weight is None else f"dg-w{weight:g}"
    return _result(k, eigs, (K.shape[0], B.shape[0]), "triangle", t0, variant)


# ---------------------------------------------------------------------------
# reference quadrilateral
# ---------------------------------------------------------------------------


def quadrilateral_operators(k, weight=None, interval=(0.0, 1.0)):
    """Tensor pair ``[Q^k]^2`` (zero normal trace) / ``Q^{k-1}`` with zero mean.

    ``v_x = b_i(x) L_j(y)`` and ``v_y = L_j(x) b_i(y)`` with ``b_i`` the
    endpoint-vanishing edge basis; the DG norm carries ``weight`` (default
    ``k^2``) on the tangential traces of all four sides.
    """
    a, b = interval
    h = b - a
    w = float(k * k) if weight is None else float(weight)
    r = gauss_rule(k + 2, "unit", (0.0, 1.0))
    Bv, dBv = norms.edge_basis_eval(k, "bubble01", r.nodes)
    L, dL = modal.legendre01(k, r.nodes, deriv=True)

    def ip(f, g):
        return (f * r.weights) @ g.T

    # map [0,1] -> [a,b]: mass scales by h, stiffness by 1/h
    Mb, Hb, ML, HL = h * ip(Bv, Bv), ip(dBv, dBv) / h, h * ip(L, L), ip(dL, dL) / h
    e0 = modal.legendre01(k, np.array([0.0]))[:, 0]
    e1 = modal.legendre01(k, np.array([1.0]))[:, 0]
    ends = np.outer(e0, e0) + np.outer(e1, e1)
    Kx = np.kron(Hb, ML) + np.kron(Mb, HL) + w * np.kron(Mb, ends)
    Ky = np.kron(HL, Mb) + np.kron(ML, Hb) + w * np.kron(ends, Mb)
    K = linalg.block_diag(Kx, Ky)
    P = L[:k]
    Pn = P / np.sqrt(np.diag(h * ip(P, P)))[:, None]
    # d/dx over [a,b] scales by 1/h; dx integral by h
    PdB = ip(Pn, dBv)
    PL = h * ip(Pn, L)
    Bx = np.kron(PdB, PL)
    By = np.kron(PL, PdB)
    B = np.hstack([Bx, By])[1:]
    return K, B


def lbb_quadrilateral(k, weight=None, interval=(0.0, 1.0)):
    if not 1 <= k <= 64:
        raise ValueError("degree out of range")
    t0 = time.perf_counter()
    K, B = quadrilateral_operators(k, weight, interval)
    eigs, _ = schur_eigs(K, B)
    wtag = "k2" if weight is None else f"w{weight:g}"
    variant = f"tensor-{wtag}-[{interval[0]:g},{interval[1]:g}]"
    return _result(k, eigs, (K.shape[0], B.shape[0]), "quadrilateral", t0, variant)


def lbb_reference(k, shape="triangle", weight=None):
    """Reference-element inf-sup constant for ``triangle`` or ``quadrilateral``."""
    if not 2 <= k <= 32:
        raise ValueError("k must lie in [2, 32]")
    if shape == "triangle":
        return lbb_triangle(k, weight)
    if shape == "quadrilateral":
        return lbb_quadrilateral(k, weight)
    raise ValueError(f"unknown shape {shape!r}")


def sup_direct(k, q, weight=None):
    """``sup_v b(v, q) / ||v||`` for a pressure coefficient vector ``q``.

    One linear solve: the Riesz representative ``v = K^-1 B^T q`` attains it.
    """
    K, B, _ = triangle_operators(k, weight)
    v = linalg.solve(K, B.T @ q, assume_a="pos")
    return float(np.sqrt(v @ K @ v))


# ---------------------------------------------------------------------------
# coercivity / continuity of the a-form on the reference triangle
# ---------------------------------------------------------------------------


def reference_aform(k, alpha, h=1.0):
    """Matrix of ``a`` (``nu = 1``) on ``[P^k]^2`` for a single element.

    Every edge is a boundary edge: mean = trace, jump = trace.
    """
    N = dim_p(k)
    Dx, Dy = modal.diff_matrices(k)
    M = modal.legendre01_mass(k)
    H1s = norms.gram_triangle(k, "H1semi").entries
    A = linalg.block_diag(H1s, H1s)
    for e in (1, 2, 3):
        T = modal.edge_trace_matrix(k, e)
        tau, n, length = modal.EDGE_TANGENT[e], modal.EDGE_NORMAL[e], modal.EDGE_LENGTH[e]
        Dn = n[0] * Dx + n[1] * Dy
        dn_t = np.hstack([tau[0] * T @ Dn, tau[1] * T @ Dn])
        tr_t = np.hstack([tau[0] * T, tau[1] * T])
        cons = length * tr_t.T @ M @ dn_t
        A -= cons + cons.T
        A += alpha * k * k / h * length * tr_t.T @ M @ tr_t
    assert A.shape == (2 * N, 2 * N)
    return A


def form_constants(k, alpha, shape="triangle"):
    """``(alpha1, alpha3)``: extreme eigenvalues of ``a`` against the DG Gram."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if shape != "triangle":
        raise ValueError("form constants are computed on the reference triangle")
    A = reference_aform(k, alpha)
    G = norms.gram_dg_ref(k).entries
    # the DG norm is a norm on [P^k]^2 only modulo constants with zero
    # tangential trace, which do not exist; G is definite
    w = linalg.eigvalsh(A, G)
    return float(w[-1]), float(w[0])


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------


def lbb_mesh(mesh, k, h=None, weight_scale=1.0):
    """Global inf-sup constant on a mesh with zero boundary normal trace.

    The DG norm uses ``k^2 / h`` on all edges (jumps on interior edges,
    traces on boundary edges); ``h`` defaults to the mesh size.
    """
    from . import femcore

    if k < 1:
        raise ValueError("k must be positive")
    t0 = time.perf_counter()
    vel, pre = femcore.build_spaces(mesh, k)
    hh = mesh.h if h is None else h
    G = femcore.dg_gram(mesh, vel, k, weight=weight_scale * k * k / hh).toarray()
    B = femcore.divergence_matrix(mesh, vel, pre).toarray()
    Mp = femcore.pressure_mass(pre).toarray()
    free = vel.interior_normal_free()
    G = G[np.ix_(free, free)]
    B = B[:, free]
    Y = linalg.null_space(pre.mean_row()[None, :])
    Bq = Y.T @ B
    Mq = Y.T @ Mp @ Y
    eigs, _ = schur_eigs(G, Bq, Mq)
    return _result(k, eigs, (G.shape[0], Bq.shape[0]), "mesh", t0, f"h={hh:.6g}")
