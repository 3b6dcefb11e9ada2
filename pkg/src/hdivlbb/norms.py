"""Gram matrices for the edge and triangle norms.

Every norm is a quadratic form ``c^T G c`` on the coefficient vector of a
named polynomial basis, so norms, operator norms and inf-sup constants all
reduce to symmetric (generalized) eigenproblems.

Edge bases live on ``[0, 1]``:

``legendre01``
    ``L_j(2t - 1)`` for ``j = 0..k`` (all of ``P^k``).
``bubble01``
    ``t (1 - t) L_j(2t - 1)`` for ``j = 0..k-2`` (the members of ``P^k``
    vanishing at both endpoints).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy import linalg

from . import modal
from .modal import EDGE_LENGTH, EDGE_NORMAL, EDGE_TANGENT, dim_p
from .polyalg import gauss_rule

EDGE_KINDS = ("L2", "H1semi", "L2_weighted0star", "H12semi", "H12star", "H1star_weighted")
TRIANGLE_KINDS = ("L2", "H1semi", "H1", "H2")
_VANISHING_ONLY = ("L2_weighted0star", "H12star")


@dataclass(frozen=True, eq=False)
class GramMatrix:
    entries: np.ndarray
    basis_tag: str
    kind: str

    def __post_init__(self):
        G = np.asarray(self.entries, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValueError("Gram matrix must be square")
        scale = max(np.abs(G).max(initial=0.0), 1.0)
        asym = np.abs(G - G.T).max(initial=0.0)
        if asym > 1e-12 * scale:
            raise ValueError(f"Gram matrix not symmetric (defect {asym:.2e})")
        G = 0.5 * (G + G.T)
        G.setflags(write=False)
        object.__setattr__(self, "entries", G)

    @property
    def dim(self):
        return self.entries.shape[0]

    def eigvalsh(self):
        return linalg.eigvalsh(self.entries)

    def is_psd(self, rtol=1e-10):
        if self.dim == 0:
            return True
        ev = self.eigvalsh()
        return bool(ev.min() >= -rtol * max(ev.max(), 0.0))

    def restrict(self, Z, tag=None):
        """Gram matrix of the basis ``Z`` (columns are coefficient vectors)."""
        return GramMatrix(Z.T @ self.entries @ Z, tag or f"{self.basis_tag}|sub", self.kind)


def norm_value(coeffs, G):
    c = np.asarray(coeffs, dtype=float)
    if c.shape != (G.dim,):
        raise ValueError(f"dimension mismatch: {c.shape} vs Gram of size {G.dim}")
    return float(np.sqrt(max(c @ G.entries @ c, 0.0)))


# ---------------------------------------------------------------------------
# edges
# ---------------------------------------------------------------------------


def edge_basis_dim(k, basis):
    if basis == "legendre01":
        return k + 1
    if basis == "bubble01":
        return max(k - 1, 0)
    raise ValueError(f"unknown edge basis {basis!r}")


def edge_basis_eval(k, basis, t):
    """Values and ``t``-derivatives of an edge basis, shape ``(dim, npts)``."""
    t = np.asarray(t, dtype=float)
    if basis == "legendre01":
        return modal.legendre01(k, t, deriv=True)
    if basis == "bubble01":
        if k < 2:
            return np.zeros((0,) + t.shape), np.zeros((0,) + t.shape)
        L, dL = modal.legendre01(k - 2, t, deriv=True)
        b = t * (1.0 - t)
        return b * L, (1.0 - 2.0 * t) * L + b * dL
    raise ValueError(f"unknown edge basis {basis!r}")


def edge_divided_differences(k, basis, t, s):
    """``(phi(t) - phi(s)) / (t - s)`` for each basis function, without division.

    ``t`` and ``s`` broadcast against each other; the result has the basis
    index on the first axis.
    """
    t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
    m = k if basis == "legendre01" else k - 2
    if basis not in ("legendre01", "bubble01"):
        raise ValueError(f"unknown edge basis {basis!r}")
    if m < 0:
        return np.zeros((0,) + t.shape)
    Ls = modal.legendre01(m, s)
    dd = np.zeros((m + 1,) + t.shape)
    if m >= 1:
        dd[1] = 2.0
    xt = 2.0 * t - 1.0
    for j in range(1, m):
        dd[j + 1] = ((2 * j + 1) * (xt * dd[j] + 2.0 * Ls[j]) - j * dd[j - 1]) / (j + 1)
    if basis == "legendre01":
        return dd
    bt = t * (1.0 - t)
    return bt * dd + Ls * (1.0 - t - s)


def _edge_rule(k):
    return gauss_rule(k + 2, "unit", (0.0, 1.0))


def gram_edge(k, kind, basis=None):
    """Gram matrix of an edge norm on ``P^k`` (or its vanishing subspace)."""
    if kind not in EDGE_KINDS:
        raise ValueError(f"unknown edge norm {kind!r}")
    if basis is None:
        basis = "bubble01" if kind in _VANISHING_ONLY else "legendre01"
    if kind in _VANISHING_ONLY and basis != "bubble01":
        raise ValueError(f"{kind} diverges unless the basis vanishes at both endpoints")
    tag = f"{basis}:{k}"
    rule = _edge_rule(k)
    if kind == "L2":
        V, _ = edge_basis_eval(k, basis, rule.nodes)
        G = (V * rule.weights) @ V.T
    elif kind == "H1semi":
        _, D = edge_basis_eval(k, basis, rule.nodes)
        G = (D * rule.weights) @ D.T
    elif kind == "H1star_weighted":
        jr = gauss_rule(k + 1, "jacobi(1)", (0.0, 1.0))
        _, D = edge_basis_eval(k, basis, jr.nodes)
        G = (D * jr.weights) @ D.T
    elif kind == "L2_weighted0star":
        G = _weighted0(k, rule)
    elif kind == "H12semi":
        G = _h12semi(k, basis)
    else:
        G = _h12semi(k, basis) + _weighted0(k, rule)
    return GramMatrix(G, tag, kind)


def _weighted0(k, rule):
    # u = x(1-x) L, so u_i u_j / (x(1-x)) = x(1-x) L_i L_j is a polynomial
    if k < 2:
        return np.zeros((0, 0))
    L = modal.legendre01(k - 2, rule.nodes)
    b = rule.nodes * (1.0 - rule.nodes)
    return (L * (b * rule.weights)) @ L.T


def _h12semi(k, basis):
    r = gauss_rule(max(k, 1), "unit", (0.0, 1.0))
    T, S = np.meshgrid(r.nodes, r.nodes, indexing="ij")
    W = np.outer(r.weights, r.weights)
    dd = edge_divided_differences(k, basis, T, S)
    n = dd.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    dd = dd.reshape(n, -1)
    return (dd * W.ravel()) @ dd.T


# ---------------------------------------------------------------------------
# triangle
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _dubiner_grams(k):
    N = dim_p(k)
    Dx, Dy = modal.diff_matrices(k)
    L2 = np.eye(N)
    H1s = Dx.T @ Dx + Dy.T @ Dy
    Dxx, Dxy, Dyy = Dx @ Dx, Dx @ Dy, Dy @ Dy
    H2s = Dxx.T @ Dxx + 2.0 * Dxy.T @ Dxy + Dyy.T @ Dyy
    return {"L2": L2, "H1semi": H1s, "H1": L2 + H1s, "H2": L2 + H1s + H2s}


def _monomial_grams(k):
    idx = modal.monomial_index(k)

    def integ(a, b):
        if a < 0 or b < 0:
            return 0.0
        return factorial(a) * factorial(b) / factorial(a + b + 2)

    def gram(dx, dy):
        # derivative of x^i y^j: falling factorials times x^(i-dx) y^(j-dy)
        n = len(idx)
        G = np.zeros((n, n))
        for r, (i1, j1) in enumerate(idx):
            f1 = _falling(i1, dx) * _falling(j1, dy)
            if f1 == 0:
                continue
            for c, (i2, j2) in enumerate(idx):
                f2 = _falling(i2, dx) * _falling(j2, dy)
                if f2 == 0:
                    continue
                G[r, c] = f1 * f2 * integ(i1 + i2 - 2 * dx, j1 + j2 - 2 * dy)
        return G

    L2 = gram(0, 0)
    H1s = gram(1, 0) + gram(0, 1)
    H2s = gram(2, 0) + 2.0 * gram(1, 1) + gram(0, 2)
    return {"L2": L2, "H1semi": H1s, "H1": L2 + H1s, "H2": L2 + H1s + H2s}


def _falling(n, m):
    out = 1
    for r in range(m):
        out *= n - r
    return out


def gram_triangle(k, kind, basis="dubiner"):
    """Gram matrix of ``L2``, ``|.|_1``, ``||.||_1`` or ``||.||_2`` on ``P^k(T)``.

    The second-order part sums all second partials, the mixed one twice
    (Frobenius norm of the Hessian).
    """
    if kind not in TRIANGLE_KINDS:
        raise ValueError(f"unknown triangle norm {kind!r}")
    if k > 64:
        raise ValueError("degree exceeds cap 64")
    if basis == "dubiner":
        G = _dubiner_grams(k)[kind]
    elif basis == "monomial":
        G = _monomial_grams(k)[kind]
    else:
        raise ValueError(f"unknown triangle basis {basis!r}")
    return GramMatrix(G, f"{basis}:{k}", kind)


# ---------------------------------------------------------------------------
# reference DG norm
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def tangential_trace_matrices(k):
    """Per edge, the ``L_j(2t-1)`` coefficients of ``v . tau`` from ``(vx, vy)``."""
    out = {}
    for e in (1, 2, 3):
        T = modal.edge_trace_matrix(k, e)
        tau = EDGE_TANGENT[e]
        out[e] = np.hstack([tau[0] * T, tau[1] * T])
    return out


@lru_cache(maxsize=None)
def normal_trace_matrices(k):
    out = {}
    for e in (1, 2, 3):
        T = modal.edge_trace_matrix(k, e)
        n = EDGE_NORMAL[e]
        out[e] = np.hstack([n[0] * T, n[1] * T])
    return out


@lru_cache(maxsize=None)
def zero_normal_basis(k):
    """Orthonormal basis (columns) of ``{v in [P^k]^2 : v . n = 0 on the boundary}``."""
    C = np.vstack([normal_trace_matrices(k)[e] for e in (1, 2, 3)])
    Z = linalg.null_space(C, rcond=1e-10)
    expected = (k + 1) * (k - 1)
    if Z.shape[1] != expected:
        raise RuntimeError(f"zero-normal subspace has dimension {Z.shape[1]}, expected {expected}")
    Z.setflags(write=False)
    return Z


def dg_edge_part(k, weight=None):
    """``weight * sum_E |E| int_E (v . tau)^2`` on ``[P^k]^2`` (weight defaults to k^2)."""
    w = float(k * k) if weight is None else float(weight)
    M = modal.legendre01_mass(k)
    G = np.zeros((2 * dim_p(k), 2 * dim_p(k)))
    for e, Tt in tangential_trace_matrices(k).items():
        G += EDGE_LENGTH[e] * Tt.T @ M @ Tt
    return w * G


def gram_dg_ref(k, subspace="full", weight=None):
    """Reference DG norm ``|v|_1^2 + k^2 sum_E ||v . tau||_E^2`` on ``[P^k]^2``.

    Coefficients are ``(vx, vy)`` stacked in the Dubiner basis; with
    ``subspace="zero_normal"`` the Gram is restricted to
    :func:`zero_normal_basis`.
    """
    H1s = _dubiner_grams(k)["H1semi"]
    G = linalg.block_diag(H1s, H1s) + dg_edge_part(k, weight)
    g = GramMatrix(G, f"vec-dubiner:{k}", "dg")
    if subspace == "full":
        return g
    if subspace == "zero_normal":
        return g.restrict(zero_normal_basis(k), f"vec-dubiner0:{k}")
    raise ValueError(f"unknown subspace {subspace!r}")
