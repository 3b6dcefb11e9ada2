"""Polynomial-preserving H^2 extension operators on the reference triangle.

Inputs and outputs live in modal bases: edge functions as coefficients of
``L_j(2t - 1)`` on the edge parameter ``t in [0, 1]`` (see
:data:`hdivlbb.polyalg.EDGE_PARAM`), triangle functions as Dubiner
coefficients.  Every stage is assembled once per degree as a matrix by exact
quadrature at degree ``k + 3`` and the coefficients beyond ``k + 1`` are kept
as a certificate that the result really is a polynomial of degree ``k + 1``.

Rational blending factors are never evaluated.  Divisions by vanishing
factors such as ``(1 - t)^2`` are carried out by Jacobi-weighted projection,
which is exact when the factor divides and well conditioned at any degree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg
from numpy.polynomial import polynomial as npoly
from scipy import linalg

from . import modal, norms
from .modal import EDGE_LENGTH, TriPoly, dim_p, edge_trace_matrix, legendre01
from .polyalg import Poly1, gauss_rule, jacobi_table

SQRT2 = np.sqrt(2.0)
OPNAMES = ("etau", "enorm", "extend_h2", "mismatch_normal")


class PreconditionError(ValueError):
    """Input outside the domain of an extension operator."""


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TangentialField:
    """Vector field in ``[P^k]^2`` as Dubiner coefficients ``(cx, cy)``."""

    cx: np.ndarray
    cy: np.ndarray
    k: int

    def __post_init__(self):
        n = dim_p(self.k)
        for c in (self.cx, self.cy):
            if np.shape(c) != (n,):
                raise ValueError(f"expected {n} coefficients per component")

    @classmethod
    def from_vector(cls, c, k):
        c = np.asarray(c, float)
        n = dim_p(k)
        return cls(c[:n].copy(), c[n:].copy(), k)

    @classmethod
    def from_functions(cls, fx, fy, k):
        return cls(TriPoly.from_function(fx, k).coeffs, TriPoly.from_function(fy, k).coeffs, k)

    @classmethod
    def from_poly2(cls, px, py, k=None):
        k = max(px.degree, py.degree) if k is None else k
        return cls(TriPoly.from_poly2(px, k).coeffs, TriPoly.from_poly2(py, k).coeffs, k)

    @property
    def vector(self):
        return np.concatenate([self.cx, self.cy])

    def scale(self):
        return max(float(np.abs(self.vector).max(initial=0.0)), 1.0)

    def circulation(self):
        return float(circulation_row(self.k) @ self.vector)

    def tangential_traces(self):
        """``{edge: L_j coefficients of u . tau}``."""
        return {e: tangential_trace(self.k, e) @ self.vector for e in (1, 2, 3)}

    def normal_traces(self):
        return {e: normal_trace(self.k, e) @ self.vector for e in (1, 2, 3)}

    def require_circulation_free(self, tol=1e-11):
        c = self.circulation()
        if abs(c) > tol * self.scale():
            raise PreconditionError(f"boundary circulation {c:.3e} is not zero")


@dataclass(frozen=True, eq=False)
class LinearOpMatrix:
    matrix: np.ndarray
    in_basis_tag: str
    out_basis_tag: str
    degree_excess: float = 0.0

    def __matmul__(self, c):
        return self.matrix @ c

    @property
    def shape(self):
        return self.matrix.shape


@dataclass(frozen=True, eq=False)
class EdgeBubble:
    """``e1`` with ``e1'(1) = 1`` and ``e1(0) = e1(1) = e1'(0) = 0``; ``e0`` mirrored.

    Coefficients are in ``L_j(2t - 1)``, degree ``k + 2``; ``etilde`` holds
    the Legendre coefficients of the minimizer on ``[-1, 1]`` (degree ``k``).
    """

    e0: np.ndarray
    e1: np.ndarray
    k: int
    mode: str
    etilde: np.ndarray = field(repr=False, default=None)

    @property
    def degree(self):
        return self.k + 2

    def __call__(self, which, t, deriv=False):
        c = self.e1 if which == 1 else self.e0
        L = legendre01(self.degree, np.asarray(t, float), deriv=deriv)
        return c @ L[1] if deriv else c @ L

    def poly(self, which=1):
        """Monomial :class:`Poly1` in ``t`` (for inspection at small degree)."""
        c = self.e1 if which == 1 else self.e0
        return _leg01_to_poly1(c)


# ---------------------------------------------------------------------------
# edge helpers
# ---------------------------------------------------------------------------


def _leg01_to_poly1(c):
    series = np.polynomial.Legendre(np.asarray(c, float), domain=[0.0, 1.0])
    mono = series.convert(kind=np.polynomial.Polynomial, domain=[-1.0, 1.0], window=[-1.0, 1.0])
    return Poly1(mono.coef)


def edge_coeffs(u, n=None):
    """``L_j(2t - 1)`` coefficients of a :class:`Poly1` or coefficient array."""
    if isinstance(u, Poly1):
        deg = max(u.degree, 0)
        n = deg if n is None else n
        if deg > n:
            raise ValueError("polynomial degree exceeds target")
        r = modal.edge_rule(n + 1)
        coef = np.asarray(u.to_float().coeffs, float)
        vals = np.polynomial.polynomial.polyval(r.nodes, coef)
        return modal.legendre01_project(vals, r, n)
    c = np.asarray(u, float)
    if n is None or len(c) == n + 1:
        return c
    if len(c) > n + 1:
        if np.abs(c[n + 1 :]).max() > 1e-12 * max(np.abs(c).max(), 1.0):
            raise ValueError("coefficients exceed target degree")
        return c[: n + 1].copy()
    out = np.zeros(n + 1)
    out[: len(c)] = c
    return out


def edge_eval(c, t, deriv=False):
    c = np.asarray(c, float)
    L = legendre01(len(c) - 1, np.asarray(t, float), deriv=deriv)
    return c @ L[1] if deriv else c @ L


def _endpoint_rows(n):
    """Rows giving ``u(0), u'(0), u(1), u'(1)`` from ``L_j(2t-1)`` coefficients."""
    L, dL = legendre01(n, np.array([0.0, 1.0]), deriv=True)
    return np.vstack([L[:, 0], dL[:, 0], L[:, 1], dL[:, 1]])


@lru_cache(maxsize=None)
def _deflation_matrix(n, alpha, beta):
    """Matrix ``(m+1, n+1)``: ``u -> u / ((1-t)^alpha t^beta)`` with ``m = n - alpha - beta``.

    Exact when the factor divides ``u``; otherwise the weighted projection.
    """
    m = n - alpha - beta
    if m < 0:
        return np.zeros((0, n + 1))
    r = modal.edge_rule(n + 2)
    t = r.nodes
    J = jacobi_table(m, float(alpha), float(beta), 2.0 * t - 1.0)
    wgt = (1.0 - t) ** alpha * t**beta
    h = (J * J * wgt) @ r.weights
    # q = sum_j J_j int(u J_j) / h_j, exact by Gauss quadrature
    A = (J * r.weights) @ legendre01(n, t).T / h[:, None]
    Q = modal.legendre01_project((J.T @ A).T, r, m).T
    Q.setflags(write=False)
    return Q


@lru_cache(maxsize=None)
def _der_matrix(n, m):
    """``(n-m+1, n+1)``: coefficients of the ``m``-th t-derivative of ``L_j(2t-1)``."""
    D = np.eye(n + 1)
    for _ in range(m):
        D = 2.0 * npleg.legder(D, axis=0)
    return D


@lru_cache(maxsize=None)
def _taylor_deflation_matrix(n, m):
    """Matrix ``(n-m+1, n+1)``: ``p -> p / (1-t)^m`` through the Taylor remainder at ``t = 1``.

    ``p / (1-t)^m = (-1)^m / (m-1)! int_0^1 (1-r)^(m-1) p^(m)(1 - r (1 - t)) dr``;
    the Taylor terms of ``p`` at ``t = 1`` up to order ``m - 1`` (zero in
    exact arithmetic) are discarded instead of being amplified.
    """
    if n < m:
        return np.zeros((0, n + 1))
    D = np.eye(n + 1)
    for _ in range(m):
        D = 2.0 * npleg.legder(D, axis=0)  # d/dt of L_j(2t - 1)
    er = modal.edge_rule(n + 1)
    rr = gauss_rule(n + 1, "unit", (0.0, 1.0))
    pts = 1.0 - np.outer(1.0 - er.nodes, rr.nodes)  # (nt, nr)
    vals = np.einsum("ipr,ij,r->pj", _leg_at(n - m, pts), D, rr.weights * (1.0 - rr.nodes) ** (m - 1))
    vals *= (-1.0) ** m / float(np.prod(np.arange(1, m)))
    Q = _project_cols(vals, er, n - m)
    Q.setflags(write=False)
    return Q


def _project_cols(values, rule, n):
    """``(npts, ncols)`` point values -> ``(n+1, ncols)`` ``L_j`` coefficients."""
    return modal.legendre01_project(np.asarray(values).T, rule, n).T


def deflate(c, alpha, beta, tol=1e-9):
    """``u / ((1-t)^alpha t^beta)`` with a remainder check."""
    c = np.asarray(c, float)
    n = len(c) - 1
    q = _deflation_matrix(n, alpha, beta) @ c
    r = modal.edge_rule(n + 2)
    t = r.nodes
    back = ((1.0 - t) ** alpha * t**beta) * (edge_eval(q, t) if len(q) else 0.0)
    res = float(np.abs(edge_eval(c, t) - back).max())
    if res > tol * max(np.abs(c).max(initial=0.0), 1.0):
        raise PreconditionError(f"factor does not divide: residual {res:.3e}")
    return q


@lru_cache(maxsize=None)
def tangential_trace(k, e):
    """``(k+1, 2N)``: ``L_j`` coefficients of ``u . tau`` on edge ``e``."""
    T = edge_trace_matrix(k, e)
    tau = modal.EDGE_TANGENT[e]
    return np.hstack([tau[0] * T, tau[1] * T])


@lru_cache(maxsize=None)
def normal_trace(k, e):
    T = edge_trace_matrix(k, e)
    n = modal.EDGE_NORMAL[e]
    return np.hstack([n[0] * T, n[1] * T])


@lru_cache(maxsize=None)
def circulation_row(k):
    """Counterclockwise boundary circulation of ``u`` as a row on ``(cx, cy)``.

    Edge tangents ``E2, E3`` point clockwise, hence the signs.
    """
    row = np.zeros(2 * dim_p(k))
    for e, sign in ((1, 1.0), (2, -1.0), (3, -1.0)):
        row += sign * EDGE_LENGTH[e] * tangential_trace(k, e)[0]
    row.setflags(write=False)
    return row


@lru_cache(maxsize=None)
def ptau_basis(k):
    """Orthonormal basis (columns) of the circulation-free subspace of ``[P^k]^2``."""
    Z = linalg.null_space(circulation_row(k)[None, :])
    Z.setflags(write=False)
    return Z


def random_tangential_field(k, rng):
    """Random circulation-free field with unit-scale coefficients."""
    Z = ptau_basis(k)
    c = Z @ rng.standard_normal(Z.shape[1])
    return TangentialField.from_vector(c / np.abs(c).max(), k)


def random_p00(k, rng):
    """Random member of ``P^k_00(E1)`` as ``L_j(2t-1)`` coefficients."""
    if k < 4:
        return np.zeros(k + 1)
    return p00_basis(k) @ rng.standard_normal(k - 3)


@lru_cache(maxsize=None)
def p00_basis(k):
    """Orthonormal ``L_j`` coefficient basis (columns) of ``P^k_00(E1)``."""
    if k < 4:
        return np.zeros((k + 1, 0))
    Z = linalg.null_space(_endpoint_rows(k))
    Z.setflags(write=False)
    return Z


# ---------------------------------------------------------------------------
# triangle helpers
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _work(k):
    """Triangle rule exact at degree ``2(k+3)``, ``s``-rule on ``[0, 1]``."""
    rule = modal.tri_rule_for(2 * (k + 3))
    srule = gauss_rule(k + 4, "unit", (0.0, 1.0))
    return rule, srule


def _project_certified(values, k, rule):
    """Columns of point values -> Dubiner coefficients of degree ``k+1``; excess beyond."""
    C = modal.dubiner_project(np.asarray(values).T, k + 3, rule).T  # (N_{k+3}, ncols)
    n = dim_p(k + 1)
    scale = max(float(np.abs(C).max(initial=0.0)), 1e-300)
    excess = float(np.abs(C[n:]).max(initial=0.0)) / scale if C.size else 0.0
    return np.ascontiguousarray(C[:n]), excess


def _leg_at(n, t):
    t = np.asarray(t, float)
    return legendre01(n, t.ravel()).reshape((n + 1,) + t.shape)


@lru_cache(maxsize=None)
def _grad_to_pk(k):
    """``(2 N_k, N_{k+1})``: Dubiner coefficients of ``grad`` of a degree ``k+1`` function."""
    Dx, Dy = modal.diff_matrices(k + 1)
    n = dim_p(k)
    G = np.vstack([Dx[:n], Dy[:n]])
    G.setflags(write=False)
    return G


@lru_cache(maxsize=None)
def _compose(m, which):
    """``(N_m, N_m)`` matrix ``c -> coeffs(phi o F)`` for ``F2(x,y) = (x, 1-x-y)`` or ``F3 = (y, x)``."""
    rule = modal.tri_rule_for(2 * m)
    x, y = rule.x, rule.y
    fx, fy = (x, 1.0 - x - y) if which == 2 else (y, x)
    V = modal.dubiner_eval(m, fx, fy)
    R = modal.dubiner_project(V, m, rule).T  # column j: coefficients of phi_j o F
    R[np.abs(R) < 1e-14] = 0.0
    R.setflags(write=False)
    return R


# ---------------------------------------------------------------------------
# tangential extension
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _antiderivative_matrix(k):
    """``(k+2, k+1)``: ``psi(t) = int_0^t u`` in ``L_j`` coefficients."""
    A = np.zeros((k + 2, k + 1))
    for j in range(k + 1):
        e = np.zeros(k + 1)
        e[j] = 1.0
        A[:, j] = 0.5 * npleg.legint(e, lbnd=-1)
    return A


@lru_cache(maxsize=None)
def _tangential_stage(k, stage):
    """Stage matrix ``(N_{k+1}, k+1)`` and its degree excess.

    stage 1: ``int_0^1 psi(x + s y) ds``
    stage 2: ``int_0^1 (psi - psi(1))(x + s y) ds + y int_0^1 u(x + s(1-x)) s ds``
    stage 3: stage 2 with ``psi`` plus ``y int_0^1 u(s(x+y)) (s-1) ds - y int_0^1 u(s) s ds``
    """
    rule, srule = _work(k)
    X, Y = rule.x[:, None], rule.y[:, None]
    s, w = srule.nodes[None, :], srule.weights
    A = _antiderivative_matrix(k)
    psi1 = A.sum(axis=0)  # psi(1) per basis function (L_j(1) = 1)
    Lpsi = _leg_at(k + 1, X + s * Y)  # (k+2, npts, ns)
    Psi = np.einsum("ij,ips,s->pj", A, Lpsi, w)  # (npts, k+1)
    if stage == 1:
        vals = Psi
    else:
        Lu = _leg_at(k, X + s * (1.0 - X))
        T2 = Y * np.einsum("jps,s->pj", Lu, w * s[0])
        vals = Psi - psi1[None, :] + T2 if stage == 2 else Psi + T2
        if stage == 3:
            L3 = _leg_at(k, s * (X + Y))
            T3 = Y * np.einsum("jps,s->pj", L3, w * (s[0] - 1.0))
            c4 = legendre01(k, srule.nodes) @ (w * srule.nodes)
            vals = vals + T3 - Y * c4[None, :]
        elif stage != 2:
            raise ValueError("stage must be 1, 2 or 3")
    S, ex = _project_certified(vals, k, rule)
    S.setflags(write=False)
    return S, ex


def _as_tripoly(c, k):
    return TriPoly(np.asarray(c, float), k + 1)


def etau_primary(u_tau, k=None):
    """``int_0^1 psi(x + s y) ds`` with ``psi(x) = int_0^x u_tau``; degree ``k + 1``."""
    c = edge_coeffs(u_tau, k)
    k = len(c) - 1
    S, _ = _tangential_stage(k, 1)
    return _as_tripoly(S @ c, k)


def etau_correction(u_tau, stage, k=None):
    """Corrected lifting from ``E1``: ``stage="two"`` or ``"three"``.

    Stage two leaves a zero tangential derivative on ``E2``; stage three on
    ``E2`` and ``E3`` and needs ``int_0^1 u_tau = 0``.
    """
    c = edge_coeffs(u_tau, k)
    k = len(c) - 1
    num = {"two": 2, "three": 3, 2: 2, 3: 3}.get(stage)
    if num is None:
        raise ValueError("stage must be 'two' or 'three'")
    if num == 3:
        mean = float(c[0])
        if abs(mean) > 1e-11 * max(np.abs(c).max(initial=0.0), 1.0):
            raise PreconditionError(f"psi(1) = {mean:.3e} must vanish for stage three")
    S, _ = _tangential_stage(k, num)
    return _as_tripoly(S @ c, k)


@lru_cache(maxsize=None)
def _etau_full(k):
    """``(N_{k+1}, 2 N_k)`` matrix of the tangential extension on all of ``[P^k]^2``."""
    N = dim_p(k)
    G = _grad_to_pk(k)
    I = np.eye(2 * N)
    Px, Py = I[:N], I[N:]
    T1, T2, T3 = (edge_trace_matrix(k, e) for e in (1, 2, 3))
    S1, x1 = _tangential_stage(k, 1)
    S2, x2 = _tangential_stage(k, 2)
    S3, x3 = _tangential_stage(k, 3)
    R2, R3 = _compose(k + 1, 2), _compose(k + 1, 3)
    M1 = S1 @ T1 @ Px
    # pulled back data: E2 -> E1 needs u_x - u_y at (t, 1-t); E3 -> E1 needs u_y at (0, t)
    M2 = M1 + R2 @ S2 @ T2 @ (Px - Py) @ (I - G @ M1)
    M = M2 + R3 @ S3 @ T3 @ Py @ (I - G @ M2)
    M.setflags(write=False)
    return M, max(x1, x2, x3)


def etau(u):
    """Tangential extension: ``grad(E) . tau = u . tau`` on the whole boundary."""
    u.require_circulation_free()
    M, _ = _etau_full(u.k)
    return _as_tripoly(M @ u.vector, u.k)


# ---------------------------------------------------------------------------
# normal extension
# ---------------------------------------------------------------------------


def _a(s):
    return 6.0 * s * (1.0 - s)


def _da(s):
    return 6.0 - 12.0 * s


@lru_cache(maxsize=None)
def _enorm_e1(k):
    """``(N_{k+1}, k+1)`` on ``L_j(2t-1)`` coefficients of ``u in P^k_00(E1)``; degree excess.

    Step 1 ``-y int a(s) u(x + s y) ds`` with ``a = 6 s (1 - s)``.  Step 2
    removes value and normal derivative on ``E2`` by cubic Hermite blending
    in ``y / (1 - x)``, written with ``v = u / (1-x)^2``.  Step 3 blends along
    rays, ``s = y / (x + y)``, with the ``c`` term entering as
    ``+ c(s) (x+y) (dx - dy) E2n(0, x+y)``; only this sign gives a zero
    normal derivative on ``E3`` and a polynomial result.  The matrix is
    meaningful on the four-constraint subspace ``P^k_00`` only.
    """
    if k < 4:
        return np.zeros((dim_p(k + 1), k + 1)), 0.0
    rule, srule = _work(k)
    X, Y = rule.x[:, None], rule.y[:, None]
    s, w = srule.nodes[None, :], srule.weights
    Vc = _taylor_deflation_matrix(k, 2)  # v = u / (1-t)^2, degree k - 2

    U1 = _leg_at(k, X + s * Y)
    E1n = -Y * np.einsum("jps,s->pj", U1, w * _a(s[0]))
    V2 = np.einsum("ij,ips->jps", Vc, _leg_at(k - 2, X + s * (1.0 - X)))
    Aq = np.einsum("jps,s->pj", V2, w * _a(s[0]) * (1 - s[0]) ** 2)
    Bq = np.einsum("jps,s->pj", V2, w * _da(s[0]) * (1 - s[0]) ** 2 * s[0])
    E2n = E1n + (3 * Y**2 * (1 - X) - 2 * Y**3) * Aq - (Y**3 - Y**2 * (1 - X)) * Bq
    C2, ex2 = _project_certified(E2n, k, rule)
    # Traces of E2n on E3 in closed form: P(y) = E2n(0, y), D(y) = dx E2n(0, y).
    # P / (1-y)^2 and R / (1-y)^3, R = 2P + (1-y) D, come from Taylor remainders
    # at y = 1 built on analytic derivatives, so no noisy trace is divided.
    sw = srule.weights
    sn = srule.nodes
    a, da = _a(sn), _da(sn)
    u0 = _leg_at(k, sn)  # (k+1, ns)
    u1 = np.einsum("ij,is->js", _der_matrix(k, 1), _leg_at(k - 1, sn))
    A0 = u0 @ (sw * a)
    B0 = u0 @ (sw * da * sn)
    A1 = ((1 - sn) * u1 + 2 * u0) @ (sw * a)
    B1 = ((1 - sn) * u1 + 2 * u0) @ (sw * da * sn)

    def yder(m, shift, yy):
        # d^m/dy^m of  int a(s) y u^(shift)(s y) ds  at points yy
        out = 0.0
        for q, fac in ((m - 1 + shift, m * sn ** (m - 1)), (m + shift, sn**m)):
            if q > k or (q == m - 1 + shift and m == 0):
                continue
            vals = np.einsum("ij,i...s->...js", _der_matrix(k, q), _leg_at(k - q, yy[..., None] * sn))
            term = vals @ (sw * a * fac)
            out = out + (term if q == m - 1 + shift else yy[..., None] * term)
        return out

    # closed-form traces on E3: P = -y f1 + cP(y), D = dx E2n(0, y) = -y f2 + cD(y)
    cP = np.zeros((4, k + 1))
    cP[2], cP[3] = 3 * A0 + B0, -2 * A0 - B0
    cD = np.zeros((4, k + 1))
    cD[2], cD[3] = -3 * A0 + 3 * A1 - B0 + B1, -2 * A1 - B1

    def pder(m, tt):
        return -yder(m, 0, tt) + npoly.polyval(tt, npoly.polyder(cP, m)).T

    def gder(m, tt):  # G = dx E2n - dy E2n on E3
        return -yder(m, 1, tt) + npoly.polyval(tt, npoly.polyder(cD, m)).T - pder(m + 1, tt)

    # Q2 = (3P + tG) / t^2 and Q3 = (2P + tG) / t^3 as Taylor remainders at t = 0
    rr = gauss_rule(k + 2, "unit", (0.0, 1.0))
    T = rule.x + rule.y
    Q2 = 0.0
    Q3 = 0.0
    for r, wr in zip(rr.nodes, rr.weights):
        tt = r * T
        t_ = tt[:, None]
        g1, g2, g3 = gder(1, tt), gder(2, tt), gder(3, tt)
        Q2 = Q2 + wr * (1 - r) * (3 * pder(2, tt) + 2 * g1 + t_ * g2)
        Q3 = Q3 + 0.5 * wr * (1 - r) ** 2 * (2 * pder(3, tt) + 3 * g2 + t_ * g3)
    # ray blending toward E3 with b(s) = 3s^2 - 2s^3, c(s) = s^3 - s^2, s = y / (x + y):
    # E = E2n - b P(t) + c t G(t), t = x + y
    corr = Y**2 * Q2 - Y**3 * Q3
    E, ex3 = _project_certified(E2n - corr, k, rule)
    E.setflags(write=False)
    return E, max(ex2, ex3)


@lru_cache(maxsize=None)
def enorm_matrix(k, edge):
    """Normal extension from ``edge`` acting on ``L_j(2t-1)`` coefficients."""
    E, ex = _enorm_e1(k)
    if edge == 1:
        return E, ex
    if edge == 2:
        # w = phi o F2 has grad(w) . n2 = sqrt2 * (-phi_y) on E2
        M = _compose(k + 1, 2) @ E / SQRT2
    elif edge == 3:
        M = _compose(k + 1, 3) @ E
    else:
        raise ValueError("edge must be 1, 2 or 3")
    M.setflags(write=False)
    return M, ex


def p00_check(c, tol=1e-9):
    """Residuals ``u(0), u'(0), u(1), u'(1)``; raises if any exceeds ``tol``."""
    c = np.asarray(c, float)
    r = _endpoint_rows(len(c) - 1) @ c
    scale = max(np.abs(c).max(initial=0.0), 1.0)
    if np.abs(r).max() > tol * scale:
        raise PreconditionError(
            "edge function must vanish with its derivative at both endpoints; residuals "
            + ", ".join(f"{v:.2e}" for v in r)
        )
    return r


def enorm(u, edge=1, k=None):
    """Normal extension: zero on the boundary, ``grad(E) . n = u`` on ``edge``, 0 elsewhere."""
    if isinstance(edge, str):
        edge = int(edge.strip("E"))
    c = edge_coeffs(u, k)
    k = len(c) - 1
    p00_check(c)
    if k < 4:
        return _as_tripoly(np.zeros(dim_p(k + 1)), k)
    M, _ = enorm_matrix(k, edge)
    return _as_tripoly(M @ c, k)


# ---------------------------------------------------------------------------
# splitting bubbles
# ---------------------------------------------------------------------------


def _int_jacobi_legendre(j, n):
    """Legendre coefficients on ``[-1,1]`` of ``p_hat_j = -int_x^1 p^1_{j-1}`` (padded to n)."""
    c = np.zeros(n + 1)
    if j == 0:
        c[0] = 1.0
        return c
    # p^1_{j-1} = (1/j) sum_{i<j} (2i+1) P_i ; antiderivative vanishing at x = 1
    d = np.zeros(j)
    for i in range(j):
        d[i] = (2 * i + 1) / j
    ant = npleg.legint(d)
    ant[0] -= npleg.legval(1.0, ant)
    c[: len(ant)] = ant
    return c


def weighted_seminorm_sq(etilde):
    """``int_{-1}^1 (1 - x) v'(x)^2 dx`` for Legendre coefficients on ``[-1, 1]``."""
    n = len(etilde) - 1
    r = gauss_rule(max(n, 1), "jacobi(1)", (-1.0, 1.0))
    d = npleg.legval(r.nodes, npleg.legder(etilde)) if n > 0 else 0.0 * r.nodes
    return float(r.weights @ (d * d))


def splitting_bubble(k, mode="exact_min"):
    """Splitting bubble pair built from ``e~ in P^k`` on ``[-1, 1]``.

    ``exact_min`` minimizes ``int (1-x) v'^2`` under ``v(1) = 0, v'(1) = 1``;
    ``paper_coeffs`` uses ``c_j = 12 j (j+1) / (k (k+1) (k+2) (3k+1))`` in the
    integrated Jacobi basis, which already satisfies ``v'(1) = 1``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if mode == "paper_coeffs":
        den = k * (k + 1) * (k + 2) * (3 * k + 1)
        et = sum(12.0 * j * (j + 1) / den * _int_jacobi_legendre(j, k) for j in range(1, k + 1))
    elif mode == "exact_min":
        r = gauss_rule(k, "jacobi(1)", (-1.0, 1.0))
        D = np.array([npleg.legval(r.nodes, npleg.legder(np.eye(k + 1)[j])) for j in range(k + 1)])
        H = (D * r.weights) @ D.T
        j = np.arange(k + 1)
        C = np.vstack([np.ones(k + 1), j * (j + 1) / 2.0])  # P_j(1), P_j'(1)
        K = np.block([[2 * H, C.T], [C, np.zeros((2, 2))]])
        et = np.linalg.solve(K, np.concatenate([np.zeros(k + 1), [0.0, 1.0]]))[: k + 1]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    slope = npleg.legval(1.0, npleg.legder(et))
    if abs(slope) < 1e-300:
        raise RuntimeError("degenerate bubble")
    et = et / slope
    # e1(t) = e~(2t - 1) t^2 / 2 ; L_j(2t-1) coefficients coincide with P_j coefficients
    r = modal.edge_rule(k + 3)
    vals = npleg.legval(2 * r.nodes - 1, et) * r.nodes**2 / 2.0
    e1 = modal.legendre01_project(vals, r, k + 2)
    sign = (-1.0) ** np.arange(k + 3)
    e0 = -sign * e1
    return EdgeBubble(e0, e1, k, mode, et)


@lru_cache(maxsize=None)
def _bubble(m, mode):
    return splitting_bubble(m, mode)


def bubble_degree(k):
    """Degree of the bubble pair used for ``[P^k]^2`` inputs (``max(k, 3)``)."""
    return max(k, 3)


def bubble_norms(b):
    """``(||e1||_0, ||e1||_{1/2*})`` on ``E1``."""
    K = b.degree
    M = modal.legendre01_mass(K)
    l2 = float(np.sqrt(b.e1 @ M @ b.e1))
    r = _deflation_matrix(K, 1, 1) @ b.e1  # bubble01 coefficients
    G = norms.gram_edge(K, "H12star").entries
    return l2, float(np.sqrt(max(r @ G @ r, 0.0)))


def derivative_bound(k):
    """``sup |u'(1)| / ||u||_{1/2*}`` over ``u in P^k`` vanishing at both endpoints."""
    if k < 2:
        raise ValueError("k must be at least 2")
    G = norms.gram_edge(k, "H12star").entries
    ell = -np.ones(k - 1)  # d/dt [t (1 - t) L_j(2t - 1)] at t = 1
    return float(np.sqrt(ell @ np.linalg.solve(G, ell)))


# ---------------------------------------------------------------------------
# good / bad splitting and the full extension
# ---------------------------------------------------------------------------


def _split_rows(k, mode):
    """``(good, bad)`` maps from ``L_j`` coefficients of degree k to degree ``max(k,3)``."""
    m = bubble_degree(k)
    b = _bubble(m - 2, mode)
    L, dL = legendre01(k, np.array([0.0, 1.0]), deriv=True)
    d0, d1 = dL[:, 0], dL[:, 1]
    pad = np.zeros((m + 1, k + 1))
    pad[: k + 1, : k + 1] = np.eye(k + 1)
    bad = np.outer(b.e1, d1) + np.outer(b.e0, d0)
    return pad - bad, bad


def split_good_bad(u_c, edge, mode="exact_min", tol=1e-10):
    """Split the normal trace of a field with zero tangential trace.

    Returns ``(good, bad)`` as ``L_j`` coefficients of degree ``max(k, 3)``;
    ``good`` has double zeros at both endpoints and ``good + bad = u_c . n``.
    """
    tt = u_c.tangential_traces()
    worst = max(float(np.abs(v).max()) for v in tt.values())
    if worst > tol * u_c.scale():
        raise PreconditionError(f"tangential trace of u_c is {worst:.3e}, not zero")
    un = normal_trace(u_c.k, edge) @ u_c.vector
    Gd, Bd = _split_rows(u_c.k, mode)
    return Gd @ un, Bd @ un


@lru_cache(maxsize=None)
def _extend_full(k, mode="exact_min"):
    """``(N_{k+1}, 2N_k)`` extension matrix and the mismatch map ``(3(k+1), 2N_k)``."""
    N = dim_p(k)
    Mt, ext = _etau_full(k)
    G = _grad_to_pk(k)
    Uc = np.eye(2 * N) - G @ Mt
    m = bubble_degree(k)
    Gd, _ = _split_rows(k, mode)
    total = Mt.copy()
    excess = ext
    if m >= 4:
        for e in (1, 2, 3):
            En, exn = enorm_matrix(m, e)
            excess = max(excess, exn)
            part = En @ Gd @ normal_trace(k, e) @ Uc
            # m == k here, so the output degree is k + 1
            total = total + part[: dim_p(k + 1)]
    total.setflags(write=False)
    R = np.eye(2 * N) - G @ total
    mis = np.vstack([normal_trace(k, e) @ R for e in (1, 2, 3)])
    mis.setflags(write=False)
    return total, mis, excess


def extend_h2(u, mode="exact_min"):
    """``E(u) = Etau(u) + sum_i En_Ei(good_i)`` in ``P^{k+1}``."""
    u.require_circulation_free()
    M, _, _ = _extend_full(u.k, mode)
    return _as_tripoly(M @ u.vector, u.k)


def normal_mismatch(u, mode="exact_min"):
    """``{edge: L_j coefficients of (u - grad E(u)) . n}``."""
    u.require_circulation_free()
    _, mis, _ = _extend_full(u.k, mode)
    v = mis @ u.vector
    k = u.k
    return {e: v[(e - 1) * (k + 1) : e * (k + 1)] for e in (1, 2, 3)}


# ---------------------------------------------------------------------------
# operator matrices and norms
# ---------------------------------------------------------------------------


def operator_matrix(opname, k, mode="exact_min"):
    """Matrix of an operator on an explicit basis of its constrained domain.

    ``enorm`` acts on the orthonormal basis :func:`p00_basis` (edge ``E1``);
    the other operators on the orthonormal basis :func:`ptau_basis`.
    """
    if opname not in OPNAMES:
        raise ValueError(f"unknown operator {opname!r}")
    if opname == "enorm":
        E, ex = enorm_matrix(k, 1)
        return LinearOpMatrix(E @ p00_basis(k), f"p00:{k}", f"dubiner:{k + 1}", ex)
    Z = ptau_basis(k)
    if opname == "etau":
        M, ex = _etau_full(k)
        return LinearOpMatrix(M @ Z, f"ptau:{k}", f"dubiner:{k + 1}", ex)
    total, mis, ex = _extend_full(k, mode)
    if opname == "extend_h2":
        return LinearOpMatrix(total @ Z, f"ptau:{k}", f"dubiner:{k + 1}", ex)
    return LinearOpMatrix(mis @ Z, f"ptau:{k}", f"edges-legendre01:{k}", ex)


def operator_norm(M, G_out, G_in):
    """``max sqrt(c^T M^T G_out M c / c^T G_in c)`` via a generalized eigenproblem."""
    A = M.matrix if isinstance(M, LinearOpMatrix) else np.asarray(M, float)
    Go = G_out.entries if isinstance(G_out, norms.GramMatrix) else np.asarray(G_out, float)
    Gi = G_in.entries if isinstance(G_in, norms.GramMatrix) else np.asarray(G_in, float)
    if A.shape != (Go.shape[0], Gi.shape[0]):
        raise ValueError(f"shape mismatch: {A.shape} against Grams {Go.shape}, {Gi.shape}")
    try:
        linalg.cholesky(Gi)
    except linalg.LinAlgError as exc:
        raise ValueError("input Gram matrix is not positive definite") from exc
    S = A.T @ Go @ A
    w = linalg.eigvalsh(0.5 * (S + S.T), Gi)
    return float(np.sqrt(max(w[-1], 0.0)))


def domain_gram(opname, k, kind="H1"):
    """Gram matrix of the operator's domain basis."""
    if opname == "enorm":
        B = _deflation_matrix(k, 1, 1) @ p00_basis(k)  # into bubble01 coefficients
        G = norms.gram_edge(k, kind).entries
        return norms.GramMatrix(B.T @ G @ B, f"p00:{k}", kind)
    Z = ptau_basis(k)
    T = norms.gram_triangle(k, kind).entries
    return norms.GramMatrix(Z.T @ linalg.block_diag(T, T) @ Z, f"ptau:{k}", kind)


def boundary_l2_gram(k):
    """L2 on the boundary for three stacked ``L_j`` coefficient blocks (arclength)."""
    M = modal.legendre01_mass(k)
    return norms.GramMatrix(linalg.block_diag(*(EDGE_LENGTH[e] * M for e in (1, 2, 3))), f"edges-legendre01:{k}", "L2")


def mismatch_norm(k, mode="exact_min"):
    """Operator norm of ``u -> (u - grad E(u)) . n``, ``H^1 -> L^2(boundary)``."""
    return operator_norm(operator_matrix("mismatch_normal", k, mode), boundary_l2_gram(k), domain_gram("etau", k))


def h2_norm(k, mode="exact_min"):
    """Operator norm of ``E``, ``H^1 -> H^2``."""
    G2 = norms.gram_triangle(k + 1, "H2")
    return operator_norm(operator_matrix("extend_h2", k, mode), G2, domain_gram("etau", k))


# ---------------------------------------------------------------------------
# invariant battery
# ---------------------------------------------------------------------------


def _directional(P, e, t, vec):
    x, y = modal.edge_point(e, t)
    gx, gy = P.grad(x, y)
    return gx * vec[0] + gy * vec[1]


def property_residuals(k, rng, count=20, npts=30, mode="exact_min"):
    """Worst trace-identity residuals over ``count`` random inputs of degree ``k``.

    Residuals are relative to ``max(1, data scale)``, the data scale being
    the largest sampled boundary value of the prescribed trace.  Keys:
    ``etau``, ``extend_h2``, ``enorm`` (all three edge variants; 0 when
    ``k < 4``) and ``degree_excess``.
    """
    t = np.linspace(0.0, 1.0, npts)
    out = {"etau": 0.0, "extend_h2": 0.0, "enorm": 0.0}
    for _ in range(count):
        u = random_tangential_field(k, rng)
        tr = u.tangential_traces()
        want = {e: edge_eval(tr[e], t) for e in (1, 2, 3)}
        scale = max(1.0, max(np.abs(w).max() for w in want.values()))
        for name, F in (("etau", etau(u)), ("extend_h2", extend_h2(u, mode))):
            r = max(np.abs(_directional(F, e, t, modal.EDGE_TANGENT[e]) - want[e]).max() for e in (1, 2, 3))
            out[name] = max(out[name], r / scale)
        if k >= 4:
            c = random_p00(k, rng)
            g = edge_eval(c, t)
            scale = max(1.0, np.abs(g).max())
            for edge in (1, 2, 3):
                E = enorm(c, edge)
                for f in (1, 2, 3):
                    x, y = modal.edge_point(f, t)
                    dn = _directional(E, f, t, modal.EDGE_NORMAL[f])
                    r = max(np.abs(E(x, y)).max(), np.abs(dn - (g if f == edge else 0.0)).max())
                    out["enorm"] = max(out["enorm"], r / scale)
    excess = max(_etau_full(k)[1], _extend_full(k, mode)[2])
    if k >= 4:
        excess = max(excess, enorm_matrix(k, 1)[1])
    out["degree_excess"] = excess
    return out
