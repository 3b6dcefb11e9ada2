"""Orthonormal modal bases on the reference edge and triangle.

Monomial coefficients lose all accuracy near degree 30, so every numerically
heavy computation (Gram matrices, operator matrices, finite elements) works
in orthonormal bases instead:

* edges: shifted Legendre polynomials ``L_j(2t - 1)`` on ``[0, 1]``;
* triangle: the Dubiner basis, orthonormal in ``L2(T)`` and hierarchical by
  total degree, so ``P^m`` is spanned by the first ``dim(m)`` functions.

Projection onto these bases with a sufficiently exact quadrature rule is
exact for polynomial data, which is how linear operators become matrices.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .polyalg import EDGE_PARAM, Poly2, gauss_rule, jacobi_table, triangle_rule

# unit tangents (orientation of the edge parametrization) and outward normals
EDGE_TANGENT = {
    1: np.array([1.0, 0.0]),
    2: np.array([1.0, -1.0]) / np.sqrt(2.0),
    3: np.array([0.0, 1.0]),
}
EDGE_NORMAL = {
    1: np.array([0.0, -1.0]),
    2: np.array([1.0, 1.0]) / np.sqrt(2.0),
    3: np.array([-1.0, 0.0]),
}
EDGE_LENGTH = {1: 1.0, 2: np.sqrt(2.0), 3: 1.0}


def dim_p(k):
    """Dimension of ``P^k`` in two variables."""
    return (k + 1) * (k + 2) // 2 if k >= 0 else 0


def dubiner_index(k):
    """List of ``(p, q)`` pairs, ordered by total degree then ``p``."""
    return [(p, n - p) for n in range(k + 1) for p in range(n, -1, -1)]


def edge_point(edge, t):
    (x0, y0), (dx, dy) = EDGE_PARAM[edge]
    t = np.asarray(t, dtype=float)
    return x0 + dx * t, y0 + dy * t


# ---------------------------------------------------------------------------
# Legendre on [0, 1]
# ---------------------------------------------------------------------------


def legendre01(n, t, deriv=False):
    """``L_j(2t - 1)`` for ``j = 0..n``; optionally with ``d/dt``."""
    t = np.asarray(t, dtype=float)
    if deriv:
        p, dp = jacobi_table(n, 0.0, 0.0, 2.0 * t - 1.0, deriv=True)
        return p, 2.0 * dp
    return jacobi_table(n, 0.0, 0.0, 2.0 * t - 1.0)


@lru_cache(maxsize=None)
def edge_rule(n):
    return gauss_rule(n, "unit", (0.0, 1.0))


def legendre01_project(values, rule, n):
    """Coefficients in ``L_j(2t - 1)``, ``j <= n``, from values at ``rule``.

    ``values`` has the quadrature points on its last axis.
    """
    L = legendre01(n, rule.nodes)
    scale = 2.0 * np.arange(n + 1) + 1.0
    return (np.asarray(values) * rule.weights) @ L.T * scale


def legendre01_mass(n):
    return np.diag(1.0 / (2.0 * np.arange(n + 1) + 1.0))


# ---------------------------------------------------------------------------
# Dubiner basis
# ---------------------------------------------------------------------------


def dubiner_eval(k, x, y, grad=False):
    """Orthonormal Dubiner basis of ``P^k`` at points ``(x, y)``.

    Returns ``V`` of shape ``(dim_p(k), npts)``; with ``grad=True`` also the
    partial derivatives ``Vx, Vy``.  Uses collapsed coordinates
    ``a = 2x - 1 + y`` and ``b = 1 - y`` with the homogenized Legendre
    recurrence, which stays polynomial (no division by ``1 - y``).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    a = 2.0 * x - 1.0 + y
    b = 1.0 - y
    Q = np.zeros((k + 1,) + x.shape)
    Qa = np.zeros_like(Q)
    Qb = np.zeros_like(Q)
    Q[0] = 1.0
    if k >= 1:
        Q[1] = a
        Qa[1] = 1.0
    for p in range(1, k):
        Q[p + 1] = ((2 * p + 1) * a * Q[p] - p * b * b * Q[p - 1]) / (p + 1)
        if grad:
            Qa[p + 1] = ((2 * p + 1) * (Q[p] + a * Qa[p]) - p * b * b * Qa[p - 1]) / (p + 1)
            Qb[p + 1] = (
                (2 * p + 1) * a * Qb[p] - p * (2.0 * b * Q[p - 1] + b * b * Qb[p - 1])
            ) / (p + 1)
    eta = 2.0 * y - 1.0
    N = dim_p(k)
    V = np.zeros((N,) + x.shape)
    Vx = np.zeros_like(V) if grad else None
    Vy = np.zeros_like(V) if grad else None
    R = {}
    for p in range(k + 1):
        R[p] = jacobi_table(k - p, 2.0 * p + 1.0, 0.0, eta, deriv=grad)
    for idx, (p, q) in enumerate(dubiner_index(k)):
        c = np.sqrt((2.0 * p + 1.0) * (2.0 * p + 2.0 * q + 2.0))
        if grad:
            r, dr = R[p][0][q], 2.0 * R[p][1][q]
        else:
            r = R[p][q]
        V[idx] = c * Q[p] * r
        if grad:
            Vx[idx] = c * 2.0 * Qa[p] * r
            Vy[idx] = c * ((Qa[p] - Qb[p]) * r + Q[p] * dr)
    if grad:
        return V, Vx, Vy
    return V


@lru_cache(maxsize=None)
def tri_rule_for(order):
    return triangle_rule(max(order, 1))


@lru_cache(maxsize=None)
def _dubiner_at_rule(k, order):
    rule = tri_rule_for(order)
    V, Vx, Vy = dubiner_eval(k, rule.x, rule.y, grad=True)
    return rule, V, Vx, Vy


def dubiner_project(values, k, rule):
    """Orthonormal-basis coefficients of point values given at ``rule``."""
    V = dubiner_eval(k, rule.x, rule.y)
    return (np.asarray(values) * rule.weights) @ V.T


@lru_cache(maxsize=None)
def diff_matrices(k):
    """Exact matrices ``Dx, Dy`` with ``coeffs(d f) = D @ coeffs(f)`` in ``P^k``."""
    rule, V, Vx, Vy = _dubiner_at_rule(k, 2 * k)
    W = V * rule.weights
    Dx = W @ Vx.T
    Dy = W @ Vy.T
    for D in (Dx, Dy):
        D[np.abs(D) < 1e-13 * max(1.0, np.abs(D).max())] = 0.0
        D.setflags(write=False)
    return Dx, Dy


@lru_cache(maxsize=None)
def edge_trace_matrix(k, edge):
    """Map Dubiner coefficients to ``L_j(2t-1)`` coefficients of the trace."""
    rule = edge_rule(k + 1)
    x, y = edge_point(edge, rule.nodes)
    V = dubiner_eval(k, x, y)
    T = np.ascontiguousarray(legendre01_project(V, rule, k).T)
    T.setflags(write=False)
    return T


def monomial_to_dubiner(k):
    """Matrix whose column ``(i, j)`` holds the Dubiner coefficients of ``x^i y^j``.

    Columns follow :func:`monomial_index`.  Accurate for moderate ``k`` only.
    """
    rule = tri_rule_for(2 * k)
    cols = [rule.x**i * rule.y**j for i, j in monomial_index(k)]
    return dubiner_project(np.array(cols), k, rule).T


def monomial_index(k):
    return [(n - j, j) for n in range(k + 1) for j in range(n + 1)]


class TriPoly:
    """Polynomial on the reference triangle in the Dubiner basis."""

    __slots__ = ("coeffs", "k")

    def __init__(self, coeffs, k):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (dim_p(k),):
            raise ValueError(f"expected {dim_p(k)} coefficients for degree {k}")
        self.coeffs = coeffs
        self.k = k

    @classmethod
    def from_function(cls, f, k):
        rule = tri_rule_for(2 * k + 2)
        return cls(dubiner_project(f(rule.x, rule.y), k, rule), k)

    @classmethod
    def from_poly2(cls, p, k=None):
        k = p.degree if k is None else k
        if p.degree > k:
            raise ValueError("polynomial degree exceeds target space")
        return cls.from_function(p, k)

    def __call__(self, x, y):
        return self.coeffs @ dubiner_eval(self.k, x, y)

    def grad(self, x, y):
        _, Vx, Vy = dubiner_eval(self.k, x, y, grad=True)
        return self.coeffs @ Vx, self.coeffs @ Vy

    def elevate(self, m):
        if m < self.k:
            raise ValueError("cannot lower degree without truncation")
        c = np.zeros(dim_p(m))
        c[: len(self.coeffs)] = self.coeffs
        return TriPoly(c, m)

    def excess(self, m):
        """Euclidean norm of coefficients beyond total degree ``m``."""
        return float(np.linalg.norm(self.coeffs[dim_p(m) :]))

    def edge_trace(self, edge):
        """Legendre-on-``[0,1]`` coefficients of the restriction to ``edge``."""
        return edge_trace_matrix(self.k, edge) @ self.coeffs

    def to_poly2(self):
        """Monomial form; only well conditioned for small degree."""
        k = self.k
        M = monomial_to_dubiner(k)
        mono = np.linalg.solve(M, self.coeffs)
        c = np.zeros((k + 1, k + 1))
        for val, (i, j) in zip(mono, monomial_index(k)):
            c[i, j] = val
        return Poly2(c, k)
