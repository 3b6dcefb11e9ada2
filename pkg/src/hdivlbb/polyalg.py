"""Polynomial arithmetic, orthogonal families and quadrature.

Univariate polynomials (:class:`Poly1`) and bivariate polynomials on the
reference triangle (:class:`Poly2`) are stored as monomial coefficients.
Coefficient arrays may be ``float64`` or ``object`` arrays of
:class:`fractions.Fraction`; the latter keeps every operation exact and is
what :func:`ortho_as_poly` returns.

The reference triangle is ``T = {x >= 0, y >= 0, x + y <= 1}`` with edges
``E1 = {(t, 0)}``, ``E2 = {(t, 1 - t)}`` and ``E3 = {(0, t)}``, each
parametrized by ``t in [0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, exp, factorial, lgamma

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import special

MAX_DEGREE = 64

ORTHO_KINDS = ("legendre", "jacobi1", "int_jacobi", "int_legendre")

# parametrization t -> (x0 + dx t, y0 + dy t) of the three reference edges
EDGE_PARAM = {
    1: ((0.0, 0.0), (1.0, 0.0)),
    2: ((0.0, 1.0), (1.0, -1.0)),
    3: ((0.0, 0.0), (0.0, 1.0)),
}


def _is_exact(c):
    return c.dtype == object


def _trim(c):
    c = np.asarray(c)
    n = len(c)
    while n > 1 and c[n - 1] == 0:
        n -= 1
    return c[:n]


@dataclass(frozen=True, eq=False)
class Poly1:
    """Univariate polynomial ``sum_i coeffs[i] * x**i``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.dtype != object:
            c = c.astype(float)
        if c.ndim != 1:
            raise ValueError("Poly1 coefficients must be one-dimensional")
        if len(c) == 0:
            c = np.zeros(1, dtype=c.dtype)
        object.__setattr__(self, "coeffs", _trim(c))

    @classmethod
    def exact(cls, coeffs):
        return cls(np.array([Fraction(v) for v in coeffs], dtype=object))

    @property
    def degree(self):
        return len(self.coeffs) - 1

    @property
    def is_exact(self):
        return _is_exact(self.coeffs)

    def is_zero(self):
        return self.degree == 0 and self.coeffs[0] == 0

    def __call__(self, x):
        if self.is_exact:
            scalar = np.ndim(x) == 0
            xs = np.atleast_1d(np.asarray(x, dtype=float))
            out = np.array([float(npoly.polyval(Fraction(v), self.coeffs)) for v in xs])
            return out[0] if scalar else out
        return npoly.polyval(x, self.coeffs)

    def to_float(self):
        if not self.is_exact:
            return self
        big = max(abs(v) for v in self.coeffs)
        if big > np.finfo(float).max:
            raise OverflowError(f"coefficient magnitude {float(big):.3e} not representable")
        return Poly1(self.coeffs.astype(float))

    def _coerce(self, other):
        if isinstance(other, Poly1):
            return other.coeffs
        return np.array([other], dtype=self.coeffs.dtype)

    def __add__(self, other):
        return Poly1(npoly.polyadd(self.coeffs, self._coerce(other)))

    __radd__ = __add__

    def __sub__(self, other):
        return Poly1(npoly.polysub(self.coeffs, self._coerce(other)))

    def __rsub__(self, other):
        return Poly1(npoly.polysub(self._coerce(other), self.coeffs))

    def __neg__(self):
        return Poly1(-self.coeffs)

    def __mul__(self, other):
        if isinstance(other, Poly1):
            return Poly1(np.convolve(self.coeffs, other.coeffs))
        return Poly1(self.coeffs * other)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if self.is_exact:
            return Poly1(self.coeffs / Fraction(scalar))
        return Poly1(self.coeffs / scalar)

    def deriv(self, m=1):
        return Poly1(npoly.polyder(self.coeffs, m))

    def integ(self, lbnd=0):
        """Antiderivative vanishing at ``lbnd``."""
        return Poly1(npoly.polyint(self.coeffs, lbnd=lbnd))

    def compose_affine(self, a, b):
        """Return ``t -> p(a + b t)``."""
        out = np.zeros(len(self.coeffs), dtype=self.coeffs.dtype)
        lin = np.array([a, b], dtype=self.coeffs.dtype)
        power = np.array([1], dtype=self.coeffs.dtype)
        for c in self.coeffs:
            out[: len(power)] += c * power
            power = np.convolve(power, lin)
        return Poly1(out)

    def allclose(self, other, atol=1e-12):
        d = (self - other).to_float().coeffs
        return bool(np.all(np.abs(d) <= atol))

    def __repr__(self):
        return f"Poly1({list(self.coeffs)!r})"


def _as_square(c, deg):
    out = np.zeros((deg + 1, deg + 1), dtype=c.dtype)
    n = min(c.shape[0], deg + 1)
    m = min(c.shape[1], deg + 1)
    out[:n, :m] = c[:n, :m]
    return out


@dataclass(frozen=True, eq=False)
class Poly2:
    """Bivariate polynomial ``sum c[i, j] x**i y**j`` with ``i + j <= degree``."""

    coeffs: np.ndarray
    degree: int = field(default=-1)

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.dtype != object:
            c = c.astype(float)
        if c.ndim != 2:
            raise ValueError("Poly2 coefficients must be two-dimensional")
        deg = self.degree
        if deg < 0:
            nz = [(i + j) for i, j in zip(*np.nonzero(c != 0))]
            deg = max(nz) if nz else 0
        i, j = np.indices(c.shape)
        if np.any((i + j > deg) & (c != 0)):
            raise ValueError(f"coefficients exceed total degree {deg}")
        object.__setattr__(self, "coeffs", _as_square(c, deg))
        object.__setattr__(self, "degree", deg)

    @classmethod
    def constant(cls, value):
        return cls(np.array([[value]]))

    @classmethod
    def affine(cls, c0, cx, cy):
        c = np.zeros((2, 2))
        c[0, 0], c[1, 0], c[0, 1] = c0, cx, cy
        return cls(c)

    @classmethod
    def x(cls):
        return cls.affine(0.0, 1.0, 0.0)

    @classmethod
    def y(cls):
        return cls.affine(0.0, 0.0, 1.0)

    def total_degree(self, tol=0.0):
        """Largest ``i + j`` with ``|c[i, j]| > tol``."""
        i, j = np.nonzero(np.abs(self.coeffs.astype(float)) > tol)
        return int(max(i + j)) if len(i) else 0

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return npoly.polyval2d(x, y, self.coeffs)

    def _coerce(self, other):
        if isinstance(other, Poly2):
            return other
        return Poly2.constant(other)

    def __add__(self, other):
        other = self._coerce(other)
        deg = max(self.degree, other.degree)
        return Poly2(_as_square(self.coeffs, deg) + _as_square(other.coeffs, deg), deg)

    __radd__ = __add__

    def __neg__(self):
        return Poly2(-self.coeffs, self.degree)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Poly2):
            return Poly2(self.coeffs * other, self.degree)
        deg = self.degree + other.degree
        dtype = object if (_is_exact(self.coeffs) or _is_exact(other.coeffs)) else float
        out = np.zeros((deg + 1, deg + 1), dtype=dtype)
        a, b = self.coeffs, other.coeffs
        nb = b.shape[0]
        for i, j in zip(*np.nonzero(a != 0)):
            out[i : i + nb, j : j + nb] += a[i, j] * b
        return Poly2(out, deg)

    __rmul__ = __mul__

    def __pow__(self, n):
        out = Poly2.constant(1.0)
        for _ in range(n):
            out = out * self
        return out

    def diff(self, var):
        c = self.coeffs
        if self.degree == 0:
            return Poly2.constant(0.0)
        axis = {"x": 0, "y": 1}[var]
        d = npoly.polyder(c, axis=axis)
        return Poly2(d, self.degree - 1)

    def compose_affine(self, fx, fy):
        """Return ``(x, y) -> p(fx(x, y), fy(x, y))`` for affine ``fx, fy``."""
        fx = _as_affine(fx)
        fy = _as_affine(fy)
        xp = [Poly2.constant(1.0)]
        yp = [Poly2.constant(1.0)]
        for _ in range(self.degree):
            xp.append(xp[-1] * fx)
            yp.append(yp[-1] * fy)
        out = Poly2(np.zeros((1, 1)), self.degree)
        for i, j in zip(*np.nonzero(self.coeffs != 0)):
            out = out + (xp[i] * yp[j]) * self.coeffs[i, j]
        return Poly2(_as_square(out.coeffs, self.degree), self.degree)

    def allclose(self, other, atol=1e-12):
        d = (self - other).coeffs.astype(float)
        return bool(np.all(np.abs(d) <= atol))

    def __repr__(self):
        terms = []
        for i, j in zip(*np.nonzero(self.coeffs != 0)):
            terms.append(f"{self.coeffs[i, j]:+.6g}*x^{i}y^{j}")
        return "Poly2(" + (" ".join(terms) or "0") + ")"


def _as_affine(f):
    if isinstance(f, Poly2):
        if f.degree > 1:
            raise ValueError("affine map expected")
        return f
    c0, cx, cy = f
    return Poly2.affine(c0, cx, cy)


# ---------------------------------------------------------------------------
# Orthogonal families on [-1, 1]
# ---------------------------------------------------------------------------


def jacobi_table(n, alpha, beta, x, deriv=False):
    """Values of ``P_m^{(alpha, beta)}(x)`` for ``m = 0..n``.

    Returns an array of shape ``(n + 1,) + x.shape``; with ``deriv=True`` a
    second array holds the first derivatives (obtained by differentiating the
    recurrence, not by the shifted-parameter formula).
    """
    x = np.asarray(x, dtype=float)
    p = np.zeros((n + 1,) + x.shape)
    dp = np.zeros_like(p)
    p[0] = 1.0
    if n >= 1:
        p[1] = 0.5 * (alpha - beta) + 0.5 * (alpha + beta + 2) * x
        dp[1] = 0.5 * (alpha + beta + 2)
    ab = alpha + beta
    for m in range(2, n + 1):
        a1 = 2 * m * (m + ab) * (2 * m + ab - 2)
        a2 = (2 * m + ab - 1) * (alpha * alpha - beta * beta)
        a3 = (2 * m + ab - 2) * (2 * m + ab - 1) * (2 * m + ab)
        a4 = 2 * (m + alpha - 1) * (m + beta - 1) * (2 * m + ab)
        p[m] = ((a2 + a3 * x) * p[m - 1] - a4 * p[m - 2]) / a1
        if deriv:
            dp[m] = ((a2 + a3 * x) * dp[m - 1] + a3 * p[m - 1] - a4 * dp[m - 2]) / a1
    if deriv:
        return p, dp
    return p


def _check_kind(kind, n):
    if kind not in ORTHO_KINDS:
        raise ValueError(f"unknown family {kind!r}")
    if n < 0:
        raise ValueError("degree must be nonnegative")


def eval_ortho(kind, n, x, deriv=0):
    """Evaluate one member of an orthogonal family on ``[-1, 1]``.

    ``legendre`` is ``p^0_n``, ``jacobi1`` is ``p^1_n`` (weight ``1 - x``),
    ``int_jacobi`` is ``p_hat_n(x) = -int_x^1 p^1_{n-1}`` with ``p_hat_0 = 1``,
    and ``int_legendre`` is ``l_{n+1}(x) = -int_x^1 p^0_n`` with
    ``l_0 = 1 - x``.  ``deriv`` may be 0 or 1.
    """
    _check_kind(kind, n)
    x = np.asarray(x, dtype=float)
    if deriv not in (0, 1):
        raise ValueError("only deriv 0 or 1 supported")
    if kind == "legendre":
        p, dp = jacobi_table(n, 0.0, 0.0, x, deriv=True)
        return (dp if deriv else p)[n]
    if kind == "jacobi1":
        p, dp = jacobi_table(n, 1.0, 0.0, x, deriv=True)
        return (dp if deriv else p)[n]
    if kind == "int_jacobi":
        if n == 0:
            return np.zeros_like(x) if deriv else np.ones_like(x)
        if deriv:
            return jacobi_table(n - 1, 1.0, 0.0, x)[n - 1]
        p = jacobi_table(n, 0.0, 0.0, x)
        return (p[n] + p[n - 1] - 2.0) / n
    # int_legendre
    if n == 0:
        return -np.ones_like(x) if deriv else 1.0 - x
    if n == 1:
        return np.ones_like(x) if deriv else x - 1.0
    if deriv:
        return jacobi_table(n - 1, 0.0, 0.0, x)[n - 1]
    p = jacobi_table(n, 0.0, 0.0, x)
    return (p[n] - p[n - 2]) / (2 * n - 1)


def ortho_as_poly(kind, n):
    """Exact monomial coefficients (``Fraction``) of a family member."""
    _check_kind(kind, n)
    if n > MAX_DEGREE:
        raise ValueError(f"degree {n} exceeds cap {MAX_DEGREE}")
    one = Poly1.exact([1])
    x = Poly1.exact([0, 1])
    if kind in ("legendre", "int_jacobi", "int_legendre"):
        leg = [one, x]
        for m in range(1, n):
            leg.append((x * leg[m] * (2 * m + 1) - leg[m - 1] * m) / (m + 1))
        leg = leg[: max(n + 1, 1)]
        if kind == "legendre":
            return leg[n]
        if kind == "int_jacobi":
            if n == 0:
                return one
            return (leg[n] + leg[n - 1] - 2) / n
        if n == 0:
            return one - x
        if n == 1:
            return x - 1
        return (leg[n] - leg[n - 2]) / (2 * n - 1)
    # jacobi1: P^{(1,0)}
    jac = [one, (x * 3 + 1) / 2]
    for m in range(2, n + 1):
        a1 = 2 * m * (m + 1) * (2 * m - 1)
        a2 = (2 * m) * 1
        a3 = (2 * m - 1) * (2 * m) * (2 * m + 1)
        a4 = 2 * m * (m - 1) * (2 * m + 1)
        jac.append(((x * a3 + a2) * jac[m - 1] - jac[m - 2] * a4) / a1)
    return jac[n]


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuadRule:
    nodes: np.ndarray
    weights: np.ndarray
    exactness_degree: int
    weight_kind: str = "unit"

    def integrate(self, values):
        """Contract the last axis of ``values`` with the weights."""
        return np.asarray(values) @ self.weights

    @property
    def x(self):
        return self.nodes[:, 0]

    @property
    def y(self):
        return self.nodes[:, 1]


def _refined_gauss_jacobi(n, alpha, beta=0.0):
    """Gauss-Jacobi nodes and weights on ``[-1, 1]``, polished in long double.

    Library nodes carry a few ulps of error that degree-64 monomials amplify;
    one Newton pass on the recurrence in extended precision removes it.
    """
    if alpha == 0.0 and beta == 0.0:
        x0, _ = np.polynomial.legendre.leggauss(n)
    else:
        x0, _ = special.roots_jacobi(n, alpha, beta)
    x = x0.astype(np.longdouble)
    a, b = np.longdouble(alpha), np.longdouble(beta)
    ab = a + b
    for _ in range(2):
        p0 = np.ones_like(x)
        dp0 = np.zeros_like(x)
        p1 = (a - b) / 2 + (ab + 2) / 2 * x
        dp1 = np.full_like(x, (ab + 2) / 2)
        for m in range(2, n + 1):
            a1 = 2 * m * (m + ab) * (2 * m + ab - 2)
            a2 = (2 * m + ab - 1) * (a * a - b * b)
            a3 = (2 * m + ab - 2) * (2 * m + ab - 1) * (2 * m + ab)
            a4 = 2 * (m + a - 1) * (m + b - 1) * (2 * m + ab)
            p2 = ((a2 + a3 * x) * p1 - a4 * p0) / a1
            dp2 = ((a2 + a3 * x) * dp1 + a3 * p1 - a4 * dp0) / a1
            p0, p1, dp0, dp1 = p1, p2, dp1, dp2
        x = x - p1 / dp1
    c = np.longdouble(
        exp(lgamma(n + alpha + 1) + lgamma(n + beta + 1) - lgamma(n + alpha + beta + 1) - lgamma(n + 1))
    ) * np.longdouble(2) ** (alpha + beta + 1)
    w = c / ((1 - x * x) * dp1**2)
    return x.astype(float), w.astype(float)


def _parse_weight(weight_kind):
    if weight_kind == "unit":
        return 0.0
    if isinstance(weight_kind, tuple) and weight_kind[0] == "jacobi":
        return float(weight_kind[1])
    if isinstance(weight_kind, str) and weight_kind.startswith("jacobi(") and weight_kind.endswith(")"):
        return float(weight_kind[7:-1])
    raise ValueError(f"unsupported weight kind {weight_kind!r}")


def gauss_rule(n, weight_kind="unit", interval=(-1.0, 1.0)):
    """``n``-point Gauss rule on ``interval``.

    ``weight_kind`` is ``"unit"`` or ``"jacobi(a)"`` / ``("jacobi", a)``, the
    latter integrating against ``(b - x)**a`` rescaled to the interval, i.e.
    ``(1 - x)**a`` on ``[-1, 1]`` and on ``[0, 1]``.
    """
    if n < 1:
        raise ValueError("need at least one node")
    alpha = _parse_weight(weight_kind)
    if alpha <= -1:
        raise ValueError("jacobi weight exponent must exceed -1")
    t, w = _refined_gauss_jacobi(n, alpha)
    a, b = interval
    half = 0.5 * (b - a)
    nodes = a + half * (t + 1.0)
    if alpha == 0.0:
        weights = w * half
    else:
        # (1 - t)^alpha = (b - x)^alpha / half^alpha
        weights = w * half ** (alpha + 1)
    kind = "unit" if alpha == 0.0 else f"jacobi({alpha:g})"
    return QuadRule(nodes, weights, 2 * n - 1, kind)


def triangle_rule(order):
    """Collapsed (Duffy) tensor rule on the reference triangle.

    Gauss-Legendre in the collapsed direction and Gauss-Jacobi ``(1, 0)`` in
    the other absorb the Jacobian; exact for total degree ``order``.
    """
    if order < 1:
        raise ValueError("order must be positive")
    n = order // 2 + 1
    xi, wx = _refined_gauss_jacobi(n, 0.0)
    eta, we = _refined_gauss_jacobi(n, 1.0)
    X = 0.25 * (1.0 + xi[:, None]) * (1.0 - eta[None, :])
    Y = 0.5 * (1.0 + eta[None, :]) * np.ones_like(X)
    W = wx[:, None] * we[None, :] / 8.0
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    return QuadRule(nodes, W.ravel(), 2 * n - 1, "unit")


# ---------------------------------------------------------------------------
# Symbolic operations
# ---------------------------------------------------------------------------


def blend_integral(f, a, b, w=None):
    """``(x, y) -> int_0^1 w(s) f(a(x, y) + s b(x, y)) ds`` as a :class:`Poly2`.

    ``a`` and ``b`` are affine maps given as ``(c0, cx, cy)`` or degree-one
    :class:`Poly2`.  The expansion is done termwise: binomial expansion of
    ``(a + s b)**n`` and exact integration of the monomials in ``s``.
    """
    if w is None:
        w = Poly1([1.0])
    A = _as_affine(a)
    B = _as_affine(b)
    fc = f.to_float().coeffs
    wc = w.to_float().coeffs
    n = len(fc) - 1
    # W[j] = int_0^1 w(s) s^j ds
    W = np.array([sum(wm / (j + m + 1) for m, wm in enumerate(wc)) for j in range(n + 1)])
    apow = [Poly2.constant(1.0)]
    bpow = [Poly2.constant(1.0)]
    for _ in range(n):
        apow.append(apow[-1] * A)
        bpow.append(bpow[-1] * B)
    out = Poly2(np.zeros((1, 1)), n)
    for deg, c in enumerate(fc):
        if c == 0:
            continue
        for j in range(deg + 1):
            coef = c * comb(deg, j) * W[j]
            if coef != 0:
                out = out + (apow[deg - j] * bpow[j]) * coef
    return Poly2(_as_square(out.coeffs, n), n)


def deflate_roots(u, root, multiplicity, tol=1e-9):
    """Divide ``u`` by ``(x - root)**multiplicity``.

    Raises ``ValueError`` with the residual when ``u`` does not vanish to the
    requested order at ``root`` (relative to the coefficient max-norm).
    """
    c = u.coeffs
    scale = max(float(max(abs(v) for v in c)), np.finfo(float).tiny)
    for k in range(multiplicity):
        if len(c) <= 1:
            res = abs(float(c[0]))
            if res > tol * scale or k < multiplicity:
                raise ValueError(
                    f"root of order {multiplicity} at {root} not present "
                    f"(degree exhausted after {k} factors, residual {res:.3e})"
                )
        q = np.zeros(len(c) - 1, dtype=c.dtype)
        acc = c[-1]
        for i in range(len(c) - 2, -1, -1):
            q[i] = acc
            acc = c[i] + acc * root
        res = abs(float(acc))
        if res > tol * scale:
            raise ValueError(
                f"root of order {multiplicity} at {root} not present "
                f"(factor {k + 1} leaves residual {res:.3e})"
            )
        c = q
    return Poly1(c)


def grad(p):
    return p.diff("x"), p.diff("y")


def div(vx, vy):
    return vx.diff("x") + vy.diff("y")


def curl(phi):
    """Rotated gradient ``(-phi_y, phi_x)``."""
    return -phi.diff("y"), phi.diff("x")


def edge_trace(p, edge):
    """Restriction of ``p`` to a reference edge as a :class:`Poly1` in ``t``."""
    (x0, y0), (dx, dy) = EDGE_PARAM[edge]
    q = p.compose_affine((x0, dx, 0.0), (y0, dy, 0.0))
    # q depends on x only (the affine maps above ignore y)
    return Poly1(q.coeffs[:, 0].astype(float))


def affine_compose(p, fx, fy):
    return p.compose_affine(fx, fy)


def calculus(p, what, *args):
    """Dispatch for the coefficient-level calculus operations."""
    if what == "grad":
        return grad(p)
    if what == "div":
        return div(p, args[0])
    if what == "curl":
        return curl(p)
    if what == "edge_trace":
        return edge_trace(p, args[0])
    if what == "affine_compose":
        return affine_compose(p, *args)
    raise ValueError(f"unknown operation {what!r}")


def monomial_integral(i, j):
    """``int_T x**i y**j`` over the reference triangle."""
    return factorial(i) * factorial(j) / factorial(i + j + 2)
