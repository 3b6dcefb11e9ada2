"""DG bilinear forms, the Stokes saddle-point solve and the error study.

Conventions on an edge with global unit normal ``n`` and tangent ``tau``:
each neighbour carries the sign ``s = +1`` when ``n`` points out of it, the
jump is ``[w] = sum_i s_i w_i`` and the mean of ``tau^T grad(v) n`` is the
average over the neighbours.  On a boundary edge this reduces to the trace
(with outward normal), and the tangential Dirichlet datum enters the jump as
``s (u . tau - u_D . tau)``.  The normal component of ``u_D`` is imposed
strongly on the boundary edge moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from . import femcore, modal
from .modal import dim_p


class SolveError(RuntimeError):
    """Singular or inaccurate saddle-point solve."""


# ---------------------------------------------------------------------------
# exact solutions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExactField:
    """Smooth velocity with gradient and Stokes load ``f = -nu lap u + grad p``."""

    u: callable
    grad: callable
    f: callable
    name: str = ""


def curl_sin2(nu=1.0):
    """``u = curl(sin^2 x sin^2 y) = (-phi_y, phi_x)`` with ``p = 0``."""

    def s(t):
        return np.sin(t) ** 2

    def s1(t):
        return np.sin(2 * t)

    def s2(t):
        return 2 * np.cos(2 * t)

    def s3(t):
        return -4 * np.sin(2 * t)

    def u(x, y):
        return -s(x) * s1(y), s1(x) * s(y)

    def grad(x, y):
        # [[du1/dx, du1/dy], [du2/dx, du2/dy]]
        return (
            (-s1(x) * s1(y), -s(x) * s2(y)),
            (s2(x) * s(y), s1(x) * s1(y)),
        )

    def f(x, y):
        lap1 = -s2(x) * s1(y) - s(x) * s3(y)
        lap2 = s3(x) * s(y) + s1(x) * s2(y)
        return -nu * lap1, -nu * lap2

    return ExactField(u, grad, f, "curl(sin^2 x sin^2 y)")


def linear_shear():
    """``u = (y, 0)``, ``p = 0``: a polynomial Stokes solution with ``f = 0``."""

    def u(x, y):
        y = np.asarray(y, float)
        return y, np.zeros_like(y)

    def grad(x, y):
        z = np.zeros_like(np.asarray(x, float))
        return ((z, z + 1.0), (z, z))

    def f(x, y):
        z = np.zeros_like(np.asarray(x, float))
        return z, z

    return ExactField(u, grad, f, "(y, 0)")


def zero_field():
    def u(x, y):
        z = np.zeros_like(np.asarray(x, float))
        return z, z

    def grad(x, y):
        z = np.zeros_like(np.asarray(x, float))
        return ((z, z), (z, z))

    return ExactField(u, grad, u, "0")


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def _edge_sides(vel, g, nodes):
    return femcore.edge_traces(vel, g, nodes)


def _edge_points(mesh, g, nodes):
    P, d, length, tau, n = mesh.edge_geometry(g)
    return P[0] + d[0] * nodes, P[1] + d[1] * nodes, length, tau, n


def assemble_a(mesh, vel, nu, alpha, k, u_D=None, h=None):
    """Matrix of ``a`` and the load vector from the tangential Dirichlet datum.

    ``u_D(x, y) -> (ux, uy)``; ``None`` means homogeneous data.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    hh = mesh.h if h is None else h
    sigma = alpha * k * k / hh
    rows, cols, vals = [], [], []
    rhs = np.zeros(vel.ndof)
    for I, M in femcore.broken_h1_blocks(vel):
        femcore._add_block(rows, cols, vals, I, I, nu * M)
    rule = modal.edge_rule(k + 1)
    data_rule = modal.edge_rule(k + 4)
    for g in range(mesh.n_edges):
        length = mesh.edge_geometry(g)[2]
        sides = _edge_sides(vel, g, rule.nodes)
        w = rule.weights * length
        nside = len(sides)
        for _, I, vtI, dnI, sI in sides:
            for _, J, vtJ, dnJ, sJ in sides:
                # -{d u}[v] - {d v}[u] + sigma [u][v]; rows test v (I), cols trial u (J)
                cons = -(sI * vtI * w) @ dnJ.T / nside - (dnI * w) @ (sJ * vtJ).T / nside
                pen = sigma * sI * sJ * (vtI * w) @ vtJ.T
                femcore._add_block(rows, cols, vals, I, J, nu * (cons + pen))
        if u_D is not None and mesh.boundary[g]:
            x, y, _, tau, _ = _edge_points(mesh, g, data_rule.nodes)
            ux, uy = u_D(x, y)
            gt = tau[0] * np.asarray(ux) + tau[1] * np.asarray(uy)
            (_, I, vt, dn, s), = _edge_sides(vel, g, data_rule.nodes)
            wd = data_rule.weights * length
            rhs[I] += nu * (-(s * dn) @ (gt * wd) + sigma * vt @ (gt * wd))
    A = femcore._coo(rows, cols, vals, (vel.ndof, vel.ndof))
    return A, rhs


def assemble_b(mesh, vel, pre):
    """``B[q, v] = sum_T int_T div(v) q``."""
    return femcore.divergence_matrix(mesh, vel, pre)


def assemble_load(mesh, vel, f, order=None):
    """``l(v) = sum_T int_T f . v``."""
    k = vel.k
    rule = modal.tri_rule_for(order or 2 * k + 6)
    V = modal.dubiner_eval(k, rule.x, rule.y)
    out = np.zeros(vel.ndof)
    for t, em in enumerate(mesh.maps):
        x, y = em.to_physical(rule.x, rule.y)
        fx, fy = f(x, y)
        W = V * (rule.weights * abs(em.det))
        loc = np.concatenate([W @ np.asarray(fx), W @ np.asarray(fy)])
        out[vel.dof_map[t]] += vel.coeff_maps[t].T @ loc
    return out


def normal_dirichlet(mesh, vel, u_D):
    """Boundary edge moments of ``u_D . n`` (global normal): ``{dof: value}``."""
    k = vel.k
    rule = modal.edge_rule(k + 4)
    L = modal.legendre01(k, rule.nodes)
    out = {}
    for g in np.nonzero(mesh.boundary)[0]:
        x, y, _, _, n = _edge_points(mesh, g, rule.nodes)
        ux, uy = u_D(x, y)
        gn = n[0] * np.asarray(ux) + n[1] * np.asarray(uy)
        mom = L @ (gn * rule.weights)
        for dof, val in zip(vel.edge_dofs(g), mom):
            out[int(dof)] = float(val)
    return out


@dataclass
class SaddleSystem:
    A: sparse.csr_matrix
    B: sparse.csr_matrix
    mean_row: np.ndarray
    f_vec: np.ndarray
    g_vec: np.ndarray
    dirichlet_data: dict
    mesh: femcore.Mesh = field(repr=False)
    vel: femcore.VelocitySpace = field(repr=False)
    pre: femcore.PressureSpace = field(repr=False)
    nu: float = 1.0
    alpha: float = 4.0


@dataclass
class StokesSolution:
    u: np.ndarray
    p: np.ndarray
    residual: float
    condition_estimate: float
    div_l2_relative: float
    system: SaddleSystem = field(repr=False)


def build_system(mesh, k, nu=1.0, alpha=4.0, exact=None, f=None, u_D=None):
    """Assemble the saddle-point system; ``exact`` supplies both ``f`` and ``u_D``."""
    if exact is not None:
        f = exact.f if f is None else f
        u_D = exact.u if u_D is None else u_D
    vel, pre = femcore.build_spaces(mesh, k)
    A, rhs_d = assemble_a(mesh, vel, nu, alpha, k, u_D)
    B = assemble_b(mesh, vel, pre)
    F = rhs_d.copy()
    if f is not None:
        F += assemble_load(mesh, vel, f)
    dirichlet = normal_dirichlet(mesh, vel, u_D) if u_D is not None else {
        int(d): 0.0 for d in vel.boundary_dofs()
    }
    return SaddleSystem(A, B, pre.mean_row(), F, np.zeros(pre.ndof), dirichlet, mesh, vel, pre, nu, alpha)


def solve_stokes(system, refine=2):
    """Solve with a Lagrange multiplier for the pressure mean."""
    A, B, vel, pre = system.A, system.B, system.vel, system.pre
    nv, npre = vel.ndof, pre.ndof
    bdofs = np.array(sorted(system.dirichlet_data), dtype=int)
    ub = np.array([system.dirichlet_data[d] for d in bdofs])
    free = np.setdiff1d(np.arange(nv), bdofs)
    Aff = A[free][:, free]
    Afb = A[free][:, bdofs]
    Bf = B[:, free]
    Bb = B[:, bdofs]
    m = sparse.csr_matrix(system.mean_row[None, :])
    K = sparse.bmat(
        [[Aff, Bf.T, None], [Bf, None, m.T], [None, m, None]],
        format="csc",
    )
    rhs = np.concatenate([system.f_vec[free] - Afb @ ub, system.g_vec - Bb @ ub, [0.0]])
    try:
        lu = splinalg.splu(K)
    except RuntimeError as exc:
        raise SolveError(f"saddle-point matrix is singular: {exc}") from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SolveError("non-finite solution; the system is singular")
    # the LU factors lose several digits at high k; refinement recovers them
    for _ in range(refine):
        x = x + lu.solve(rhs - K @ x)
    res = float(np.linalg.norm(K @ x - rhs) / max(np.linalg.norm(rhs), 1e-300))
    nf = len(free)
    u = np.zeros(nv)
    u[free] = x[:nf]
    u[bdofs] = ub
    p = x[nf : nf + npre]
    try:
        inv_norm = splinalg.onenormest(splinalg.LinearOperator(K.shape, matvec=lu.solve, rmatvec=lambda y: lu.solve(y, trans="T")))
        cond = float(splinalg.norm(K, 1) * inv_norm)
    except Exception:  # pragma: no cover - estimate only
        cond = float("nan")
    div_rel = div_l2(system.mesh, vel, u, relative=True)
    if res > 1e-9:
        raise SolveError(f"relative residual {res:.3e} exceeds 1e-9")
    return StokesSolution(u, p, res, cond, div_rel, system)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def div_l2(mesh, vel, u, relative=True):
    """``||div u_h||_L2``, optionally divided by ``||u_h||_L2``."""
    k = vel.k
    num = 0.0
    den = 0.0
    for t, em in enumerate(mesh.maps):
        cx, cy = vel.element_coeffs(t, u)
        Px, Py = femcore.element_gradient_matrices(em, k)
        d = Px @ cx + Py @ cy
        num += abs(em.det) * float(d @ d)
        den += abs(em.det) * float(cx @ cx + cy @ cy)
    num = np.sqrt(num)
    if not relative:
        return float(num)
    return float(num / max(np.sqrt(den), 1e-300))


def dg_error(exact, mesh, vel, u, k=None, h=None, order=None):
    """``sqrt(sum_T |u - u_h|_1^2 + sum_E k^2/h ||[(u - u_h) . tau]||^2)``."""
    k = vel.k if k is None else k
    hh = mesh.h if h is None else h
    rule = modal.tri_rule_for(order or 2 * k + 6)
    total = 0.0
    for t, em in enumerate(mesh.maps):
        x, y = em.to_physical(rule.x, rule.y)
        (g11, g12), (g21, g22) = exact.grad(x, y)
        cx, cy = vel.element_coeffs(t, u)
        _, Gx, Gy = femcore.physical_basis(em, vel.k, rule.x, rule.y)
        e = [g11 - cx @ Gx, g12 - cx @ Gy, g21 - cy @ Gx, g22 - cy @ Gy]
        total += abs(em.det) * float(sum((c * c) @ rule.weights for c in e))
    erule = modal.edge_rule(vel.k + 4)
    for g in range(mesh.n_edges):
        x, y, length, tau, _ = _edge_points(mesh, g, erule.nodes)
        jump = np.zeros_like(erule.nodes)
        for _, I, vt, _, s in _edge_sides(vel, g, erule.nodes):
            jump -= s * (u[I] @ vt)
        if mesh.boundary[g]:
            ux, uy = exact.u(x, y)
            (_, _, _, _, s), = _edge_sides(vel, g, erule.nodes[:1])
            jump += s * (tau[0] * np.asarray(ux) + tau[1] * np.asarray(uy))
        total += k * k / hh * length * float((jump * jump) @ erule.weights)
    return float(np.sqrt(total))


def best_approximation(exact, mesh, vel, k=None, h=None):
    """Minimizer of ``||u - v_h||_DG`` over the velocity space, and the distance."""
    k = vel.k if k is None else k
    hh = mesh.h if h is None else h
    weight = k * k / hh
    G = femcore.dg_gram(mesh, vel, vel.k, weight).tocsc()
    r = np.zeros(vel.ndof)
    rule = modal.tri_rule_for(2 * vel.k + 6)
    for t, em in enumerate(mesh.maps):
        x, y = em.to_physical(rule.x, rule.y)
        (g11, g12), (g21, g22) = exact.grad(x, y)
        _, Gx, Gy = femcore.physical_basis(em, vel.k, rule.x, rule.y)
        wt = rule.weights * abs(em.det)
        loc = np.concatenate([Gx @ (g11 * wt) + Gy @ (g12 * wt), Gx @ (g21 * wt) + Gy @ (g22 * wt)])
        r[vel.dof_map[t]] += vel.coeff_maps[t].T @ loc
    erule = modal.edge_rule(vel.k + 4)
    for g in np.nonzero(mesh.boundary)[0]:
        x, y, length, tau, _ = _edge_points(mesh, g, erule.nodes)
        ux, uy = exact.u(x, y)
        ut = tau[0] * np.asarray(ux) + tau[1] * np.asarray(uy)
        (_, I, vt, _, s), = _edge_sides(vel, g, erule.nodes)
        r[I] += weight * length * (vt @ (ut * erule.weights))
    c = splinalg.spsolve(G, r)
    return c, dg_error(exact, mesh, vel, c, k, hh)


def run_table2(mesh, ks, nu=1.0, alpha=4.0, exact=None):
    """Rows ``(k, err_dg, err_best, ratio, div_rel)`` for the manufactured problem."""
    exact = exact or curl_sin2(nu)
    rows = []
    for k in ks:
        sysm = build_system(mesh, k, nu, alpha, exact)
        sol = solve_stokes(sysm)
        err = dg_error(exact, mesh, sysm.vel, sol.u, k)
        _, best = best_approximation(exact, mesh, sysm.vel, k)
        ratio = err / best if best > 0 else float("nan")
        rows.append((k, err, best, ratio, sol.div_l2_relative))
    return rows


def element_dim(k):
    return 2 * dim_p(k)
