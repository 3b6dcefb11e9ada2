"""Triangulations, H(div)-conforming velocity and discontinuous pressure spaces.

Velocity space: full ``[P^k]^2`` per element with single-valued normal
components.  Element degrees of freedom are

* normal moments ``int_0^1 (v . n_g)(x(t)) L_m(2t - 1) dt``, ``m = 0..k``,
  on each edge, with ``x(t)`` running from the lower-indexed vertex to the
  higher one and ``n_g`` the unit normal obtained by rotating that direction
  clockwise (so both neighbours agree on sign and parametrization);
* ``(k + 1)(k - 1)`` interior functions with vanishing normal trace.

Global numbering puts the ``k + 1`` dofs of every edge first (edge by edge),
then the interior dofs element by element.  Pressure: discontinuous
``P^{k-1}`` in an element-wise orthonormal basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg, sparse

from . import modal
from .modal import dim_p

# local edge i of the reference triangle joins REF_EDGE_VERTS[i] (t = 0 -> 1)
REF_EDGE_VERTS = {1: (0, 1), 2: (2, 1), 3: (0, 2)}
REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class MeshError(ValueError):
    """Malformed or invalid triangulation."""


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ElementMap:
    """Affine map ``x = b + J xhat`` from the reference triangle."""

    J: np.ndarray
    b: np.ndarray

    @cached_property
    def det(self):
        return float(np.linalg.det(self.J))

    @cached_property
    def Jinv(self):
        return np.linalg.inv(self.J)

    def to_physical(self, xh, yh):
        xh = np.asarray(xh, float)
        yh = np.asarray(yh, float)
        return self.b[0] + self.J[0, 0] * xh + self.J[0, 1] * yh, self.b[1] + self.J[1, 0] * xh + self.J[1, 1] * yh

    def to_reference(self, x, y):
        dx = np.asarray(x, float) - self.b[0]
        dy = np.asarray(y, float) - self.b[1]
        Ji = self.Jinv
        return Ji[0, 0] * dx + Ji[0, 1] * dy, Ji[1, 0] * dx + Ji[1, 1] * dy

    @classmethod
    def from_vertices(cls, P):
        P = np.asarray(P, float)
        return cls(np.column_stack([P[1] - P[0], P[2] - P[0]]), P[0].copy())


def map_field(em, ref_field, kind):
    """Physical evaluator of a reference field.

    ``ref_field(xh, yh)`` returns a scalar array or a pair ``(vx, vy)``.
    ``contravariant_piola`` maps ``v -> J v / det J`` (normal fluxes kept),
    ``covariant`` maps ``v -> J^-T v`` (tangential circulation kept).
    """
    if kind not in ("contravariant_piola", "covariant", "scalar"):
        raise ValueError(f"unknown map kind {kind!r}")

    def evaluate(x, y):
        xh, yh = em.to_reference(x, y)
        val = ref_field(xh, yh)
        if kind == "scalar":
            return val
        vx, vy = val
        if kind == "contravariant_piola":
            M = em.J / em.det
        else:
            M = em.Jinv.T
        return M[0, 0] * vx + M[0, 1] * vy, M[1, 0] * vx + M[1, 1] * vy

    return evaluate


@dataclass
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray = field(init=False)
    edge_elements: list = field(init=False)
    element_edges: np.ndarray = field(init=False)
    boundary: np.ndarray = field(init=False)
    h: float = field(init=False)
    shape_ratio: float = field(init=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, float)
        self.triangles = np.asarray(self.triangles, int)
        _validate(self.vertices, self.triangles)
        emap = {}
        edges = []
        edge_elements = []
        element_edges = np.zeros((len(self.triangles), 3), int)
        directed = set()
        for t, tri in enumerate(self.triangles):
            for li in (1, 2, 3):
                a, b = (int(tri[v]) for v in REF_EDGE_VERTS[li])
                key = (min(a, b), max(a, b))
                if key not in emap:
                    emap[key] = len(edges)
                    edges.append(key)
                    edge_elements.append([])
                g = emap[key]
                edge_elements[g].append((t, li))
                element_edges[t, li - 1] = g
            # in a consistently oriented conforming mesh every directed edge
            # of the counterclockwise boundary cycles occurs once
            for d in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                d = (int(d[0]), int(d[1]))
                if d in directed:
                    raise MeshError(f"edge {d} traversed twice in the same direction (overlap or inverted orientation)")
                directed.add(d)
        for g, els in enumerate(edge_elements):
            if len(els) > 2:
                raise MeshError(f"edge {edges[g]} shared by {len(els)} triangles (non-conforming)")
        self.edges = np.array(edges, int).reshape(-1, 2)
        self.edge_elements = [tuple(e) for e in edge_elements]
        self.element_edges = element_edges
        self.boundary = np.array([len(e) == 1 for e in edge_elements])
        _check_hanging(self.vertices, self.edges[self.boundary])
        diam = []
        ratio = []
        for tri in self.triangles:
            P = self.vertices[tri]
            lens = np.linalg.norm(P[[1, 2, 0]] - P, axis=1)
            area = 0.5 * abs(np.linalg.det(np.column_stack([P[1] - P[0], P[2] - P[0]])))
            inradius = 2.0 * area / lens.sum()
            diam.append(lens.max())
            ratio.append(lens.max() / inradius)
        self.h = float(max(diam))
        self.shape_ratio = float(max(ratio))

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_elements(self):
        return len(self.triangles)

    def element_map(self, t):
        return ElementMap.from_vertices(self.vertices[self.triangles[t]])

    @cached_property
    def maps(self):
        return [self.element_map(t) for t in range(self.n_elements)]

    def edge_geometry(self, g):
        """Start point, direction (unnormalized), length, unit tangent and normal."""
        a, b = self.edges[g]
        P, Q = self.vertices[a], self.vertices[b]
        d = Q - P
        length = float(np.linalg.norm(d))
        tau = d / length
        n = np.array([tau[1], -tau[0]])
        return P, d, length, tau, n

    def outward_sign(self, g, t):
        """``+1`` when the global edge normal points out of element ``t``."""
        P, d, _, _, n = self.edge_geometry(g)
        c = self.vertices[self.triangles[t]].mean(axis=0)
        return 1.0 if np.dot(P + 0.5 * d - c, n) > 0 else -1.0


def _validate(V, T):
    if V.ndim != 2 or V.shape[1] != 2:
        raise MeshError("vertices must be an N x 2 array")
    if T.ndim != 2 or T.shape[1] != 3:
        raise MeshError("triangles must be an M x 3 array")
    if len(T) == 0:
        raise MeshError("mesh has no triangles")
    if T.min() < 0 or T.max() >= len(V):
        raise MeshError("triangle references a vertex index out of range")
    scale = max(np.ptp(V, axis=0).max(), 1e-300)
    for t, tri in enumerate(T):
        if len(set(tri.tolist())) < 3:
            raise MeshError(f"triangle {t} repeats a vertex")
        P = V[tri]
        det = np.linalg.det(np.column_stack([P[1] - P[0], P[2] - P[0]]))
        if abs(det) <= 1e-12 * scale * scale:
            raise MeshError(f"triangle {t} is degenerate (zero area)")
        if det < 0:
            raise MeshError(f"triangle {t} is inverted (clockwise)")


def _check_hanging(V, bedges):
    for a, b in bedges:
        P, Q = V[a], V[b]
        d = Q - P
        L2 = d @ d
        rel = V - P
        s = rel @ d / L2
        cross = rel[:, 0] * d[1] - rel[:, 1] * d[0]
        inside = (s > 1e-12) & (s < 1 - 1e-12) & (np.abs(cross) <= 1e-10 * L2)
        if np.any(inside):
            v = int(np.nonzero(inside)[0][0])
            raise MeshError(f"vertex {v} lies inside edge ({a}, {b}) (hanging node)")


def parse_mesh(text):
    """Parse the ASCII ``mesh2d 1`` format; errors carry 1-based line numbers."""
    lines = [(i + 1, ln.split("#", 1)[0].strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln]
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise MeshError("unexpected end of input")
        item = lines[pos]
        pos += 1
        return item

    def fail(lineno, msg):
        raise MeshError(f"line {lineno}: {msg}")

    ln, s = take()
    if s.split() != ["mesh2d", "1"]:
        fail(ln, f"expected header 'mesh2d 1', got {s!r}")

    def count(keyword):
        ln, s = take()
        parts = s.split()
        if len(parts) != 2 or parts[0] != keyword:
            fail(ln, f"expected '{keyword} <count>'")
        try:
            n = int(parts[1])
        except ValueError:
            fail(ln, f"invalid count {parts[1]!r}")
        if n < 0:
            fail(ln, "negative count")
        return n

    nv = count("vertices")
    V = np.zeros((nv, 2))
    for i in range(nv):
        ln, s = take()
        parts = s.split()
        if len(parts) != 2:
            fail(ln, "vertex line needs two coordinates")
        try:
            V[i] = [float(p) for p in parts]
        except ValueError:
            fail(ln, f"invalid coordinate in {s!r}")
        if not np.all(np.isfinite(V[i])):
            fail(ln, "non-finite coordinate")
    nt = count("triangles")
    T = np.zeros((nt, 3), int)
    tri_lines = []
    for i in range(nt):
        ln, s = take()
        parts = s.split()
        if len(parts) != 3:
            fail(ln, "triangle line needs three vertex indices")
        try:
            T[i] = [int(p) for p in parts]
        except ValueError:
            fail(ln, f"invalid index in {s!r}")
        if T[i].min() < 0 or T[i].max() >= nv:
            fail(ln, f"vertex index out of range 0..{nv - 1}")
        tri_lines.append(ln)
    if pos != len(lines):
        fail(lines[pos][0], "trailing content after triangle list")
    try:
        return Mesh(V, T)
    except MeshError as exc:
        msg = str(exc)
        if msg.startswith("triangle "):
            idx = int(msg.split()[1])
            raise MeshError(f"line {tri_lines[idx]}: {msg}") from None
        raise


def format_mesh(mesh):
    out = ["mesh2d 1", f"vertices {len(mesh.vertices)}"]
    out += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    out.append(f"triangles {len(mesh.triangles)}")
    out += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    return "\n".join(out) + "\n"


def square_mesh(n, a=0.0, b=1.0):
    """Structured mesh of ``[a, b]^2``: ``n x n`` cells, each cut along a diagonal."""
    if n < 1:
        raise MeshError("square mesh needs n >= 1")
    xs = np.linspace(a, b, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    V = np.column_stack([X.ravel(), Y.ravel()])
    T = []
    for j in range(n):
        for i in range(n):
            v0 = j * (n + 1) + i
            v1, v2, v3 = v0 + 1, v0 + n + 1, v0 + n + 2
            T.append((v0, v1, v3))
            T.append((v0, v3, v2))
    return Mesh(V, np.array(T))


def reference_mesh():
    return Mesh(REF_VERTS.copy(), np.array([[0, 1, 2]]))


# ---------------------------------------------------------------------------
# spaces
# ---------------------------------------------------------------------------




def _edge_local_param(mesh, t, li):
    """Whether the local reference parameter runs opposite to the global one."""
    tri = mesh.triangles[t]
    a, _ = (int(tri[v]) for v in REF_EDGE_VERTS[li])
    g = mesh.element_edges[t, li - 1]
    return a != mesh.edges[g][0]


def edge_reference_points(mesh, t, li, tg):
    """Reference coordinates in element ``t`` of global edge parameters ``tg``."""
    s = 1.0 - tg if _edge_local_param(mesh, t, li) else np.asarray(tg, float)
    return modal.edge_point(li, s)


def physical_basis(em, k, xh, yh):
    """Values and physical gradients of the composed Dubiner basis.

    Returns ``V`` and ``(Gx, Gy)`` with shape ``(dim_p(k), npts)``.
    """
    V, Vx, Vy = modal.dubiner_eval(k, xh, yh, grad=True)
    Ji = em.Jinv
    Gx = Ji[0, 0] * Vx + Ji[1, 0] * Vy
    Gy = Ji[0, 1] * Vx + Ji[1, 1] * Vy
    return V, Gx, Gy


@dataclass
class VelocitySpace:
    mesh: Mesh
    k: int
    coeff_maps: list  # per element: (2N x nloc) local dofs -> Dubiner coefficients
    dof_map: np.ndarray  # per element: global indices of the nloc local dofs
    ndof: int

    kind = "velocity_hdiv"

    @property
    def n_edge_dofs(self):
        return self.mesh.n_edges * (self.k + 1)

    def edge_dofs(self, g):
        return np.arange(g * (self.k + 1), (g + 1) * (self.k + 1))

    def boundary_dofs(self):
        gs = np.nonzero(self.mesh.boundary)[0]
        if len(gs) == 0:
            return np.zeros(0, int)
        return np.concatenate([self.edge_dofs(g) for g in gs])

    def interior_normal_free(self):
        """Dofs left after removing boundary normal moments."""
        mask = np.ones(self.ndof, bool)
        mask[self.boundary_dofs()] = False
        return np.nonzero(mask)[0]

    def element_coeffs(self, t, u):
        """Dubiner coefficients ``(cx, cy)`` of a global vector on element ``t``."""
        c = self.coeff_maps[t] @ u[self.dof_map[t]]
        N = dim_p(self.k)
        return c[:N], c[N:]

    def evaluate(self, t, u, xh, yh):
        cx, cy = self.element_coeffs(t, u)
        V = modal.dubiner_eval(self.k, xh, yh)
        return cx @ V, cy @ V


@dataclass
class PressureSpace:
    mesh: Mesh
    k: int  # velocity degree; the pressure degree is k - 1
    ndof: int

    kind = "pressure_disc"

    @property
    def nloc(self):
        return dim_p(self.k - 1)

    def dofs(self, t):
        return np.arange(t * self.nloc, (t + 1) * self.nloc)

    def mean_row(self):
        """Row ``m`` with ``m . q = int_Omega q``."""
        m = np.zeros(self.ndof)
        for t, em in enumerate(self.mesh.maps):
            # the constant Dubiner function is sqrt(2); the reference area is 1/2
            m[t * self.nloc] = em.det / np.sqrt(2.0)
        return m


def _normal_moment_rows(mesh, t, k):
    """Rows mapping element Dubiner coefficients to the 3(k+1) edge moments."""
    em = mesh.maps[t]
    rule = modal.edge_rule(k + 1)
    L = modal.legendre01(k, rule.nodes)
    N = dim_p(k)
    rows = []
    for li in (1, 2, 3):
        g = mesh.element_edges[t, li - 1]
        n = mesh.edge_geometry(g)[4]
        xh, yh = edge_reference_points(mesh, t, li, rule.nodes)
        V = modal.dubiner_eval(k, xh, yh)
        M = (L * rule.weights) @ V.T  # (k+1, N)
        rows.append(np.hstack([n[0] * M, n[1] * M]))
    R = np.vstack(rows)
    assert R.shape == (3 * (k + 1), 2 * N)
    return R


def build_spaces(mesh, k):
    """Velocity (BDM-type, normal-continuous) and pressure spaces of degree ``k``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    ne = mesh.n_edges
    nint = (k + 1) * (k - 1)
    coeff_maps = []
    dof_map = np.zeros((mesh.n_elements, 3 * (k + 1) + nint), int)
    for t in range(mesh.n_elements):
        R = _normal_moment_rows(mesh, t, k)
        Nint = linalg.null_space(R)
        if Nint.shape[1] != nint:
            raise RuntimeError("normal moment functionals are not independent")
        C = np.linalg.inv(np.vstack([R, Nint.T]))
        coeff_maps.append(C)
        glob = [mesh.element_edges[t, li - 1] * (k + 1) + np.arange(k + 1) for li in (1, 2, 3)]
        glob.append(ne * (k + 1) + t * nint + np.arange(nint))
        dof_map[t] = np.concatenate(glob)
    vel = VelocitySpace(mesh, k, coeff_maps, dof_map, ne * (k + 1) + mesh.n_elements * nint)
    pre = PressureSpace(mesh, k, mesh.n_elements * dim_p(k - 1))
    return vel, pre


# ---------------------------------------------------------------------------
# assembly helpers shared by the Stokes and inf-sup modules
# ---------------------------------------------------------------------------


def element_gradient_matrices(em, k):
    """Physical derivative matrices in the composed Dubiner basis."""
    Dx, Dy = modal.diff_matrices(k)
    Ji = em.Jinv
    return Ji[0, 0] * Dx + Ji[1, 0] * Dy, Ji[0, 1] * Dx + Ji[1, 1] * Dy


def _coo(rows, cols, vals, shape):
    return sparse.coo_matrix(
        (np.concatenate(vals) if vals else np.zeros(0),
         (np.concatenate(rows) if rows else np.zeros(0, int), np.concatenate(cols) if cols else np.zeros(0, int))),
        shape=shape,
    ).tocsr()


def _add_block(rows, cols, vals, I, J, M):
    rows.append(np.repeat(I, len(J)))
    cols.append(np.tile(J, len(I)))
    vals.append(np.asarray(M).ravel())


def broken_h1_blocks(vel):
    """Per element ``(dofs, C^T (grad:grad) C)``."""
    mesh, k = vel.mesh, vel.k
    out = []
    for t, em in enumerate(mesh.maps):
        Px, Py = element_gradient_matrices(em, k)
        S = abs(em.det) * (Px.T @ Px + Py.T @ Py)
        K = linalg.block_diag(S, S)
        C = vel.coeff_maps[t]
        out.append((vel.dof_map[t], C.T @ K @ C))
    return out


def edge_traces(vel, g, tg):
    """For each neighbour of edge ``g``: local dofs, ``v . tau`` and ``tau^T grad v n``.

    ``tau, n`` are the global edge tangent and normal.  Rows of the returned
    matrices index local dofs, columns the points ``tg``.
    """
    mesh, k = vel.mesh, vel.k
    _, _, _, tau, n = mesh.edge_geometry(g)
    out = []
    for t, li in mesh.edge_elements[g]:
        em = mesh.maps[t]
        xh, yh = edge_reference_points(mesh, t, li, tg)
        V, Gx, Gy = physical_basis(em, k, xh, yh)
        dn = n[0] * Gx + n[1] * Gy
        vt = np.vstack([tau[0] * V, tau[1] * V])
        dnt = np.vstack([tau[0] * dn, tau[1] * dn])
        C = vel.coeff_maps[t]
        out.append((t, vel.dof_map[t], C.T @ vt, C.T @ dnt, mesh.outward_sign(g, t)))
    return out


def dg_gram(mesh, vel, k, weight):
    """``sum_T |v|_1^2 + weight * sum_E ||[v . tau]||^2`` (boundary: the trace)."""
    rows, cols, vals = [], [], []
    for I, M in broken_h1_blocks(vel):
        _add_block(rows, cols, vals, I, I, M)
    rule = modal.edge_rule(k + 1)
    for g in range(mesh.n_edges):
        length = mesh.edge_geometry(g)[2]
        sides = edge_traces(vel, g, rule.nodes)
        # jump = (+) - (-) with the sign from the global normal orientation
        for _, I, vt, _, sI in sides:
            for _, J, wt, _, sJ in sides:
                _add_block(rows, cols, vals, I, J, weight * length * sI * sJ * (vt * rule.weights) @ wt.T)
    return _coo(rows, cols, vals, (vel.ndof, vel.ndof))


def divergence_matrix(mesh, vel, pre):
    """``B[q, v] = sum_T int_T div(v) q``."""
    k = vel.k
    nq = pre.nloc
    rows, cols, vals = [], [], []
    for t, em in enumerate(mesh.maps):
        Px, Py = element_gradient_matrices(em, k)
        D = abs(em.det) * np.hstack([Px[:nq], Py[:nq]])
        _add_block(rows, cols, vals, pre.dofs(t), vel.dof_map[t], D @ vel.coeff_maps[t])
    return _coo(rows, cols, vals, (pre.ndof, vel.ndof))


def pressure_mass(pre):
    d = np.concatenate([np.full(pre.nloc, abs(em.det)) for em in pre.mesh.maps])
    return sparse.diags(d).tocsr()
