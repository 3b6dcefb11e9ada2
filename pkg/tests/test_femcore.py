import numpy as np
import pytest

from hdivlbb import femcore, modal
from hdivlbb.femcore import MeshError

from oracles import central_gradient

TWO_TRI = """mesh2d 1
# unit square
vertices 4
0 0
1 0
1 1
0 1
triangles 2
0 1 2
0 2 3
"""


def _stretched_mesh():
    V = [[0.0, 0.0], [3.0, 0.2], [0.4, 0.9], [2.6, 1.7]]
    return femcore.Mesh(V, [[0, 1, 2], [1, 3, 2]])


def test_parse_two_triangles():
    m = femcore.parse_mesh(TWO_TRI)
    assert (len(m.vertices), m.n_elements, m.n_edges, int(m.boundary.sum())) == (4, 2, 5, 4)


def test_format_round_trip():
    m = femcore.square_mesh(3)
    m2 = femcore.parse_mesh(femcore.format_mesh(m))
    assert np.array_equal(m.vertices, m2.vertices) and np.array_equal(m.triangles, m2.triangles)


@pytest.mark.parametrize("n", [1, 2, 5])
def test_square_generator_counts(n):
    assert femcore.square_mesh(n).n_elements == 2 * n * n


@pytest.mark.parametrize(
    "text, needle",
    [
        (TWO_TRI.replace("0 2 3", "0 1 1"), "line 10"),
        (TWO_TRI.replace("1 1\n0 1", "2 0\n0 1"), "degenerate"),
        (TWO_TRI.replace("0 2 3", "0 3 2"), "inverted"),
        (TWO_TRI.replace("0 2 3", "0 2 7"), "out of range"),
        (TWO_TRI.replace("mesh2d 1", "mesh 1"), "line 1"),
        (TWO_TRI + "extra\n", "trailing"),
        (TWO_TRI.replace("0 1\ntri", "0 nan\ntri"), "non-finite"),
    ],
)
def test_parse_errors(text, needle):
    with pytest.raises(MeshError, match=needle):
        femcore.parse_mesh(text)


def test_overlap_and_hanging_node_rejected():
    with pytest.raises(MeshError):
        femcore.Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2], [0, 1, 2]])
    V = [[0, 0], [2, 0], [1, 1], [1, 0]]
    with pytest.raises(MeshError, match="hanging"):
        femcore.Mesh(V, [[0, 1, 2]])


def test_reference_triangle_k1_dims():
    vel, pre = femcore.build_spaces(femcore.reference_mesh(), 1)
    # div of BDM_1 is piecewise constant, so one pressure dof per element
    assert (vel.ndof, pre.ndof) == (6, 1)


@pytest.mark.parametrize("k", range(1, 9))
def test_dimension_counts_two_triangles(k):
    m = femcore.parse_mesh(TWO_TRI)
    vel, pre = femcore.build_spaces(m, k)
    # shared edge counted once: 5 edges, 2 interior blocks
    assert vel.ndof == 5 * (k + 1) + 2 * (k + 1) * (k - 1)
    assert vel.ndof == 2 * (k + 1) * (k + 2) - (k + 1)
    assert pre.ndof == 2 * modal.dim_p(k - 1)


def _physical_eval(vel, t, u):
    em = vel.mesh.maps[t]

    def f(x, y):
        xh, yh = em.to_reference(x, y)
        return vel.evaluate(t, u, xh, yh)

    return f


@pytest.mark.parametrize("k", [1, 3, 5])
def test_normal_continuity(k, rng):
    m = _stretched_mesh() if k != 3 else femcore.square_mesh(2)
    vel, _ = femcore.build_spaces(m, k)
    u = rng.standard_normal(vel.ndof)
    s = np.linspace(0.03, 0.97, 10)
    for g in range(m.n_edges):
        if m.boundary[g]:
            continue
        P, d, _, _, n = m.edge_geometry(g)
        x, y = P[0] + s * d[0], P[1] + s * d[1]
        vals = []
        for t, _ in m.edge_elements[g]:
            vx, vy = _physical_eval(vel, t, u)(x, y)
            vals.append(n[0] * vx + n[1] * vy)
        assert np.abs(vals[0] - vals[1]).max() <= 1e-10 * max(1.0, np.abs(vals[0]).max())


def test_divergence_lies_in_pressure_space():
    m = _stretched_mesh()
    k = 3
    vel, pre = femcore.build_spaces(m, k)
    B = femcore.divergence_matrix(m, vel, pre).toarray()
    Mp = femcore.pressure_mass(pre).toarray()
    proj = np.linalg.solve(Mp, B)
    pts = (np.array([0.1, 0.3, 0.25, 0.6]), np.array([0.2, 0.1, 0.5, 0.3]))
    for j in range(vel.ndof):
        e = np.zeros(vel.ndof)
        e[j] = 1.0
        for t, em in enumerate(m.maps):
            x, y = em.to_physical(*pts)
            f = _physical_eval(vel, t, e)
            gx, _ = central_gradient(lambda a, b: f(a, b)[0], x, y, h=1e-3)
            _, gy = central_gradient(lambda a, b: f(a, b)[1], x, y, h=1e-3)
            Q = modal.dubiner_eval(k - 1, *pts)
            assert np.abs(proj[pre.dofs(t), j] @ Q - (gx + gy)).max() <= 1e-9


def test_pressure_constraint_and_constants():
    m = femcore.square_mesh(2)
    vel, pre = femcore.build_spaces(m, 2)
    one = np.zeros(pre.ndof)
    one[:: pre.nloc] = 1.0 / np.sqrt(2.0)  # constant Dubiner mode equals sqrt 2
    assert pre.mean_row() @ one == pytest.approx(1.0, abs=1e-14)
    B = femcore.divergence_matrix(m, vel, pre)
    free = vel.interior_normal_free()
    assert np.abs((B.T @ one)[free]).max() <= 1e-12


def test_map_field_identity_and_piola():
    ident = femcore.ElementMap.from_vertices([[0, 0], [1, 0], [0, 1]])
    field = lambda xh, yh: (xh * yh + 1.0, xh - yh**2)
    F = femcore.map_field(ident, field, "contravariant_piola")
    assert np.allclose(F(0.2, 0.3), field(0.2, 0.3), atol=1e-15)
    assert femcore.map_field(ident, lambda a, b: a + b, "scalar")(0.2, 0.3) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        femcore.map_field(ident, field, "bogus")

    em = femcore.ElementMap.from_vertices([[0.5, 0.1], [4.0, 0.6], [1.0, 1.2]])
    F = femcore.map_field(em, field, "contravariant_piola")
    g, w = np.polynomial.legendre.leggauss(8)
    s, w = 0.5 * (g + 1), 0.5 * w
    P = np.array([[0.5, 0.1], [4.0, 0.6], [1.0, 1.2]])
    ref = np.array([[0, 0], [1, 0], [0, 1]], float)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        d, dr = P[b] - P[a], ref[b] - ref[a]
        x, y = P[a][0] + s * d[0], P[a][1] + s * d[1]
        vx, vy = F(x, y)
        flux = np.sum(w * (vx * d[1] - vy * d[0]))
        rx, ry = field(ref[a][0] + s * dr[0], ref[a][1] + s * dr[1])
        rflux = np.sum(w * (rx * dr[1] - ry * dr[0]))
        assert flux == pytest.approx(rflux, abs=1e-11)
    # div of the Piola image equals div(field) / det at mapped points
    xh, yh = np.array([0.2, 0.1]), np.array([0.3, 0.6])
    x, y = em.to_physical(xh, yh)
    gx, _ = central_gradient(lambda a, b: F(a, b)[0], x, y)
    _, gy = central_gradient(lambda a, b: F(a, b)[1], x, y)
    ref_div = yh + (-2 * yh)
    assert np.allclose(gx + gy, ref_div / em.det, atol=1e-11)


def test_covariant_preserves_circulation():
    em = femcore.ElementMap.from_vertices([[0.5, 0.1], [4.0, 0.6], [1.0, 1.2]])
    field = lambda xh, yh: (1.0 + 0 * xh, 2.0 + 0 * yh)
    F = femcore.map_field(em, field, "covariant")
    vx, vy = F(1.0, 0.5)
    d = em.J[:, 0]  # image of the reference edge (1, 0)
    assert vx * d[0] + vy * d[1] == pytest.approx(1.0, abs=1e-14)
