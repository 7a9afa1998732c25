import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvedfiber.mesh import (
    MeshParseError,
    MeshTopologyError,
    TetMesh,
    TriMesh,
    VertexField,
    k_ring,
    load_tet_mesh,
    save_tet_mesh,
    tet_gradient,
    tri_gradients,
)
from curvedfiber.models import (
    annulus,
    box_mesh,
    five_tet_cube,
    grid_square,
    plate_with_holes,
    single_tet,
)


class TestTetMesh:
    def test_five_tet_cube_basics(self):
        m = five_tet_cube()
        assert len(m.tets) == 5
        assert len(m.boundary_faces) == 12
        assert m.volumes.sum() == pytest.approx(1.0, abs=1e-12)
        # Euler characteristic of a solid ball: V - E + F - T = 1
        faces = set()
        for tet in m.tets:
            for f in ([0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]):
                faces.add(tuple(sorted(tet[f])))
        chi = len(m.vertices) - len(m.edges) + len(faces) - len(m.tets)
        assert chi == 1

    def test_orientation_repair(self):
        verts = single_tet().vertices
        m = TetMesh(verts, np.array([[0, 2, 1, 3]]))  # inverted
        assert m.volumes[0] > 0

    def test_neighbors_symmetric(self):
        m = box_mesh(3, 3, 3)
        for e in range(len(m.tets)):
            for f in range(4):
                nb = m.tet_neighbors[e, f]
                if nb >= 0:
                    assert e in m.tet_neighbors[nb]

    def test_boundary_normals_outward(self):
        m = five_tet_cube()
        centers = m.vertices[m.boundary_faces].mean(axis=1)
        a, b, c = (m.vertices[m.boundary_faces[:, k]] for k in range(3))
        n = np.cross(b - a, c - a)
        outward = np.einsum("ij,ij->i", n, centers - 0.5)
        assert (outward > 0).all()

    def test_gradient_exact_linear(self):
        m = five_tet_cube()
        fld = VertexField(m, m.vertices @ np.array([2.0, 3.0, -1.0]))
        for e in range(len(m.tets)):
            assert tet_gradient(m, fld, e) == pytest.approx([2.0, 3.0, -1.0])

    def test_k_ring_growth(self):
        m = box_mesh(4, 4, 4)
        r0 = k_ring(m, np.array([0]), 0)
        r1 = k_ring(m, np.array([0]), 1)
        r2 = k_ring(m, np.array([0]), 2)
        assert set(r0) == {0}
        assert set(r0) < set(r1) < set(r2)

    def test_labels(self):
        m = five_tet_cube()
        m.set_label("fixture", [0, 1])
        flags = m.label_flags("fixture")
        touched = {tuple(sorted(t)) for t in m.tets[flags]}
        assert all(0 in t or 1 in t for t in touched)

    def test_roundtrip_tetgen(self, tmp_path):
        m = box_mesh(2, 2, 2)
        save_tet_mesh(m, tmp_path / "m.node")
        m2 = load_tet_mesh(tmp_path / "m.node")
        assert np.allclose(m.vertices, m2.vertices)
        assert np.array_equal(m.tets, m2.tets)

    def test_parse_error_reported(self, tmp_path):
        (tmp_path / "bad.node").write_text("not a mesh\n")
        with pytest.raises(MeshParseError):
            load_tet_mesh(tmp_path / "bad.node")


class TestTriMesh:
    def test_grid_square_area(self):
        m = grid_square(n=8, size=2.0)
        assert m.face_areas.sum() == pytest.approx(4.0, abs=1e-12)
        assert len(m.boundary_loops) == 1
        assert m.euler_characteristic == 1

    def test_plate_with_holes_topology(self):
        m = plate_with_holes(
            nx=40, ny=24, size_x=20.0, size_y=12.0,
            holes=((6.0, 6.0, 1.8), (14.0, 6.0, 1.8)),
        )
        assert len(m.boundary_loops) == 3
        assert m.euler_characteristic == -1

    def test_annulus_topology(self):
        m = annulus()
        assert len(m.boundary_loops) == 2
        assert m.euler_characteristic == 0

    def test_tri_gradients_exact_linear(self):
        m = grid_square(n=5)
        g = tri_gradients(m, m.vertices @ np.array([3.0, -2.0, 0.0]))
        assert np.allclose(g, [3.0, -2.0, 0.0], atol=1e-12)

    def test_non_manifold_rejected(self):
        verts = np.array(
            [[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, -1, 0]]
        )
        with pytest.raises(MeshTopologyError):
            TriMesh(
                verts,
                np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]]),
                check_area=False,
            ).boundary_loops


@settings(max_examples=25, deadline=None)
@given(
    coeffs=st.tuples(
        st.floats(-10, 10, allow_nan=False),
        st.floats(-10, 10, allow_nan=False),
        st.floats(-10, 10, allow_nan=False),
    )
)
def test_gradient_matches_linear_field(coeffs):
    m = five_tet_cube()
    c = np.asarray(coeffs)
    fld = VertexField(m, m.vertices @ c)
    for e in range(len(m.tets)):
        assert np.allclose(tet_gradient(m, fld, e), c, atol=1e-9)
