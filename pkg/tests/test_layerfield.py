import numpy as np
import pytest

from curvedfiber.layerfield import (
    FieldSolveError,
    LayerFieldProblem,
    energy_residuals,
    extract_isosurfaces,
    marching_tets,
    measure_layer_thickness,
    slab_anchors,
    solve_guidance_field,
)
from curvedfiber.mesh import VertexField, tet_gradients
from curvedfiber.models import (
    box_mesh,
    five_tet_cube,
    make_uniform_bar,
    single_tet,
    uniform_bar_stress,
)
from curvedfiber.psl import PslWeights
from curvedfiber.stress import principal_decompose


@pytest.fixture(scope="module")
def bar_setup():
    mesh = make_uniform_bar(nx=8, ny=3, nz=3)
    pr = principal_decompose(uniform_bar_stress(mesh))
    weights = PslWeights(n_psl=np.ones(len(mesh.tets), dtype=np.int64))
    return mesh, pr, weights


class TestGuidanceSolve:
    def test_orthogonal_to_uniform_stress(self, bar_setup):
        mesh, pr, w = bar_setup
        lo, hi = slab_anchors(mesh, [0, 0, 1.0])
        problem = LayerFieldProblem(anchors_low=lo, anchors_high=hi)
        G = solve_guidance_field(mesh, pr, w, problem)
        g = tet_gradients(mesh, G.values)
        dots = np.abs(np.einsum("mi,mi->m", g, pr.dir_max))
        norms = np.linalg.norm(g, axis=1)
        assert (dots / norms).max() <= 1e-6

    def test_normalized_range(self, bar_setup):
        mesh, pr, w = bar_setup
        lo, hi = slab_anchors(mesh, [0, 0, 1.0])
        G = solve_guidance_field(
            mesh, pr, w, LayerFieldProblem(anchors_low=lo, anchors_high=hi)
        )
        assert G.values.min() == pytest.approx(0.0, abs=1e-12)
        assert G.values.max() == pytest.approx(1.0, abs=1e-12)

    def test_pure_smoothness_constant_gradient(self, bar_setup):
        mesh, pr, w = bar_setup
        lo, hi = slab_anchors(mesh, [0, 0, 1.0])
        problem = LayerFieldProblem(
            weight_sf=0.0, weight_cp=0.0,
            anchors_low=lo, anchors_high=hi,
        )
        G = solve_guidance_field(mesh, pr, w, problem)
        g = tet_gradients(mesh, G.values)
        assert np.var(g, axis=0).max() < 1e-10

    def test_roi_flattening(self, bar_setup):
        mesh, pr, w = bar_setup
        lo, hi = slab_anchors(mesh, [0, 0, 1.0])
        # ROI strictly between the anchor slabs, so flattening can win
        z = mesh.vertices[:, 2]
        roi = np.nonzero((z > 2.0) & (z < 8.0) & (mesh.vertices[:, 0] < 5.0 + 1e-9))[0]
        assert len(roi) > 3
        problem = LayerFieldProblem(
            weight_cp=1000.0, roi_regions=[roi],
            anchors_low=lo, anchors_high=hi,
        )
        G = solve_guidance_field(mesh, pr, w, problem)
        spread = np.ptp(G.values[roi])
        assert spread <= 1e-3 * np.ptp(G.values)

    def test_weight_monotonicity(self, bar_setup):
        mesh, pr, w = bar_setup
        lo, hi = slab_anchors(mesh, [0, 0, 1.0])
        z = mesh.vertices[:, 2]
        roi = [np.nonzero((z > 2.0) & (z < 8.0))[0]]
        res = []
        for wsf in (0.1, 1.0, 10.0):
            problem = LayerFieldProblem(
                weight_sf=wsf, roi_regions=roi, anchors_low=lo, anchors_high=hi
            )
            G = solve_guidance_field(mesh, pr, w, problem)
            res.append(energy_residuals(mesh, pr, w, problem, G.values)[0])
        assert res[0] >= res[1] >= res[2]

    def test_anchor_validation(self):
        with pytest.raises(FieldSolveError):
            LayerFieldProblem(anchors_low=[0], anchors_high=[0])
        with pytest.raises(FieldSolveError):
            LayerFieldProblem(anchors_low=[], anchors_high=[1])


class TestMarchingTets:
    def test_planar_layers_exact(self):
        m = five_tet_cube()
        G = VertexField(m, m.vertices[:, 2])
        layers = extract_isosurfaces(m, G, 4)
        for layer, z in zip(layers, (0.125, 0.375, 0.625, 0.875)):
            s = layer.surface
            assert np.abs(s.vertices[:, 2] - z).max() <= 1e-9
            assert s.face_areas.sum() == pytest.approx(1.0, abs=1e-9)
            assert len(s.boundary_loops) == 1

    def test_quad_case(self):
        m = single_tet()
        vals = np.array([0.0, 0.0, 1.0, 1.0])
        s = marching_tets(m, vals, 0.5)
        assert len(s.faces) == 2
        # crossing points at the midpoints of the four cut edges
        expected = {(0.0, 0.5, 0.0), (0.0, 0.0, 0.5), (0.5, 0.5, 0.0), (0.5, 0.0, 0.5)}
        got = {tuple(np.round(v, 9)) for v in s.vertices}
        assert got == expected

    def test_iso_at_vertex_value_perturbed(self):
        m = five_tet_cube()
        s = marching_tets(m, m.vertices[:, 2], 0.0)  # grazes the bottom face
        # perturbation pushes the surface inside; no exception, finite area
        assert np.isfinite(s.face_areas.sum())

    def test_normals_follow_gradient(self):
        m = five_tet_cube()
        s = marching_tets(m, m.vertices[:, 2], 0.5)
        assert (s.face_normals[:, 2] > 0.99).all()

    def test_source_tets_contain_faces(self):
        m = box_mesh(3, 3, 3)
        s = marching_tets(m, m.vertices[:, 2], 0.4)
        for f in range(len(s.faces)):
            tet = m.tets[s.source_tet[f]]
            lo = m.vertices[tet].min(axis=0) - 1e-8
            hi = m.vertices[tet].max(axis=0) + 1e-8
            pts = s.vertices[s.faces[f]]
            assert ((pts >= lo) & (pts <= hi)).all()

    def test_gauge_invariance(self):
        # power-of-two rescaling of field and iso level keeps every crossing
        # parameter bit-identical, so the surfaces must match exactly
        mesh = make_uniform_bar(nx=4, ny=2, nz=2)
        pr = principal_decompose(uniform_bar_stress(mesh))
        w = PslWeights(n_psl=np.ones(len(mesh.tets), dtype=np.int64))
        lo, hi = slab_anchors(mesh, [0, 0, 1.0])
        G = solve_guidance_field(
            mesh, pr, w, LayerFieldProblem(anchors_low=lo, anchors_high=hi)
        )
        for iso in (0.25, 0.5, 0.75):
            a = marching_tets(mesh, G.values, iso)
            b = marching_tets(mesh, G.values * 4.0, iso * 4.0)
            assert np.array_equal(a.vertices, b.vertices)
            assert np.array_equal(a.faces, b.faces)


class TestThickness:
    def test_uniform_layers(self):
        m = five_tet_cube()
        G = VertexField(m, m.vertices[:, 2])
        layers = extract_isosurfaces(m, G, 4)
        samples = layers[1].surface.vertices
        t = measure_layer_thickness(layers[1], layers[0], samples)
        assert np.allclose(t, 0.25, atol=1e-9)

    def test_identical_layers_zero(self):
        m = five_tet_cube()
        G = VertexField(m, m.vertices[:, 2])
        layers = extract_isosurfaces(m, G, 4)
        t = measure_layer_thickness(layers[1], layers[1], layers[1].surface.vertices)
        assert np.allclose(t, 0.0, atol=1e-12)

    def test_empty_previous_layer_nan(self):
        m = five_tet_cube()
        G = VertexField(m, m.vertices[:, 2])
        layers = extract_isosurfaces(m, G, 4)
        empty = marching_tets(m, m.vertices[:, 2], 2.0)
        from curvedfiber.layerfield import CurvedLayer

        prev = CurvedLayer(surface=empty, iso_value=2.0, layer_index=0)
        t = measure_layer_thickness(layers[1], prev, layers[1].surface.vertices)
        assert np.isnan(t).all()
