import numpy as np
import pytest

from curvedfiber.layerfield import (
    LayerFieldProblem,
    extract_isosurfaces,
    slab_anchors,
    solve_guidance_field,
)
from curvedfiber.mesh import TriMesh, VertexField
from curvedfiber.models import (
    annulus,
    grid_square,
    make_uniform_bar,
    plate_with_holes,
    uniform_bar_stress,
)
from curvedfiber.psl import PslWeights
from curvedfiber.regions import SphereSelector
from curvedfiber.stress import principal_decompose
from curvedfiber.surfpath import (
    CriticalContours,
    CutGraph,
    LayerStress,
    TopologyAnalysisError,
    build_cut_graph,
    cut_mesh,
    default_n_paths,
    detect_contours,
    extract_isocurves,
    generate_layer_toolpaths,
    geodesic_field,
    isocurve_max_degree,
    project_stress,
    region_center,
    solve_toolpath_field,
    split_components,
    sweep_anchor_vertices,
    voronoi_partition,
)


def _square_with_sources(n=10):
    """Unit grid square whose faces all claim source tet 0."""
    m = grid_square(n=n)
    return TriMesh(
        m.vertices, m.faces,
        source_tet=np.zeros(len(m.faces), dtype=np.int64),
        check_area=False,
    )


def _uniaxial_layer_stress(surface, direction=(1.0, 0.0, 0.0), magnitude=5.0):
    f = len(surface.faces)
    return LayerStress(
        magnitude=np.full(f, magnitude),
        direction=np.tile(np.asarray(direction, dtype=float), (f, 1)),
        degenerate=np.zeros(f, dtype=bool),
    )


def _two_triangles():
    """Two disjoint triangles, far apart."""
    verts = np.array(
        [
            [0.0, 0, 0], [1, 0, 0], [0, 1, 0],
            [10.0, 0, 0], [11, 0, 0], [10, 1, 0],
        ]
    )
    faces = np.array([[0, 1, 2], [3, 4, 5]])
    return TriMesh(verts, faces, check_area=False)


class TestProjection:
    def test_in_plane_stress_unchanged(self):
        s = _square_with_sources()
        pr = principal_decompose(np.array([[5.0, 0, 0, 0, 0, 0]]))
        ls = project_stress(s, pr)
        assert np.allclose(ls.magnitude, 5.0)
        assert np.allclose(np.abs(ls.direction[:, 0]), 1.0, atol=1e-12)
        assert not ls.degenerate.any()

    def test_normal_stress_degenerate(self):
        s = _square_with_sources()
        # principal direction along z == the face normal of a flat layer
        pr = principal_decompose(np.array([[0.0, 0, 5.0, 0, 0, 0]]))
        ls = project_stress(s, pr)
        assert ls.degenerate.all()

    def test_oblique_projection(self):
        s = _square_with_sources()
        # 45 degrees between x and z projects to pure x in the layer plane
        pr = principal_decompose(
            np.array([[2.5, 0.0, 2.5, 0.0, 0.0, 2.5]])
        )
        ls = project_stress(s, pr)
        assert np.allclose(np.abs(ls.direction[:, 0]), 1.0, atol=1e-9)
        assert np.abs(ls.direction[:, 2]).max() < 1e-9

    def test_missing_source_tets_rejected(self):
        s = grid_square(n=3)
        pr = principal_decompose(np.array([[5.0, 0, 0, 0, 0, 0]]))
        with pytest.raises(TopologyAnalysisError):
            project_stress(s, pr)


class TestContours:
    def test_plate_two_holes(self):
        s = plate_with_holes(
            nx=40, ny=24, size_x=20.0, size_y=12.0,
            holes=((6.0, 6.0, 1.8), (14.0, 6.0, 1.8)),
        )
        sels = [
            SphereSelector(center=(6.0, 6.0, 0.0), radius=2.5),
            SphereSelector(center=(14.0, 6.0, 0.0), radius=2.5),
        ]
        c = detect_contours(s, sels)
        assert len(c.critical) == 2
        assert len(c.outer) == 1
        # the outer loop is the longest one
        assert len(c.outer[0]) > max(len(l) for l in c.critical)

    def test_no_selectors_all_outer(self):
        s = annulus()
        c = detect_contours(s, [])
        assert len(c.critical) == 0
        assert len(c.outer) == 2


class TestGeodesics:
    def test_flat_square_against_euclidean(self):
        s = grid_square(n=24)
        src = int(np.argmin(np.linalg.norm(s.vertices, axis=1)))  # corner (0,0)
        for method in ("heat", "dijkstra"):
            d = geodesic_field(s, [src], method=method)
            exact = np.linalg.norm(s.vertices - s.vertices[src], axis=1)
            far = exact > 0.25
            rel = np.abs(d[far] - exact[far]) / exact[far]
            # Dijkstra on a grid overestimates (taxicab bias); heat is tighter
            assert rel.max() < (0.05 if method == "heat" else 0.25)
            assert d[src] == pytest.approx(0.0, abs=1e-9)

    def test_annulus_rim_to_rim(self):
        s = annulus(n_rings=16, n_sectors=64, r_inner=1.0, r_outer=3.0)
        r = np.linalg.norm(s.vertices[:, :2], axis=1)
        loops = s.boundary_loops
        inner = min(loops, key=lambda l: r[l].mean())
        d = geodesic_field(s, inner, method="heat")
        outer_rim = r > 3.0 - 1e-9
        assert np.abs(d[outer_rim] - 2.0).max() < 0.05 * 2.0

    def test_unreachable_component_inf(self):
        s = _two_triangles()
        d = geodesic_field(s, [0], method="dijkstra")
        assert np.isfinite(d[:3]).all()
        assert np.isinf(d[3:]).all()

    def test_empty_sources_rejected(self):
        with pytest.raises(TopologyAnalysisError):
            geodesic_field(grid_square(n=3), [])

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError):
            geodesic_field(grid_square(n=3), [0], method="bfs")


class TestVoronoi:
    def test_nearest_source_wins(self):
        s = grid_square(n=10)
        left = int(np.argmin(s.vertices[:, 0] + s.vertices[:, 1]))
        right = int(np.argmax(s.vertices[:, 0] - s.vertices[:, 1]))
        fields = [
            geodesic_field(s, [left], method="dijkstra"),
            geodesic_field(s, [right], method="dijkstra"),
        ]
        part = voronoi_partition(s, fields)
        assert part[left] == 0 and part[right] == 1
        assert set(np.unique(part)) == {0, 1}

    def test_use_greatest_flips(self):
        s = grid_square(n=4)
        n = len(s.vertices)
        fields = [np.zeros(n), np.ones(n)]
        assert (voronoi_partition(s, fields) == 0).all()
        assert (voronoi_partition(s, fields, use_greatest=True) == 1).all()

    def test_unreachable_gets_minus_one(self):
        s = _two_triangles()
        d = geodesic_field(s, [0], method="dijkstra")
        part = voronoi_partition(s, [d])
        assert (part[:3] == 0).all()
        assert (part[3:] == -1).all()

    def test_field_length_checked(self):
        with pytest.raises(TopologyAnalysisError):
            voronoi_partition(grid_square(n=3), [np.zeros(4)])


class TestRegionCenter:
    def test_full_square_center(self):
        s = grid_square(n=8)
        c = region_center(s, np.arange(len(s.vertices)))
        assert np.allclose(s.vertices[c][:2], [0.5, 0.5], atol=1e-9)

    def test_matches_brute_force_oracle(self):
        s = annulus(n_rings=6, n_sectors=24)
        rng = np.random.default_rng(7)
        region = np.unique(rng.integers(0, len(s.vertices), 40))
        got = region_center(s, region)
        # oracle: area-weighted centroid over faces with >= 2 region vertices
        mask = np.zeros(len(s.vertices), dtype=bool)
        mask[region] = True
        sel = mask[s.faces].sum(axis=1) >= 2
        if sel.any():
            w = s.face_areas[sel]
            cen = (s.face_centroids[sel] * w[:, None]).sum(axis=0) / w.sum()
        else:
            cen = s.vertices[region].mean(axis=0)
        d = np.linalg.norm(s.vertices[region] - cen, axis=1)
        assert got == region[int(np.argmin(d))]

    def test_empty_region_rejected(self):
        with pytest.raises(TopologyAnalysisError):
            region_center(grid_square(n=3), [])


def _plate_pipeline():
    s = plate_with_holes(
        nx=40, ny=24, size_x=20.0, size_y=12.0,
        holes=((6.0, 6.0, 1.8), (14.0, 6.0, 1.8)),
    )
    sels = [
        SphereSelector(center=(6.0, 6.0, 0.0), radius=2.5),
        SphereSelector(center=(14.0, 6.0, 0.0), radius=2.5),
    ]
    contours = detect_contours(s, sels)
    fields = [geodesic_field(s, loop, method="dijkstra") for loop in contours.critical]
    part = voronoi_partition(s, fields)
    centers = [region_center(s, np.nonzero(part == i)[0]) for i in range(len(fields))]
    return s, contours, centers


class TestCutGraph:
    def test_paths_reach_each_contour(self):
        s, contours, centers = _plate_pipeline()
        cut = build_cut_graph(s, centers, contours, connect_outer=False)
        # one path per contour plus one center-to-center chain
        assert len(cut.paths) == 3
        cut_vs = cut.vertices()
        for loop in contours.critical:
            assert cut_vs & set(loop)
        # without the outer tie, cutting merges only the two hole loops
        work, _ = cut_mesh(s, cut)
        assert len(work.boundary_loops) == 2
        assert work.euler_characteristic == 0

    def test_cut_edges_are_mesh_edges(self):
        s, contours, centers = _plate_pipeline()
        cut = build_cut_graph(s, centers, contours)
        mesh_edges = {(int(a), int(b)) for a, b in s.edges}
        assert cut.cut_edges() <= mesh_edges

    def test_center_count_validated(self):
        s, contours, centers = _plate_pipeline()
        with pytest.raises(TopologyAnalysisError):
            build_cut_graph(s, centers[:1], contours)
        with pytest.raises(TopologyAnalysisError):
            build_cut_graph(s, centers, CriticalContours(critical=[], outer=[]))

    def test_local_directions_unit(self):
        s, contours, centers = _plate_pipeline()
        cut = build_cut_graph(s, centers, contours)
        dirs = cut.local_directions(s)
        assert len(dirs) > 0
        for f, vec in dirs:
            assert 0 <= f < len(s.faces)
            assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-12)


class TestCutMesh:
    def test_empty_cut_is_identity(self):
        s = grid_square(n=5)
        out, origin = cut_mesh(s, CutGraph(paths=[]))
        assert np.array_equal(out.vertices, s.vertices)
        assert np.array_equal(out.faces, s.faces)
        assert np.array_equal(origin, np.arange(len(s.vertices)))

    def test_plate_becomes_disk(self):
        s, contours, centers = _plate_pipeline()
        assert len(s.boundary_loops) == 3 and s.euler_characteristic == -1
        cut = build_cut_graph(s, centers, contours, connect_outer=True)
        work, origin = cut_mesh(s, cut)
        assert len(work.boundary_loops) == 1
        assert work.euler_characteristic == 1
        assert len(work.vertex_components()[1]) and work.vertex_components()[0] == 1

    def test_geometry_preserved(self):
        s, contours, centers = _plate_pipeline()
        cut = build_cut_graph(s, centers, contours)
        work, origin = cut_mesh(s, cut)
        assert len(work.faces) == len(s.faces)
        assert work.face_areas.sum() == pytest.approx(s.face_areas.sum(), abs=1e-9)
        assert np.allclose(work.vertices, s.vertices[origin])

    def test_non_mesh_edge_rejected(self):
        s = grid_square(n=5)
        # opposite corners of the square are not adjacent
        a = int(np.argmin(s.vertices[:, 0] + s.vertices[:, 1]))
        b = int(np.argmax(s.vertices[:, 0] + s.vertices[:, 1]))
        with pytest.raises(TopologyAnalysisError):
            cut_mesh(s, CutGraph(paths=[[a, b]]))


class TestToolpathField:
    def test_sweep_anchors_orthogonal_to_stress(self):
        s = grid_square(n=8)
        ls = _uniaxial_layer_stress(s, (1.0, 0.0, 0.0))
        lo, hi = sweep_anchor_vertices(s, ls)
        # sweep = normal x stress = +y, so anchors sit on the y extremes
        assert s.vertices[lo, 1] == pytest.approx(0.0, abs=1e-12)
        assert s.vertices[hi, 1] == pytest.approx(1.0, abs=1e-12)

    def test_stress_follow_gives_transverse_field(self):
        s = grid_square(n=8)
        ls = _uniaxial_layer_stress(s, (1.0, 0.0, 0.0))
        P = solve_toolpath_field(s, ls, [])
        # iso-curves of P run along x (the fiber direction), so P == y
        assert np.allclose(P, s.vertices[:, 1], atol=1e-8)

    def test_harmonic_between_contours(self):
        s = annulus(n_rings=10, n_sectors=48, r_inner=1.0, r_outer=3.0)
        r = np.linalg.norm(s.vertices[:, :2], axis=1)
        loops = s.boundary_loops
        inner = min(loops, key=lambda l: r[l].mean())
        outer = max(loops, key=lambda l: r[l].mean())
        ls = LayerStress(
            magnitude=np.zeros(len(s.faces)),
            direction=np.zeros((len(s.faces), 3)),
            degenerate=np.ones(len(s.faces), dtype=bool),
        )
        P = solve_toolpath_field(
            s, ls, [], weight_sf=0.0, weight_cp=0.0,
            ones_vertices=inner, zeros_vertices=outer,
        )
        assert np.allclose(P[inner], 1.0, atol=1e-9)
        assert np.allclose(P[outer], 0.0, atol=1e-9)
        mid = np.abs(r - 2.0) < 0.11
        assert (P[mid] > 0.05).all() and (P[mid] < 0.95).all()
        # monotone in radius on average
        assert np.corrcoef(r, P)[0, 1] < -0.99

    def test_empty_objective_rejected(self):
        from curvedfiber.layerfield import FieldSolveError

        s = grid_square(n=3)
        ls = LayerStress(
            magnitude=np.zeros(len(s.faces)),
            direction=np.zeros((len(s.faces), 3)),
            degenerate=np.ones(len(s.faces), dtype=bool),
        )
        with pytest.raises(FieldSolveError):
            solve_toolpath_field(s, ls, [], weight_sf=1.0, weight_cp=1.0,
                                 weight_hf=0.0)


class TestIsocurves:
    def test_square_straight_lines(self):
        s = grid_square(n=10)
        paths = extract_isocurves(s, s.vertices[:, 1], 4)
        assert len(paths) == 4
        for tp in paths:
            assert not tp.closed
            assert np.ptp(tp.waypoints[:, 1]) < 1e-9
            assert np.ptp(tp.waypoints[:, 0]) == pytest.approx(1.0, abs=1e-9)
        # innermost (highest iso) first
        isos = [tp.params[0] for tp in paths]
        assert isos == sorted(isos, reverse=True)

    def test_annulus_closed_loops(self):
        s = annulus(n_rings=10, n_sectors=48, r_inner=1.0, r_outer=3.0)
        r = np.linalg.norm(s.vertices[:, :2], axis=1)
        vals = (3.0 - r) / 2.0  # 1 at inner rim, 0 at outer rim
        paths = extract_isocurves(s, vals, 3)
        assert len(paths) == 3
        for tp in paths:
            assert tp.closed
            radii = np.linalg.norm(tp.waypoints[:, :2], axis=1)
            assert np.ptp(radii) < 0.02
            # closed-loop length ~ 2 pi r
            assert tp.length == pytest.approx(
                2 * np.pi * radii.mean(), rel=0.02
            )

    def test_normals_unit(self):
        s = grid_square(n=8)
        paths = extract_isocurves(s, s.vertices[:, 1], 2)
        for tp in paths:
            assert np.allclose(np.linalg.norm(tp.normals, axis=1), 1.0, atol=1e-9)

    def test_junction_audit_clean(self):
        s = grid_square(n=10)
        assert isocurve_max_degree(s, s.vertices[:, 1], 6) <= 2

    def test_default_n_paths_matches_gradient(self):
        s = grid_square(n=10)
        assert default_n_paths(s, s.vertices[:, 1], 0.25) == 4
        assert default_n_paths(s, s.vertices[:, 1], 0.1) == 10

    def test_bad_n_paths_rejected(self):
        with pytest.raises(ValueError):
            extract_isocurves(grid_square(n=3), np.zeros(16), 0)


class TestComponents:
    def test_split_two_triangles(self):
        s = _two_triangles()
        parts = split_components(s)
        assert len(parts) == 2
        seen = sorted(int(v) for _, vmap in parts for v in vmap)
        assert seen == list(range(6))
        for sub, vmap in parts:
            assert np.allclose(sub.vertices, s.vertices[vmap])

    def test_single_component_identity(self):
        s = grid_square(n=4)
        parts = split_components(s)
        assert len(parts) == 1
        assert parts[0][0] is s


class TestLayerToolpaths:
    def test_uniform_bar_layer_follows_stress(self):
        mesh = make_uniform_bar(nx=8, ny=3, nz=3)
        pr = principal_decompose(uniform_bar_stress(mesh))
        w = PslWeights(n_psl=np.ones(len(mesh.tets), dtype=np.int64))
        lo, hi = slab_anchors(mesh, [0, 0, 1.0])
        G = solve_guidance_field(
            mesh, pr, w, LayerFieldProblem(anchors_low=lo, anchors_high=hi)
        )
        layer = extract_isosurfaces(mesh, G, 3)[1]
        paths, contours, diag = generate_layer_toolpaths(
            layer, pr, critical_selectors=(), n_paths=4
        )
        assert len(paths) == 4
        assert diag["components"] == 1
        assert diag["fallback_anchors"] == 1
        assert len(contours.critical) == 0 and len(contours.outer) == 1
        for tp in paths:
            assert tp.material == "fiber"
            segs = np.diff(tp.waypoints, axis=0)
            segs /= np.linalg.norm(segs, axis=1, keepdims=True)
            assert np.abs(segs[:, 0]).min() > 0.99  # along the bar axis

    def test_matrix_paths_added(self):
        mesh = make_uniform_bar(nx=6, ny=2, nz=2)
        pr = principal_decompose(uniform_bar_stress(mesh))
        w = PslWeights(n_psl=np.ones(len(mesh.tets), dtype=np.int64))
        lo, hi = slab_anchors(mesh, [0, 0, 1.0])
        G = solve_guidance_field(
            mesh, pr, w, LayerFieldProblem(anchors_low=lo, anchors_high=hi)
        )
        layer = extract_isosurfaces(mesh, G, 3)[1]
        paths, _, _ = generate_layer_toolpaths(
            layer, pr, n_paths=3, matrix_paths=True
        )
        mats = {tp.material for tp in paths}
        assert mats == {"fiber", "matrix"}
        # path indices are unique and sequential
        assert [tp.path_index for tp in paths] == list(range(len(paths)))
