"""Per-layer toolpath generation: stress projection, topology analysis
(contours, geodesics, Voronoi, centers, cut graph, cutting), the toolpath
scalar field, and iso-curve extraction.

The topology steps turn each curved layer into a computational domain in
which all load-bearing boundary contours join the outer boundary, so a
single 0..1 field can sweep toolpaths that wind around every contour
without breaking fiber continuity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import dijkstra, minimum_spanning_tree

from .layerfield import CurvedLayer, FieldSolveError, _solve_constrained_lsq
from .mesh import MeshTopologyError, TriMesh, tri_gradients
from .stress import PrincipalStress

PROJECTION_DEGENERATE_TOL = 0.1  # pre-normalization magnitude threshold
DEFAULT_PATH_WEIGHTS = (1.0, 1.0, 1.0)  # (stress-follow, continuity, harmonic)


class TopologyAnalysisError(Exception):
    pass


# ----------------------------------------------------------------------
# Stress projection onto a layer


@dataclass
class LayerStress:
    magnitude: np.ndarray  # (f,) |sigma_max| of the source tet, MPa
    direction: np.ndarray = field(repr=False)  # (f, 3) unit tangent
    degenerate: np.ndarray = field(repr=False)  # (f,) bool


def project_stress(layer, tet_principal: PrincipalStress) -> LayerStress:
    """Project each face's source-tet principal direction into the face plane."""
    surface = layer.surface if isinstance(layer, CurvedLayer) else layer
    if surface.source_tet is None:
        raise TopologyAnalysisError("layer faces carry no source tets")
    src = surface.source_tet
    d = tet_principal.dir_max[src]
    n = surface.face_normals
    proj = d - np.einsum("ij,ij->i", n, d)[:, None] * n
    mag = np.linalg.norm(proj, axis=1)
    degenerate = mag < PROJECTION_DEGENERATE_TOL
    direction = np.zeros_like(proj)
    ok = mag > 1e-300
    direction[ok] = proj[ok] / mag[ok, None]
    return LayerStress(
        magnitude=np.abs(tet_principal.sigma_max[src]),
        direction=direction,
        degenerate=degenerate,
    )


# ----------------------------------------------------------------------
# Step 1: boundary contour classification


@dataclass
class CriticalContours:
    critical: list  # closed vertex loops inside the user's critical selectors
    outer: list  # remaining boundary loops


def detect_contours(layer, critical_selectors) -> CriticalContours:
    surface = layer.surface if isinstance(layer, CurvedLayer) else layer
    loops = surface.boundary_loops  # raises MeshTopologyError on open chains
    critical, outer = [], []
    for loop in loops:
        pts = surface.vertices[loop]
        hit = any(sel.contains(pts).any() for sel in critical_selectors)
        (critical if hit else outer).append(list(loop))
    return CriticalContours(critical=critical, outer=outer)


# ----------------------------------------------------------------------
# Step 2: geodesic distance fields (heat method, Dijkstra fallback)


def cotan_operators(surface: TriMesh):
    """Cotangent stiffness (PSD) and lumped mass matrices."""
    n = len(surface.vertices)
    f = surface.faces
    v = surface.vertices
    rows, cols, vals = [], [], []
    mass = np.zeros(n)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        e1 = v[f[:, j]] - v[f[:, i]]
        e2 = v[f[:, k]] - v[f[:, i]]
        cross = np.linalg.norm(np.cross(e1, e2), axis=1)
        cot = np.einsum("ij,ij->i", e1, e2) / np.maximum(cross, 1e-300)
        # clamp so sliver triangles cannot dominate the operator
        w = 0.5 * np.clip(cot, -1e6, 1e6)
        rows.extend([f[:, j], f[:, k], f[:, j], f[:, k]])
        cols.extend([f[:, k], f[:, j], f[:, j], f[:, k]])
        vals.extend([-w, -w, w, w])
    L = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    np.add.at(mass, f.ravel(), np.repeat(surface.face_areas / 3.0, 3))
    M = sp.diags(mass)
    return L, M


def _heat_geodesics(surface: TriMesh, sources: np.ndarray) -> np.ndarray:
    n = len(surface.vertices)
    L, M = cotan_operators(surface)
    t = surface.average_edge_length ** 2
    delta = np.zeros(n)
    delta[sources] = 1.0
    u = spla.spsolve((M + t * L).tocsc(), delta)

    g = tri_gradients(surface, u)
    gn = np.linalg.norm(g, axis=1)
    X = np.zeros_like(g)
    ok = gn > 1e-300
    X[ok] = -g[ok] / gn[ok, None]

    # integrated divergence of X at vertices
    v = surface.vertices
    f = surface.faces
    div = np.zeros(n)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        e1 = v[f[:, j]] - v[f[:, i]]
        e2 = v[f[:, k]] - v[f[:, i]]
        # cotangents at the corners opposite each edge incident to corner i
        a1 = v[f[:, i]] - v[f[:, k]]
        a2 = v[f[:, j]] - v[f[:, k]]
        cot_k = np.clip(
            np.einsum("ij,ij->i", a1, a2)
            / np.maximum(np.linalg.norm(np.cross(a1, a2), axis=1), 1e-300),
            -1e6,
            1e6,
        )
        b1 = v[f[:, i]] - v[f[:, j]]
        b2 = v[f[:, k]] - v[f[:, j]]
        cot_j = np.clip(
            np.einsum("ij,ij->i", b1, b2)
            / np.maximum(np.linalg.norm(np.cross(b1, b2), axis=1), 1e-300),
            -1e6,
            1e6,
        )
        contrib = 0.5 * (
            cot_k * np.einsum("ij,ij->i", e1, X)
            + cot_j * np.einsum("ij,ij->i", e2, X)
        )
        np.add.at(div, f[:, i], contrib)

    # Poisson solve with the sources pinned to zero
    mask = np.zeros(n, dtype=bool)
    mask[sources] = True
    free = np.nonzero(~mask)[0]
    phi = np.zeros(n)
    if len(free):
        Lff = L[free][:, free].tocsc()
        # L is the PSD cotan matrix (-Laplacian), so the Poisson step flips sign
        phi[free] = spla.spsolve(Lff, -div[free])
    return np.maximum(phi, 0.0)


def geodesic_field(surface_or_layer, sources, method: str = "heat") -> np.ndarray:
    """Approximate geodesic distance from a source vertex set.

    Vertices in components with no source get ``inf``.
    """
    surface = (
        surface_or_layer.surface
        if isinstance(surface_or_layer, CurvedLayer)
        else surface_or_layer
    )
    sources = np.unique(np.asarray(list(sources), dtype=np.int64))
    if len(sources) == 0:
        raise TopologyAnalysisError("geodesic field needs at least one source")
    ncomp, labels = surface.vertex_components()
    reach = np.isin(labels, np.unique(labels[sources]))

    if method == "dijkstra":
        dist = dijkstra(surface.vertex_adjacency, indices=sources, min_only=True)
    elif method == "heat":
        dist = _heat_geodesics(surface, sources)
    else:
        raise ValueError(f"unknown geodesic method {method!r}")
    dist = np.asarray(dist, dtype=np.float64)
    dist[~reach] = np.inf
    return dist


# ----------------------------------------------------------------------
# Steps 3-4: Voronoi tessellation and region centers


def voronoi_partition(surface, fields, use_greatest: bool = False) -> np.ndarray:
    """Assign each vertex to a region; nearest source by default.

    ``use_greatest`` flips to largest-field assignment (the alternative
    reading of the tessellation rule). Unreachable vertices get -1.
    """
    surface = surface.surface if isinstance(surface, CurvedLayer) else surface
    stacked = np.vstack([np.asarray(f) for f in fields])
    if stacked.shape[1] != len(surface.vertices):
        raise TopologyAnalysisError("fields must cover all vertices")
    finite = np.isfinite(stacked).any(axis=0)
    pick = np.argmax(stacked, axis=0) if use_greatest else np.argmin(stacked, axis=0)
    pick = pick.astype(np.int64)
    pick[~finite] = -1
    return pick


def region_center(surface, region_vertices) -> int:
    """Region vertex closest to the area-weighted centroid of region faces."""
    surface = surface.surface if isinstance(surface, CurvedLayer) else surface
    region = np.unique(np.asarray(list(region_vertices), dtype=np.int64))
    if len(region) == 0:
        raise TopologyAnalysisError("region is empty")
    mask = np.zeros(len(surface.vertices), dtype=bool)
    mask[region] = True
    in_count = mask[surface.faces].sum(axis=1)
    sel = in_count >= 2
    if sel.any():
        w = surface.face_areas[sel]
        centroid = (surface.face_centroids[sel] * w[:, None]).sum(axis=0) / w.sum()
    else:
        centroid = surface.vertices[region].mean(axis=0)
    d = np.linalg.norm(surface.vertices[region] - centroid, axis=1)
    return int(region[int(np.argmin(d))])


# ----------------------------------------------------------------------
# Step 5: cut graph


@dataclass
class CutGraph:
    paths: list  # vertex-index chains along mesh edges

    def cut_edges(self):
        edges = set()
        for p in self.paths:
            for a, b in zip(p[:-1], p[1:]):
                if a != b:
                    edges.add((min(int(a), int(b)), max(int(a), int(b))))
        return edges

    def vertices(self):
        out = set()
        for p in self.paths:
            out.update(int(v) for v in p)
        return out

    def local_directions(self, surface: TriMesh):
        """(face, unit vector) pairs for faces adjacent to each cut edge."""
        edge_faces = {}
        for (a, b), fs in _edge_face_map(surface).items():
            edge_faces[(a, b)] = fs
        out = []
        v = surface.vertices
        for a, b in sorted(self.cut_edges()):
            vec = v[b] - v[a]
            nrm = np.linalg.norm(vec)
            if nrm < 1e-300:
                continue
            vec = vec / nrm
            for f in edge_faces.get((a, b), ()):
                out.append((f, vec))
        return out


def _edge_face_map(surface: TriMesh):
    emap: dict[tuple, list] = {}
    for fi, tri in enumerate(surface.faces):
        for i in range(3):
            a, b = int(tri[i]), int(tri[(i + 1) % 3])
            key = (min(a, b), max(a, b))
            emap.setdefault(key, []).append(fi)
    return emap


def _shortest_path(predecessors, source, target):
    path = [int(target)]
    while path[-1] != source:
        prev = int(predecessors[path[-1]])
        if prev < 0:
            return None
        path.append(prev)
    return path[::-1]


def build_cut_graph(
    surface_or_layer,
    centers,
    contours: CriticalContours,
    connect_outer: bool = True,
) -> CutGraph:
    """Edge-graph shortest paths from each center to its contour, plus a
    spanning chain between centers (and optionally one tie to the outer
    boundary so cutting merges every contour into a single boundary).
    """
    surface = (
        surface_or_layer.surface
        if isinstance(surface_or_layer, CurvedLayer)
        else surface_or_layer
    )
    if len(contours.critical) == 0:
        raise TopologyAnalysisError("cut graph needs at least one critical contour")
    if len(centers) != len(contours.critical):
        raise TopologyAnalysisError("need one center per critical contour")

    # Penalize edges that touch boundary vertices so cut paths cross the
    # interior and meet each contour at a single vertex; a cut that hugs or
    # repeatedly grazes a boundary would slice slivers off the layer.
    adj = surface.vertex_adjacency.tocoo(copy=True)
    on_boundary = np.zeros(len(surface.vertices), dtype=bool)
    for a, b in surface.boundary_edges:
        on_boundary[a] = on_boundary[b] = True
    if on_boundary.any():
        adj.data[on_boundary[adj.row] | on_boundary[adj.col]] *= 1e6
    adj = adj.tocsr()
    dists, preds = dijkstra(
        adj, indices=np.asarray(centers, dtype=np.int64), return_predecessors=True
    )
    paths = []
    for i, (c, loop) in enumerate(zip(centers, contours.critical)):
        loop = np.asarray(loop, dtype=np.int64)
        d = dists[i][loop]
        if not np.isfinite(d).any():
            raise TopologyAnalysisError(
                f"contour {i} unreachable from center vertex {c}"
            )
        target = int(loop[int(np.argmin(d))])
        if target == c:
            paths.append([int(c)])
            continue
        paths.append(_shortest_path(preds[i], int(c), target))

    # chain region centers with a minimum spanning tree over graph distances
    k = len(centers)
    if k > 1:
        pair = np.zeros((k, k))
        for i in range(k):
            for j in range(k):
                pair[i, j] = dists[i][centers[j]]
        if not np.all(np.isfinite(pair)):
            bad = np.argwhere(~np.isfinite(pair))[0]
            raise TopologyAnalysisError(
                f"centers {centers[bad[0]]} and {centers[bad[1]]} are disconnected"
            )
        mst = minimum_spanning_tree(sp.csr_matrix(pair)).tocoo()
        for i, j in sorted(zip(mst.row, mst.col)):
            p = _shortest_path(preds[i], int(centers[i]), int(centers[j]))
            if p is None:
                raise TopologyAnalysisError(
                    f"no path between centers {centers[i]} and {centers[j]}"
                )
            paths.append(p)

    if connect_outer and contours.outer:
        # tie the cut forest to the outer boundary via the cheapest center
        best = None
        for i in range(k):
            for loop in contours.outer:
                loop = np.asarray(loop, dtype=np.int64)
                d = dists[i][loop]
                j = int(np.argmin(d))
                if np.isfinite(d[j]) and (best is None or d[j] < best[0]):
                    best = (float(d[j]), i, int(loop[j]))
        if best is None:
            raise TopologyAnalysisError("outer boundary unreachable from centers")
        _, i, target = best
        paths.append(_shortest_path(preds[i], int(centers[i]), target))

    return CutGraph(paths=paths)


# ----------------------------------------------------------------------
# Step 6: cutting along the graph (vertex duplication)


def cut_mesh(surface_or_layer, cut: CutGraph):
    """Duplicate vertices along the cut so its paths become boundary slits.

    Returns (new TriMesh, origin) where origin[new_vertex] = original vertex.
    Face count, face order, and source tets are preserved.
    """
    surface = (
        surface_or_layer.surface
        if isinstance(surface_or_layer, CurvedLayer)
        else surface_or_layer
    )
    n = len(surface.vertices)
    identity = np.arange(n, dtype=np.int64)
    cut_edges = cut.cut_edges()
    if not cut_edges:
        return (
            TriMesh(
                surface.vertices.copy(),
                surface.faces.copy(),
                source_tet=None if surface.source_tet is None else surface.source_tet.copy(),
                check_area=False,
            ),
            identity,
        )

    mesh_edges = {(int(a), int(b)) for a, b in surface.edges}
    for e in cut_edges:
        if e not in mesh_edges:
            raise TopologyAnalysisError(f"cut path edge {e} is not a mesh edge")

    faces = surface.faces.copy()
    incident: dict[int, list] = {}
    for fi, tri in enumerate(surface.faces):
        for vv in tri:
            incident.setdefault(int(vv), []).append(fi)
    emap = _edge_face_map(surface)

    new_positions = []
    origin_extra = []
    next_id = n
    for v in sorted(cut.vertices()):
        inc = incident.get(v, [])
        if len(inc) <= 1:
            continue
        # group incident faces into sectors separated by cut edges
        parent = {f: f for f in inc}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for (a, b), fs in emap.items():
            if v not in (a, b) or len(fs) != 2:
                continue
            if (a, b) in cut_edges:
                continue
            ra, rb = find(fs[0]), find(fs[1])
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        groups: dict[int, list] = {}
        for f in inc:
            groups.setdefault(find(f), []).append(f)
        if len(groups) <= 1:
            continue
        sectors = [groups[g] for g in sorted(groups)]
        for sector in sectors[1:]:
            pos = surface.vertices[v]
            new_positions.append(pos)
            origin_extra.append(v)
            for f in sector:
                tri = faces[f]
                for i in range(3):
                    if surface.faces[f, i] == v:
                        faces[f, i] = next_id
            next_id += 1

    if new_positions:
        verts = np.vstack([surface.vertices, np.asarray(new_positions)])
        origin = np.concatenate([identity, np.asarray(origin_extra, dtype=np.int64)])
    else:
        verts = surface.vertices.copy()
        origin = identity
    return (
        TriMesh(
            verts,
            faces,
            source_tet=None if surface.source_tet is None else surface.source_tet.copy(),
            check_area=False,
        ),
        origin,
    )


# ----------------------------------------------------------------------
# Toolpath field


def sweep_anchor_vertices(surface: TriMesh, stress: LayerStress):
    """Two extreme vertices along the stress-aligned sweep direction."""
    ok = ~stress.degenerate
    if ok.any():
        sweep = np.cross(surface.face_normals[ok], stress.direction[ok])
        w = sweep.sum(axis=0)
    else:
        w = np.zeros(3)
    if np.linalg.norm(w) < 1e-12:
        # no usable stress: sweep along the largest bounding-box extent
        ext = surface.vertices.max(axis=0) - surface.vertices.min(axis=0)
        w = np.eye(3)[int(np.argmax(ext))]
    w = w / np.linalg.norm(w)
    s = surface.vertices @ w
    return int(np.argmin(s)), int(np.argmax(s))


def solve_toolpath_field(
    surface: TriMesh,
    stress: LayerStress,
    cut_face_dirs,
    weight_sf: float = DEFAULT_PATH_WEIGHTS[0],
    weight_cp: float = DEFAULT_PATH_WEIGHTS[1],
    weight_hf: float = DEFAULT_PATH_WEIGHTS[2],
    ones_vertices=(),
    zeros_vertices=(),
) -> np.ndarray:
    """Least-squares toolpath field on a (cut) layer, normalized to [0, 1].

    ``cut_face_dirs`` is the (face, local direction) list from the cut graph.
    Hard gauge: 1 on critical-contour vertices, 0 on outer-boundary vertices;
    with no constraints at all the field is anchored on the two extreme
    vertices of the stress-aligned sweep.
    """
    n = len(surface.vertices)
    rows, cols, vals = [], [], []
    nrows = 0
    gops = surface.grad_ops
    # sliver faces (common where an iso-surface grazes a tet) carry huge
    # gradient operators; keep them out of every objective term
    areas = surface.face_areas
    usable = areas > 1e-9 * areas.mean()

    sigma_max = stress.magnitude.max() if len(stress.magnitude) else 0.0
    if weight_sf > 0 and sigma_max > 0:
        sel = np.nonzero(~stress.degenerate & usable)[0]
        if len(sel):
            coeff = np.einsum("fi,fij->fj", stress.direction[sel], gops[sel])
            coeff *= np.sqrt(weight_sf * stress.magnitude[sel] / sigma_max)[:, None]
            r = nrows + np.repeat(np.arange(len(sel)), 3)
            rows.append(r)
            cols.append(surface.faces[sel].ravel())
            vals.append(coeff.ravel())
            nrows += len(sel)

    if weight_cp > 0 and cut_face_dirs:
        w = np.sqrt(weight_cp)
        for f, lvec in cut_face_dirs:
            if not usable[f]:
                continue
            coeff = w * (lvec @ gops[f])
            rows.append(np.full(3, nrows))
            cols.append(surface.faces[f])
            vals.append(coeff)
            nrows += 1

    if weight_hf > 0 and len(surface.edge_face_pairs):
        pairs = surface.edge_face_pairs
        pairs = pairs[usable[pairs[:, 0]] & usable[pairs[:, 1]]]
        w = np.sqrt(weight_hf)
        for k in range(3):
            ci = gops[pairs[:, 0], k, :] * w
            cj = -gops[pairs[:, 1], k, :] * w
            r = nrows + np.repeat(np.arange(len(pairs)), 3)
            rows.extend([r, r])
            cols.extend(
                [surface.faces[pairs[:, 0]].ravel(), surface.faces[pairs[:, 1]].ravel()]
            )
            vals.extend([ci.ravel(), cj.ravel()])
            nrows += len(pairs)

    # weakly tie sliver-face vertices to their (nearly coincident) neighbors
    # so the system stays determined without biasing the field
    for fi in np.nonzero(~usable)[0]:
        tri = surface.faces[fi]
        for i in range(3):
            a, b = int(tri[i]), int(tri[(i + 1) % 3])
            rows.append(np.array([nrows, nrows]))
            cols.append(np.array([a, b]))
            vals.append(np.array([1e-6, -1e-6]))
            nrows += 1

    if nrows == 0:
        raise FieldSolveError("toolpath objective is empty")
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nrows, n),
    ).tocsr()

    ones_v = np.unique(np.asarray(list(ones_vertices), dtype=np.int64))
    zeros_v = np.unique(np.asarray(list(zeros_vertices), dtype=np.int64))
    zeros_v = np.setdiff1d(zeros_v, ones_v)
    if len(ones_v) == 0 and len(zeros_v) == 0:
        lo, hi = sweep_anchor_vertices(surface, stress)
        zeros_v = np.array([lo])
        ones_v = np.array([hi])
    fixed_idx = np.concatenate([zeros_v, ones_v])
    fixed_val = np.concatenate([np.zeros(len(zeros_v)), np.ones(len(ones_v))])

    values = _solve_constrained_lsq(A, np.zeros(nrows), fixed_idx, fixed_val, n)
    lo, hi = values.min(), values.max()
    if hi - lo < 1e-300:
        raise FieldSolveError("toolpath field is constant; cannot normalize")
    return (values - lo) / (hi - lo)


# ----------------------------------------------------------------------
# Iso-curve extraction


@dataclass
class Toolpath:
    waypoints: np.ndarray  # (k, 3) positions, mm
    normals: np.ndarray = field(repr=False)  # (k, 3) unit surface normals
    params: np.ndarray = field(repr=False)  # iso value per waypoint
    closed: bool = False
    layer_index: int = 0
    path_index: int = 0
    material: str = "fiber"

    def __len__(self):
        return len(self.waypoints)

    @property
    def length(self) -> float:
        pts = self.waypoints
        if self.closed and len(pts) > 1:
            pts = np.vstack([pts, pts[0]])
        if len(pts) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def _iso_segments(surface: TriMesh, values: np.ndarray, iso: float):
    """Crossing-point table and per-face segments for one iso value.

    Returns (points, normals, segments, max_degree) with segments as pairs of
    crossing-point ids.
    """
    v = np.asarray(values, dtype=np.float64)
    eq = v == iso
    if eq.any():
        v = v.copy()
        v[eq] += 1e-9
    fv = v[surface.faces]
    above = fv > iso
    cnt = above.sum(axis=1)
    sel = np.nonzero((cnt == 1) | (cnt == 2))[0]
    if len(sel) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 2), dtype=np.int64), 0

    segs_edges = []
    for fi in sel:
        tri = surface.faces[fi]
        pts = []
        for i in range(3):
            a, b = int(tri[i]), int(tri[(i + 1) % 3])
            if (v[a] > iso) != (v[b] > iso):
                pts.append((min(a, b), max(a, b)))
        segs_edges.append(pts)
    edges = np.array([e for pair in segs_edges for e in pair], dtype=np.int64)
    uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
    va, vb = uniq[:, 0], uniq[:, 1]
    t = (iso - v[va]) / (v[vb] - v[va])
    points = surface.vertices[va] + t[:, None] * (
        surface.vertices[vb] - surface.vertices[va]
    )
    vn = surface.vertex_normals
    normals = vn[va] + t[:, None] * (vn[vb] - vn[va])
    normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-300)
    segments = inverse.reshape(-1, 2)
    segments = segments[segments[:, 0] != segments[:, 1]]
    deg = np.bincount(segments.ravel(), minlength=len(points))
    return points, normals, segments, int(deg.max()) if len(deg) else 0


def _chain_segments(segments: np.ndarray, n_points: int):
    """Link segments into maximal polylines; returns (point-id chains, closed)."""
    neighbors: dict[int, list] = {}
    for si, (a, b) in enumerate(segments):
        neighbors.setdefault(int(a), []).append((int(b), si))
        neighbors.setdefault(int(b), []).append((int(a), si))
    used = np.zeros(len(segments), dtype=bool)
    chains = []

    def walk(start):
        chain = [start]
        cur = start
        while True:
            nxt = None
            for other, si in neighbors.get(cur, ()):
                if not used[si]:
                    nxt = (other, si)
                    break
            if nxt is None:
                break
            used[nxt[1]] = True
            chain.append(nxt[0])
            cur = nxt[0]
        return chain

    ends = sorted(p for p, ns in neighbors.items() if len(ns) == 1)
    for p in ends:
        if any(not used[si] for _, si in neighbors[p]):
            chains.append((walk(p), False))
    for p in sorted(neighbors):
        if any(not used[si] for _, si in neighbors[p]):
            chain = walk(p)
            closed = chain[0] == chain[-1]
            if closed:
                chain = chain[:-1]
            chains.append((chain, closed))
    return chains


def extract_isocurves(
    surface: TriMesh,
    values: np.ndarray,
    n_paths: int,
    layer_index: int = 0,
    material: str = "fiber",
) -> list[Toolpath]:
    """Marching-triangle iso-curves at (i + 0.5) / n_paths, innermost first."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    isos = [(i + 0.5) / n_paths for i in range(n_paths)]
    out = []
    path_index = 0
    for iso in sorted(isos, reverse=True):
        points, normals, segments, _ = _iso_segments(surface, values, iso)
        if len(segments) == 0:
            continue
        for chain, closed in _chain_segments(segments, len(points)):
            idx = np.asarray(chain, dtype=np.int64)
            out.append(
                Toolpath(
                    waypoints=points[idx],
                    normals=normals[idx],
                    params=np.full(len(idx), iso),
                    closed=closed,
                    layer_index=layer_index,
                    path_index=path_index,
                    material=material,
                )
            )
            path_index += 1
    return out


def split_components(surface: TriMesh):
    """Split into connected components; returns (TriMesh, vertex_map) pairs
    where vertex_map sends component vertex ids back to the input surface.
    """
    ncomp, labels = surface.vertex_components()
    if ncomp <= 1:
        return [(surface, np.arange(len(surface.vertices)))]
    out = []
    face_label = labels[surface.faces[:, 0]]
    for c in range(ncomp):
        vmap = np.nonzero(labels == c)[0]
        if len(vmap) == 0:
            continue
        fsel = np.nonzero(face_label == c)[0]
        if len(fsel) == 0:
            continue
        remap = np.full(len(surface.vertices), -1, dtype=np.int64)
        remap[vmap] = np.arange(len(vmap))
        sub = TriMesh(
            surface.vertices[vmap],
            remap[surface.faces[fsel]],
            source_tet=(
                None if surface.source_tet is None else surface.source_tet[fsel]
            ),
            check_area=False,
        )
        out.append((sub, vmap))
    return out


def default_n_paths(surface: TriMesh, values: np.ndarray, fiber_width: float) -> int:
    """Iso-value count so median path spacing matches the fiber width."""
    g = np.linalg.norm(tri_gradients(surface, values), axis=1)
    areas = surface.face_areas
    ok = (areas > 1e-9 * max(areas.mean(), 1e-300)) & (g > 1e-12)
    if not ok.any():
        return 1
    med = float(np.median(g[ok]))
    return max(1, int(round(1.0 / (fiber_width * med))))


def generate_layer_toolpaths(
    layer: CurvedLayer,
    tet_principal: PrincipalStress,
    critical_selectors=(),
    weight_sf: float = DEFAULT_PATH_WEIGHTS[0],
    weight_cp: float = DEFAULT_PATH_WEIGHTS[1],
    weight_hf: float = DEFAULT_PATH_WEIGHTS[2],
    fiber_width: float = 0.37,
    n_paths: int | None = None,
    matrix_paths: bool = False,
    geodesic_method: str = "heat",
):
    """Full per-layer stage: stress projection, topology analysis, cutting,
    toolpath field, and iso-curve extraction. Disconnected layers are
    processed per component. Returns (toolpaths, contours, diagnostics).
    """
    surface = layer.surface
    toolpaths: list[Toolpath] = []
    all_contours = CriticalContours(critical=[], outer=[])
    diagnostics = {"components": 0, "cut_edges": 0, "fallback_anchors": 0}
    if len(surface.faces) == 0:
        return toolpaths, all_contours, diagnostics

    for sub, vmap in split_components(surface):
        diagnostics["components"] += 1
        sub_layer = CurvedLayer(
            surface=sub, iso_value=layer.iso_value, layer_index=layer.layer_index
        )
        stress = project_stress(sub_layer, tet_principal)
        contours = detect_contours(sub_layer, critical_selectors)
        for loop in contours.critical:
            all_contours.critical.append([int(vmap[v]) for v in loop])
        for loop in contours.outer:
            all_contours.outer.append([int(vmap[v]) for v in loop])

        cut_dirs = []
        if contours.critical:
            fields = [
                geodesic_field(sub, loop, method=geodesic_method)
                for loop in contours.critical
            ]
            part = voronoi_partition(sub, fields)
            centers = [
                region_center(sub, np.nonzero(part == i)[0])
                for i in range(len(fields))
            ]
            cut = build_cut_graph(sub, centers, contours, connect_outer=True)
            cut_dirs = cut.local_directions(sub)
            diagnostics["cut_edges"] += len(cut.cut_edges())
            work, origin = cut_mesh(sub, cut)
        else:
            work, origin = sub, np.arange(len(sub.vertices))

        crit = set()
        for loop in contours.critical:
            crit.update(int(v) for v in loop)
        outer = set()
        for loop in contours.outer:
            outer.update(int(v) for v in loop)
        ones = np.nonzero(np.isin(origin, list(crit)))[0] if crit else []
        zeros = np.nonzero(np.isin(origin, list(outer)))[0] if crit else []
        if not contours.critical:
            diagnostics["fallback_anchors"] += 1

        work_stress = project_stress(
            CurvedLayer(surface=work, iso_value=layer.iso_value,
                        layer_index=layer.layer_index),
            tet_principal,
        )
        P = solve_toolpath_field(
            work,
            work_stress,
            cut_dirs,
            weight_sf=weight_sf,
            weight_cp=weight_cp,
            weight_hf=weight_hf,
            ones_vertices=ones,
            zeros_vertices=zeros,
        )
        k = n_paths if n_paths is not None else default_n_paths(work, P, fiber_width)
        toolpaths.extend(
            extract_isocurves(
                work, P, k, layer_index=layer.layer_index, material="fiber"
            )
        )

        if matrix_paths:
            if contours.critical:
                M = solve_toolpath_field(
                    work,
                    work_stress,
                    [],
                    weight_sf=0.0,
                    weight_cp=0.0,
                    weight_hf=weight_hf,
                    ones_vertices=ones,
                    zeros_vertices=zeros,
                )
            else:
                # no holes: contour-parallel field from the outer boundary
                bverts = np.unique(np.asarray(work.boundary_edges).ravel())
                d = geodesic_field(work, bverts, method=geodesic_method)
                d[~np.isfinite(d)] = 0.0
                rng = d.max()
                M = d / rng if rng > 0 else d
            km = (
                n_paths
                if n_paths is not None
                else default_n_paths(work, M, fiber_width)
            )
            toolpaths.extend(
                extract_isocurves(
                    work, M, km, layer_index=layer.layer_index, material="matrix"
                )
            )

    for i, tp in enumerate(toolpaths):
        tp.path_index = i
    return toolpaths, all_contours, diagnostics


def isocurve_max_degree(surface: TriMesh, values: np.ndarray, n_paths: int) -> int:
    """Junction audit: max crossing-point degree over all iso levels."""
    worst = 0
    for i in range(n_paths):
        iso = (i + 0.5) / n_paths
        _, _, _, deg = _iso_segments(surface, values, iso)
        worst = max(worst, deg)
    return worst
