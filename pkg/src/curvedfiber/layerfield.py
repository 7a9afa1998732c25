"""Guidance scalar field over the tet mesh and curved-layer extraction.

The guidance field minimizes a weighted least-squares objective with three
terms: stress following on weighted elements, gradient compatibility across
interior faces, and continuity protection over user regions. Hard anchor
constraints (0/1 vertex sets) fix the translation/scale gauge; the result is
renormalized to [0, 1]. Curved layers are iso-surfaces extracted by marching
tetrahedra with per-face source-tet bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .mesh import TetMesh, TriMesh, VertexField
from .psl import PslWeights
from .stress import PrincipalStress

DEFAULT_WEIGHTS = (1.0, 0.5, 0.1)  # (stress-follow, gradient-compat, continuity)


class FieldSolveError(Exception):
    pass


@dataclass
class LayerFieldProblem:
    """Weights, protected regions, and gauge anchors for the guidance solve."""

    weight_sf: float = DEFAULT_WEIGHTS[0]
    weight_cg: float = DEFAULT_WEIGHTS[1]
    weight_cp: float = DEFAULT_WEIGHTS[2]
    roi_regions: list = field(default_factory=list)  # vertex index arrays
    anchors_low: np.ndarray = None  # pinned to 0
    anchors_high: np.ndarray = None  # pinned to 1

    def __post_init__(self):
        if min(self.weight_sf, self.weight_cg, self.weight_cp) < 0:
            raise FieldSolveError("weights must be non-negative")
        self.roi_regions = [
            np.unique(np.asarray(r, dtype=np.int64)) for r in self.roi_regions
        ]
        self.anchors_low = np.unique(np.asarray(self.anchors_low, dtype=np.int64))
        self.anchors_high = np.unique(np.asarray(self.anchors_high, dtype=np.int64))
        if len(self.anchors_low) == 0 or len(self.anchors_high) == 0:
            raise FieldSolveError("both anchor sets must be non-empty")
        if np.intersect1d(self.anchors_low, self.anchors_high).size:
            raise FieldSolveError("anchor sets must be disjoint")


def slab_anchors(mesh: TetMesh, direction, fraction: float = 1e-6):
    """Vertex sets at the two extremes along ``direction`` (default gauge).

    ``fraction`` widens the slabs relative to the model extent along the
    build direction; the default picks exactly the extreme plane(s).
    """
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    s = mesh.vertices @ d
    span = s.max() - s.min()
    tol = max(fraction * span, 1e-12)
    return np.nonzero(s <= s.min() + tol)[0], np.nonzero(s >= s.max() - tol)[0]


def energy_residuals(
    mesh: TetMesh,
    principal: PrincipalStress,
    weights: PslWeights,
    problem: LayerFieldProblem,
    values: np.ndarray,
):
    """Unweighted residuals (E_sf, E_cg, E_cp) of a candidate field."""
    grads = np.einsum("mij,mj->mi", mesh.grad_ops, values[mesh.tets])
    dots = np.einsum("mi,mi->m", grads, principal.dir_max)
    e_sf = float(np.sum(weights.n_psl * dots**2))
    pairs = mesh.face_adjacency
    e_cg = float(np.sum((grads[pairs[:, 0]] - grads[pairs[:, 1]]) ** 2))
    e_cp = 0.0
    for region in problem.roi_regions:
        m = len(region)
        total = values[region].sum()
        e_cp += float(np.sum((m * values[region] - total) ** 2))
    return e_sf, e_cg, e_cp


def _check_anchored_components(mesh: TetMesh, anchored: np.ndarray):
    ncomp, labels = mesh.vertex_components()
    if ncomp == 1:
        return
    have = np.zeros(ncomp, dtype=bool)
    have[labels[anchored]] = True
    if not have.all():
        missing = int(np.nonzero(~have)[0][0])
        raise FieldSolveError(
            f"mesh component {missing} contains no anchor vertex; system singular"
        )


def solve_guidance_field(
    mesh: TetMesh,
    principal: PrincipalStress,
    weights: PslWeights,
    problem: LayerFieldProblem,
) -> VertexField:
    """Least-squares guidance field, renormalized to [0, 1]."""
    n = len(mesh.vertices)
    n_psl = weights.n_psl
    if problem.weight_cg <= 0 and not (n_psl > 0).any():
        raise FieldSolveError(
            "objective vacuous: no weighted elements and zero gradient weight"
        )

    rows, cols, vals = [], [], []
    nrows = 0

    if problem.weight_sf > 0:
        sel = np.nonzero(n_psl > 0)[0]
        if len(sel):
            coeff = np.einsum(
                "mi,mij->mj", principal.dir_max[sel], mesh.grad_ops[sel]
            )
            coeff *= np.sqrt(problem.weight_sf * n_psl[sel])[:, None]
            r = nrows + np.repeat(np.arange(len(sel)), 4)
            rows.append(r)
            cols.append(mesh.tets[sel].ravel())
            vals.append(coeff.ravel())
            nrows += len(sel)

    if problem.weight_cg > 0 and len(mesh.face_adjacency):
        pairs = mesh.face_adjacency
        w = np.sqrt(problem.weight_cg)
        for k in range(3):
            ci = mesh.grad_ops[pairs[:, 0], k, :] * w
            cj = -mesh.grad_ops[pairs[:, 1], k, :] * w
            r = nrows + np.repeat(np.arange(len(pairs)), 4)
            rows.extend([r, r])
            cols.extend([mesh.tets[pairs[:, 0]].ravel(), mesh.tets[pairs[:, 1]].ravel()])
            vals.extend([ci.ravel(), cj.ravel()])
            nrows += len(pairs)

    if problem.weight_cp > 0:
        w = np.sqrt(problem.weight_cp)
        for region in problem.roi_regions:
            m = len(region)
            if m < 2:
                continue
            r = nrows + np.arange(m)
            rows.append(r)
            cols.append(region)
            vals.append(np.full(m, w * m))
            rows.append(np.repeat(r, m))
            cols.append(np.tile(region, m))
            vals.append(np.full(m * m, -w))
            nrows += m

    A = sp.coo_matrix(
        (
            np.concatenate(vals),
            (np.concatenate(rows), np.concatenate(cols)),
        ),
        shape=(nrows, n),
    ).tocsr()

    fixed_idx = np.concatenate([problem.anchors_low, problem.anchors_high])
    fixed_val = np.concatenate(
        [np.zeros(len(problem.anchors_low)), np.ones(len(problem.anchors_high))]
    )
    _check_anchored_components(mesh, fixed_idx)
    values = _solve_constrained_lsq(A, np.zeros(nrows), fixed_idx, fixed_val, n)

    lo, hi = values.min(), values.max()
    if hi - lo < 1e-300:
        raise FieldSolveError("guidance field is constant; cannot normalize")
    return VertexField(mesh, (values - lo) / (hi - lo))


def _solve_constrained_lsq(A, b, fixed_idx, fixed_val, n) -> np.ndarray:
    """min ||Ax - b|| with x[fixed_idx] = fixed_val, via normal equations."""
    mask = np.zeros(n, dtype=bool)
    mask[fixed_idx] = True
    free = np.nonzero(~mask)[0]
    x = np.zeros(n)
    x[fixed_idx] = fixed_val
    if len(free) == 0:
        return x
    Af = A[:, free]
    rhs = b - A[:, fixed_idx] @ fixed_val
    N = (Af.T @ Af).tocsc()
    g = Af.T @ rhs
    sol = spla.spsolve(N, g)
    if not np.all(np.isfinite(sol)):
        raise FieldSolveError("singular normal equations in guidance solve")
    res = np.linalg.norm(N @ sol - g)
    ref = max(np.linalg.norm(g), 1e-30)
    if res / ref > 1e-8:
        raise FieldSolveError(f"normal-equation residual {res / ref:.3e} exceeds 1e-8")
    x[free] = sol
    return x


# ----------------------------------------------------------------------
# Marching tetrahedra


@dataclass
class CurvedLayer:
    surface: TriMesh
    iso_value: float
    layer_index: int


# local edge endpoints used by the 2-2 quad case, per (above locals, below locals)
def _quad_corners(a0, a1, b0, b1):
    return [(a0, b0), (a0, b1), (a1, b1), (a1, b0)]


def marching_tets(mesh: TetMesh, values: np.ndarray, iso: float):
    """Extract one iso-surface; returns a TriMesh with per-face source tets."""
    v = np.asarray(values, dtype=np.float64)
    eq = v == iso
    if eq.any():
        v = v.copy()
        v[eq] += 1e-9  # symbolic perturbation, never an error
    tv = v[mesh.tets]
    above = tv > iso
    cnt = above.sum(axis=1)

    tri_edges = []  # (n_tris, 3, 2) global edge endpoint ids
    tri_src = []

    for sep_above in (True, False):
        want = 1 if sep_above else 3
        sel = np.nonzero(cnt == want)[0]
        if len(sel) == 0:
            continue
        sep = np.argmax(above[sel] == sep_above, axis=1)
        others = np.argsort(
            np.eye(4, dtype=int)[sep], axis=1, kind="stable"
        )[:, :3]  # the three locals != sep, ascending
        gs = mesh.tets[sel, sep]
        go = np.take_along_axis(mesh.tets[sel], others, axis=1)
        e = np.stack(
            [np.stack([gs, go[:, k]], axis=1) for k in range(3)], axis=1
        )  # (k, 3, 2)
        tri_edges.append(e)
        tri_src.append(sel)

    sel = np.nonzero(cnt == 2)[0]
    if len(sel):
        loc = np.argsort(~above[sel], axis=1, kind="stable")
        a0, a1, b0, b1 = loc[:, 0], loc[:, 1], loc[:, 2], loc[:, 3]
        t = mesh.tets[sel]
        idx = np.arange(len(sel))
        c = [
            np.stack([t[idx, a0], t[idx, b0]], axis=1),
            np.stack([t[idx, a0], t[idx, b1]], axis=1),
            np.stack([t[idx, a1], t[idx, b1]], axis=1),
            np.stack([t[idx, a1], t[idx, b0]], axis=1),
        ]
        tri_edges.append(np.stack([c[0], c[1], c[2]], axis=1))
        tri_src.append(sel)
        tri_edges.append(np.stack([c[0], c[2], c[3]], axis=1))
        tri_src.append(sel)

    if not tri_edges:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64),
                       source_tet=np.zeros(0, dtype=np.int64), check_area=False)

    edges = np.concatenate([e.reshape(-1, 2) for e in tri_edges])
    src = np.concatenate(tri_src)
    keys = np.sort(edges, axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    va, vb = uniq[:, 0], uniq[:, 1]
    t = (iso - v[va]) / (v[vb] - v[va])
    pts = mesh.vertices[va] + t[:, None] * (mesh.vertices[vb] - mesh.vertices[va])

    # weld coincident crossing points: when the surface passes within
    # rounding distance of a mesh vertex, every edge at that vertex yields
    # its own copy of the same point and the triangles between them are
    # zero-area slivers
    tol = 1e-7 * mesh.average_edge_length
    key = np.round(pts / tol).astype(np.int64)
    _, first, weld = np.unique(key, axis=0, return_index=True, return_inverse=True)
    pts = pts[first]
    faces = weld[inverse].reshape(-1, 3)

    # drop exactly-degenerate faces (repeated welded vertices)
    ok = (
        (faces[:, 0] != faces[:, 1])
        & (faces[:, 1] != faces[:, 2])
        & (faces[:, 0] != faces[:, 2])
    )
    faces, src = faces[ok], src[ok]

    # orient faces so normals follow the field gradient of the source tet
    grads = np.einsum("mij,mj->mi", mesh.grad_ops[src], v[mesh.tets[src]])
    a, b, c = pts[faces[:, 0]], pts[faces[:, 1]], pts[faces[:, 2]]
    nrm = np.cross(b - a, c - a)
    flip = np.einsum("ij,ij->i", nrm, grads) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]

    used = np.unique(faces)
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(pts[used], remap[faces], source_tet=src, check_area=False)


def extract_isosurfaces(
    mesh: TetMesh, guidance: VertexField, n_layers: int
) -> list[CurvedLayer]:
    """Marching-tet layers at iso values (i + 0.5) / n_layers."""
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    layers = []
    for i in range(n_layers):
        iso = (i + 0.5) / n_layers
        surf = marching_tets(mesh, guidance.values, iso)
        layers.append(CurvedLayer(surface=surf, iso_value=iso, layer_index=i))
    return layers


# ----------------------------------------------------------------------
# Layer thickness


def _point_triangle_distances(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Distances from point ``p`` to each triangle in ``tri`` (k, 3, 3)."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    closest = np.empty_like(a)
    done = np.zeros(len(tri), dtype=bool)

    m = (d1 <= 0) & (d2 <= 0)
    closest[m] = a[m]
    done |= m
    m = ~done & (d3 >= 0) & (d4 <= d3)
    closest[m] = b[m]
    done |= m
    m = ~done & (d6 >= 0) & (d5 <= d6)
    closest[m] = c[m]
    done |= m

    vc = d1 * d4 - d3 * d2
    m = ~done & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = d1 / (d1 - d3)
    closest[m] = a[m] + t[m, None] * ab[m]
    done |= m

    vb = d5 * d2 - d1 * d6
    m = ~done & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = d2 / (d2 - d6)
    closest[m] = a[m] + t[m, None] * ac[m]
    done |= m

    va = d3 * d6 - d5 * d4
    m = ~done & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    closest[m] = b[m] + t[m, None] * (c[m] - b[m])
    done |= m

    m = ~done
    with np.errstate(invalid="ignore", divide="ignore"):
        denom = va + vb + vc
        u = vb / denom
        w = vc / denom
    closest[m] = a[m] + u[m, None] * ab[m] + w[m, None] * ac[m]
    return np.linalg.norm(closest - p, axis=1)


class SurfaceDistance:
    """Closest-point distance queries against a triangle mesh."""

    def __init__(self, surface: TriMesh):
        self.surface = surface
        self._tri = surface.vertices[surface.faces]
        self._vtree = cKDTree(surface.vertices) if len(surface.vertices) else None
        self._ctree = (
            cKDTree(surface.face_centroids) if len(surface.faces) else None
        )
        if len(surface.faces):
            e = self._tri - np.roll(self._tri, 1, axis=1)
            self._max_edge = float(np.linalg.norm(e, axis=2).max())
        else:
            self._max_edge = 0.0

    def query(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        if self._ctree is None:
            return np.full(len(points), np.nan)
        upper, _ = self._vtree.query(points)
        out = np.empty(len(points))
        for i, (p, ub) in enumerate(zip(points, upper)):
            cand = self._ctree.query_ball_point(p, ub + self._max_edge)
            if not cand:
                out[i] = ub
                continue
            out[i] = _point_triangle_distances(p, self._tri[cand]).min()
        return out


def measure_layer_thickness(
    layer: CurvedLayer, layer_prev: CurvedLayer, samples: np.ndarray
) -> np.ndarray:
    """Unsigned distance from each sample to the previous layer's surface.

    Returns NaN per sample when the previous layer is empty (missing, not an
    error).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if len(layer_prev.surface.faces) == 0:
        return np.full(len(samples), np.nan)
    return SurfaceDistance(layer_prev.surface).query(samples)
