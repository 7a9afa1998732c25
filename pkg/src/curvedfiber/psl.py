"""Principal stress line tracing, selection, and per-element weighting.

A stress line is traced from the centroid of every source element by
ray-marching through the tet mesh along the bidirectional maximal principal
direction, in both directions from the seed. Lines whose crossed elements
touch both the fixture and the load regions are kept; the number of kept
lines crossing each element is its weight.

The inner march is the hottest loop in the pipeline and runs through
``_accel.maybe_jit`` (numba when available, plain numpy otherwise).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import maybe_jit
from .mesh import TetMesh, _FACE_LOCALS
from .stress import PrincipalStress

SIGMA_EPS = 1e-9  # MPa: below this the direction is undefined
EDGE_HIT_EPS = 1e-9  # mm: exit point this close to an edge triggers perturbation
PERTURB_FACTOR = 1e-7  # of the average edge length

TERM_BOUNDARY = 0
TERM_MAX_LENGTH = 1
TERM_ZERO_DIRECTION = 2
_TERM_NAMES = {0: "boundary", 1: "max_length", 2: "zero_direction"}


@dataclass
class PrincipalStressLine:
    points: np.ndarray  # (k, 3) polyline
    crossed_elements: np.ndarray  # ordered tet indices
    source_element: int
    terminated_by: str

    @property
    def length(self) -> float:
        if len(self.points) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


@dataclass
class PslWeights:
    n_psl: np.ndarray  # (m,) non-negative ints


def _trace_half(
    verts,
    tets,
    face_locals,
    neighbors,
    fnormals,
    forigins,
    centroids,
    dirs,
    valid,
    start,
    sign,
    l_max,
    avg_edge,
    pts,
    elems,
):
    """March one direction from the seed centroid. Returns (npts, nelems, code).

    ``pts``/``elems`` are preallocated scratch; the seed centroid is pts[0].
    """
    e = start
    pts[0, 0] = centroids[e, 0]
    pts[0, 1] = centroids[e, 1]
    pts[0, 2] = centroids[e, 2]
    n_pts = 1
    elems[0] = e
    n_el = 1
    if valid[e] == 0:
        return n_pts, n_el, TERM_ZERO_DIRECTION

    px, py, pz = pts[0, 0], pts[0, 1], pts[0, 2]
    ux = sign * dirs[e, 0]
    uy = sign * dirs[e, 1]
    uz = sign * dirs[e, 2]
    length = 0.0
    cap = pts.shape[0]
    code = TERM_MAX_LENGTH  # buffer exhaustion counts as hitting the cap

    while n_pts < cap:
        # exit-face search with edge/vertex degeneracy perturbation
        best_t = -1.0
        best_f = -1
        attempt = 0
        while attempt < 5:
            best_t = -1.0
            best_f = -1
            for f in range(4):
                nx = fnormals[e, f, 0]
                ny = fnormals[e, f, 1]
                nz = fnormals[e, f, 2]
                den = nx * ux + ny * uy + nz * uz
                if den > 1e-14:
                    t = (
                        nx * (forigins[e, f, 0] - px)
                        + ny * (forigins[e, f, 1] - py)
                        + nz * (forigins[e, f, 2] - pz)
                    ) / den
                    if t >= 0.0 and (best_f < 0 or t < best_t):
                        best_t = t
                        best_f = f
            if best_f < 0:
                break
            qx = px + best_t * ux
            qy = py + best_t * uy
            qz = pz + best_t * uz
            # distance from the exit point to the nearest face edge
            ia = tets[e, face_locals[best_f, 0]]
            ib = tets[e, face_locals[best_f, 1]]
            ic = tets[e, face_locals[best_f, 2]]
            min_d = 1e300
            for k in range(3):
                if k == 0:
                    a0, a1 = ib, ic
                elif k == 1:
                    a0, a1 = ic, ia
                else:
                    a0, a1 = ia, ib
                ex = verts[a1, 0] - verts[a0, 0]
                ey = verts[a1, 1] - verts[a0, 1]
                ez = verts[a1, 2] - verts[a0, 2]
                wx = qx - verts[a0, 0]
                wy = qy - verts[a0, 1]
                wz = qz - verts[a0, 2]
                cx = ey * wz - ez * wy
                cy = ez * wx - ex * wz
                cz = ex * wy - ey * wx
                elen = (ex * ex + ey * ey + ez * ez) ** 0.5
                if elen > 0.0:
                    d = (cx * cx + cy * cy + cz * cz) ** 0.5 / elen
                    if d < min_d:
                        min_d = d
            if min_d >= EDGE_HIT_EPS:
                break
            # nudge the origin toward the element centroid and re-intersect
            gx = centroids[e, 0] - px
            gy = centroids[e, 1] - py
            gz = centroids[e, 2] - pz
            gn = (gx * gx + gy * gy + gz * gz) ** 0.5
            if gn < 1e-300:
                break
            step = PERTURB_FACTOR * avg_edge / gn
            px += step * gx
            py += step * gy
            pz += step * gz
            attempt += 1

        if best_f < 0:
            code = TERM_ZERO_DIRECTION
            break
        qx = px + best_t * ux
        qy = py + best_t * uy
        qz = pz + best_t * uz
        pts[n_pts, 0] = qx
        pts[n_pts, 1] = qy
        pts[n_pts, 2] = qz
        n_pts += 1
        length += best_t
        if length > l_max:
            code = TERM_MAX_LENGTH
            break
        nb = neighbors[e, best_f]
        if nb < 0:
            code = TERM_BOUNDARY
            break
        if valid[nb] == 0:
            code = TERM_ZERO_DIRECTION
            break
        # sign continuity: keep the neighbor direction aligned with the
        # current marching direction (centroid-based sign rules oscillate in
        # thin elements when the field is slightly tilted)
        w = dirs[nb, 0] * ux + dirs[nb, 1] * uy + dirs[nb, 2] * uz
        if -1e-12 <= w <= 1e-12:
            # perpendicular hand-off; break the tie with the crossed face
            # normal (points from e into nb)
            w = (
                dirs[nb, 0] * fnormals[e, best_f, 0]
                + dirs[nb, 1] * fnormals[e, best_f, 1]
                + dirs[nb, 2] * fnormals[e, best_f, 2]
            )
        if w > 1e-12:
            ux, uy, uz = dirs[nb, 0], dirs[nb, 1], dirs[nb, 2]
        elif w < -1e-12:
            ux, uy, uz = -dirs[nb, 0], -dirs[nb, 1], -dirs[nb, 2]
        else:
            code = TERM_ZERO_DIRECTION
            break
        e = nb
        elems[n_el] = e
        n_el += 1
        px, py, pz = qx, qy, qz

    return n_pts, n_el, code


# rebind so the batch kernel below resolves the jitted version in nopython mode
_trace_half = maybe_jit(_trace_half)
_trace_half_jit = _trace_half


def _count_all(
    verts,
    tets,
    face_locals,
    neighbors,
    fnormals,
    forigins,
    centroids,
    dirs,
    valid,
    l_max,
    avg_edge,
    fflags,
    lflags,
    pts,
    elems_a,
    elems_b,
    stamp,
    counts,
):
    """Trace from every element, select, and accumulate weights in one pass."""
    m = tets.shape[0]
    for e0 in range(m):
        na_p, na_e, _ = _trace_half(
            verts, tets, face_locals, neighbors, fnormals, forigins,
            centroids, dirs, valid, e0, 1.0, l_max, avg_edge, pts, elems_a,
        )
        # length already consumed by the first half
        used = 0.0
        for i in range(na_p - 1):
            dx = pts[i + 1, 0] - pts[i, 0]
            dy = pts[i + 1, 1] - pts[i, 1]
            dz = pts[i + 1, 2] - pts[i, 2]
            used += (dx * dx + dy * dy + dz * dz) ** 0.5
        budget = l_max - used
        if budget < 0.0:
            budget = 0.0
        nb_p, nb_e, _ = _trace_half(
            verts, tets, face_locals, neighbors, fnormals, forigins,
            centroids, dirs, valid, e0, -1.0, budget, avg_edge, pts, elems_b,
        )
        has_f = False
        has_l = False
        for i in range(na_e):
            el = elems_a[i]
            if fflags[el] != 0:
                has_f = True
            if lflags[el] != 0:
                has_l = True
        for i in range(nb_e):
            el = elems_b[i]
            if fflags[el] != 0:
                has_f = True
            if lflags[el] != 0:
                has_l = True
        if has_f and has_l:
            for i in range(na_e):
                el = elems_a[i]
                if stamp[el] != e0:
                    stamp[el] = e0
                    counts[el] += 1
            for i in range(nb_e):
                el = elems_b[i]
                if stamp[el] != e0:
                    stamp[el] = e0
                    counts[el] += 1


_count_all_jit = maybe_jit(_count_all)


def _tracer_arrays(mesh: TetMesh, principal: PrincipalStress):
    dirs = np.ascontiguousarray(principal.dir_max)
    valid = (np.abs(principal.sigma_max) >= SIGMA_EPS).astype(np.uint8)
    return dirs, valid


def default_l_max(mesh: TetMesh, factor: float = 100.0) -> float:
    return factor * mesh.average_edge_length


def _scratch(mesh, l_max):
    cap = 64 + int(16.0 * l_max / max(mesh.average_edge_length, 1e-12))
    return (
        np.empty((cap, 3)),
        np.empty(cap, dtype=np.int64),
    )


def trace_psl(
    mesh: TetMesh,
    principal: PrincipalStress,
    e0: int,
    l_max: float | None = None,
) -> PrincipalStressLine:
    """Trace the bidirectional stress line seeded at element ``e0``.

    Both signs of the seed direction are marched and concatenated into one
    polyline through the seed centroid.
    """
    if not 0 <= e0 < len(mesh.tets):
        raise IndexError(f"element {e0} out of range")
    if l_max is None:
        l_max = default_l_max(mesh)
    if l_max <= 0:
        raise ValueError("l_max must be positive")
    dirs, valid = _tracer_arrays(mesh, principal)
    avg_edge = mesh.average_edge_length
    args = (
        mesh.vertices,
        mesh.tets,
        _FACE_LOCALS,
        mesh.tet_neighbors,
        mesh.face_normals,
        mesh.face_origins,
        mesh.centroids,
        dirs,
        valid,
    )

    pts_a, el_a = _scratch(mesh, l_max)
    na_p, na_e, code_a = _trace_half_jit(
        *args, e0, 1.0, l_max, avg_edge, pts_a, el_a
    )
    used = float(np.linalg.norm(np.diff(pts_a[:na_p], axis=0), axis=1).sum())
    pts_b, el_b = _scratch(mesh, l_max)
    nb_p, nb_e, code_b = _trace_half_jit(
        *args, e0, -1.0, max(l_max - used, 0.0), avg_edge, pts_b, el_b
    )

    points = np.concatenate([pts_b[1:nb_p][::-1], pts_a[:na_p]])
    crossed = np.concatenate([el_b[1:nb_e][::-1], el_a[:na_e]])
    codes = (code_a, code_b)
    if TERM_MAX_LENGTH in codes:
        term = TERM_MAX_LENGTH
    elif TERM_ZERO_DIRECTION in codes:
        term = TERM_ZERO_DIRECTION
    else:
        term = TERM_BOUNDARY
    return PrincipalStressLine(
        points=points,
        crossed_elements=crossed,
        source_element=int(e0),
        terminated_by=_TERM_NAMES[term],
    )


def trace_all(
    mesh: TetMesh,
    principal: PrincipalStress,
    l_max: float | None = None,
    elements=None,
) -> list[PrincipalStressLine]:
    if elements is None:
        elements = range(len(mesh.tets))
    return [trace_psl(mesh, principal, e0, l_max=l_max) for e0 in elements]


def select_psls(psls, mesh: TetMesh) -> list[PrincipalStressLine]:
    """Keep lines whose crossed elements touch both fixture and load regions."""
    for name in ("fixture", "load"):
        if len(mesh.vertex_labels.get(name, ())) == 0:
            raise ValueError(f"selection undefined: empty {name!r} label set")
    fflags = mesh.label_flags("fixture")
    lflags = mesh.label_flags("load")
    out = []
    for psl in psls:
        el = psl.crossed_elements
        if fflags[el].any() and lflags[el].any():
            out.append(psl)
    return out


def count_psl_weights(mesh: TetMesh, selected) -> PslWeights:
    """Each selected line counts at most once per crossed element."""
    counts = np.zeros(len(mesh.tets), dtype=np.int64)
    for psl in selected:
        counts[np.unique(psl.crossed_elements)] += 1
    return PslWeights(n_psl=counts)


def compute_psl_weights(
    mesh: TetMesh,
    principal: PrincipalStress,
    l_max: float | None = None,
) -> PslWeights:
    """One-pass batch weighting over all source elements (pipeline path).

    Equivalent to trace_all + select_psls + count_psl_weights but without
    retaining the polylines; the equivalence is asserted by the test suite.
    """
    for name in ("fixture", "load"):
        if len(mesh.vertex_labels.get(name, ())) == 0:
            raise ValueError(f"selection undefined: empty {name!r} label set")
    if l_max is None:
        l_max = default_l_max(mesh)
    dirs, valid = _tracer_arrays(mesh, principal)
    fflags = mesh.label_flags("fixture").astype(np.uint8)
    lflags = mesh.label_flags("load").astype(np.uint8)
    pts, elems_a = _scratch(mesh, l_max)
    _, elems_b = _scratch(mesh, l_max)
    stamp = np.full(len(mesh.tets), -1, dtype=np.int64)
    counts = np.zeros(len(mesh.tets), dtype=np.int64)
    _count_all_jit(
        mesh.vertices,
        mesh.tets,
        _FACE_LOCALS,
        mesh.tet_neighbors,
        mesh.face_normals,
        mesh.face_origins,
        mesh.centroids,
        dirs,
        valid,
        l_max,
        mesh.average_edge_length,
        fflags,
        lflags,
        pts,
        elems_a,
        elems_b,
        stamp,
        counts,
    )
    return PslWeights(n_psl=counts)


def dump_psls(psls, path) -> None:
    """One polyline per line: ``e0;x0,y0,z0;x1,y1,z1;...``."""
    with open(path, "w") as fh:
        for psl in psls:
            coords = ";".join(
                "%.6f,%.6f,%.6f" % (p[0], p[1], p[2]) for p in psl.points
            )
            fh.write(f"{psl.source_element};{coords}\n")
