"""Simplicial mesh containers and the low-level queries everything else uses.

Provides the tetrahedral volume mesh (with face adjacency and per-element
gradient operators), the triangle surface mesh (with boundary loops and
per-face gradient operators), per-vertex scalar fields, TetGen ASCII I/O,
and k-ring neighborhood queries.

Units are millimeters throughout. Meshes are immutable after construction:
all derived quantities are built once in ``__init__`` and queries are
read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

VOLUME_EPS = 1e-12  # mm^3, absolute degeneracy threshold for tets
AREA_EPS = 1e-12  # mm^2, absolute degeneracy threshold for triangles

# Local vertex triples of the face opposite each local vertex of a tet.
_FACE_LOCALS = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])

# Local vertex pairs of the 6 edges of a tet.
_EDGE_LOCALS = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


class MeshError(Exception):
    """Base class for mesh construction/query failures."""


class MeshParseError(MeshError):
    """Malformed mesh file."""


class MeshTopologyError(MeshError):
    """Connectivity violates the manifoldness assumptions."""


class DegenerateElementError(MeshError):
    """An element is below the volume/area degeneracy threshold."""


def _signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p0 = vertices[tets[:, 0]]
    d = np.stack(
        [vertices[tets[:, k]] - p0 for k in (1, 2, 3)], axis=1
    )  # (m, 3, 3)
    return np.linalg.det(d) / 6.0


class TetMesh:
    """Tetrahedral mesh with adjacency, labels, and gradient operators.

    Tets are reoriented to positive signed volume at construction.
    ``vertex_labels`` maps label names (e.g. ``"fixture"``, ``"load"``) to
    arrays of vertex indices.
    """

    def __init__(self, vertices, tets, vertex_labels=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.tets = np.ascontiguousarray(tets, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshParseError("vertices must be an (n, 3) array")
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise MeshParseError("tets must be an (m, 4) array")
        if len(self.tets) == 0:
            raise MeshParseError("empty mesh: no tetrahedra")
        if self.tets.min() < 0 or self.tets.max() >= len(self.vertices):
            raise MeshParseError(
                "tet references vertex index outside 0..%d" % (len(self.vertices) - 1)
            )

        # Orientation repair: flip negative-volume tets.
        vol = _signed_volumes(self.vertices, self.tets)
        neg = vol < 0
        if neg.any():
            self.tets[neg] = self.tets[neg][:, [0, 1, 3, 2]]
            vol = np.abs(vol)
        if (vol < VOLUME_EPS).any():
            bad = int(np.argmin(vol))
            raise DegenerateElementError(
                f"tet {bad} has volume {vol[bad]:.3e} mm^3 below {VOLUME_EPS}"
            )
        self.volumes = vol
        self.centroids = self.vertices[self.tets].mean(axis=1)

        self._build_faces()
        self._build_edges()
        self._build_gradients()

        self.vertex_labels: dict[str, np.ndarray] = {}
        if vertex_labels:
            for name, idx in vertex_labels.items():
                self.set_label(name, idx)

    # ------------------------------------------------------------------
    # construction helpers

    def _build_faces(self):
        m = len(self.tets)
        faces = self.tets[:, _FACE_LOCALS]  # (m, 4, 3)
        keys = np.sort(faces.reshape(-1, 3), axis=1)
        uniq, inverse, counts = np.unique(
            keys, axis=0, return_inverse=True, return_counts=True
        )
        if counts.max() > 2:
            bad = uniq[int(np.argmax(counts))]
            raise MeshTopologyError(
                f"face {tuple(bad)} is shared by {counts.max()} tets (non-manifold)"
            )

        # neighbors[t, f] = tet across local face f, or -1 on the boundary
        order = np.argsort(inverse, kind="stable")
        tet_of = order // 4
        local_of = order % 4
        self.tet_neighbors = np.full((m, 4), -1, dtype=np.int64)
        sorted_inv = inverse[order]
        starts = np.searchsorted(sorted_inv, np.arange(len(uniq)))
        interior = np.nonzero(counts == 2)[0]
        ia = starts[interior]
        t0, f0 = tet_of[ia], local_of[ia]
        t1, f1 = tet_of[ia + 1], local_of[ia + 1]
        self.tet_neighbors[t0, f0] = t1
        self.tet_neighbors[t1, f1] = t0
        self.face_adjacency = np.column_stack([t0, t1])  # interior face tet pairs

        bdry = np.nonzero(counts == 1)[0]
        ib = starts[bdry]
        bt, bf = tet_of[ib], local_of[ib]
        tris = self.tets[bt][np.arange(len(bt))[:, None], _FACE_LOCALS[bf]]
        # orient boundary faces outward (normal away from the opposite vertex)
        a, b, c = (self.vertices[tris[:, k]] for k in range(3))
        n = np.cross(b - a, c - a)
        opp = self.vertices[self.tets[bt, bf]]
        flip = np.einsum("ij,ij->i", n, opp - a) > 0
        tris[flip] = tris[flip][:, [0, 2, 1]]
        self.boundary_faces = tris
        self.boundary_face_tet = bt

        # per-tet outward face normals and a point on each face (for tracing)
        corners = self.vertices[faces]  # (m, 4, 3, 3)
        fn = np.cross(
            corners[:, :, 1] - corners[:, :, 0], corners[:, :, 2] - corners[:, :, 0]
        )
        fn /= np.linalg.norm(fn, axis=2, keepdims=True)
        opp = self.vertices[self.tets]  # (m, 4, 3): vertex opposite each face
        inward = np.einsum("mfk,mfk->mf", fn, opp - corners[:, :, 0]) > 0
        fn[inward] *= -1.0
        self.face_normals = np.ascontiguousarray(fn)
        self.face_origins = np.ascontiguousarray(corners[:, :, 0])

    def _build_edges(self):
        pairs = self.tets[:, _EDGE_LOCALS].reshape(-1, 2)
        pairs = np.sort(pairs, axis=1)
        self.edges = np.unique(pairs, axis=0)
        n = len(self.vertices)
        data = np.ones(2 * len(self.edges), dtype=np.int8)
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        self.vertex_adjacency = sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def _build_gradients(self):
        p0 = self.vertices[self.tets[:, 0]]
        d = np.stack(
            [self.vertices[self.tets[:, k]] - p0 for k in (1, 2, 3)], axis=1
        )
        inv = np.linalg.inv(d)  # (m, 3, 3): maps value deltas to gradients
        ops = np.empty((len(self.tets), 3, 4))
        ops[:, :, 1:] = inv
        ops[:, :, 0] = -inv.sum(axis=2)
        self.grad_ops = ops

    # ------------------------------------------------------------------

    def set_label(self, name: str, indices) -> None:
        idx = np.unique(np.asarray(indices, dtype=np.int64))
        if len(idx) and (idx.min() < 0 or idx.max() >= len(self.vertices)):
            raise MeshError(f"label {name!r} references invalid vertex indices")
        self.vertex_labels[name] = idx

    def label_flags(self, name: str) -> np.ndarray:
        """Per-tet bool: does the tet touch any vertex carrying the label."""
        flags = np.zeros(len(self.vertices), dtype=bool)
        flags[self.vertex_labels.get(name, np.empty(0, dtype=np.int64))] = True
        return flags[self.tets].any(axis=1)

    @property
    def average_edge_length(self) -> float:
        e = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return float(np.linalg.norm(e, axis=1).mean())

    def vertex_components(self):
        ncomp, labels = connected_components(self.vertex_adjacency, directed=False)
        return ncomp, labels


@dataclass(frozen=True)
class VertexField:
    """One finite scalar per mesh vertex."""

    mesh: object
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        n = len(self.mesh.vertices)
        if vals.shape != (n,):
            raise MeshError(f"field has {vals.shape} values for {n} vertices")
        if not np.all(np.isfinite(vals)):
            raise MeshError("field contains non-finite values")
        object.__setattr__(self, "values", vals)


def tet_gradient(mesh: TetMesh, fld: VertexField, e: int) -> np.ndarray:
    """Constant gradient of the linear interpolant of ``fld`` over tet ``e``."""
    if mesh.volumes[e] < VOLUME_EPS:
        raise DegenerateElementError(f"tet {e} is degenerate")
    return mesh.grad_ops[e] @ fld.values[mesh.tets[e]]


def tet_gradients(mesh: TetMesh, values: np.ndarray) -> np.ndarray:
    """Per-tet gradients of a vertex scalar array, shape (m, 3)."""
    return np.einsum("mij,mj->mi", mesh.grad_ops, values[mesh.tets])


def k_ring(mesh, seeds, k: int) -> np.ndarray:
    """Vertices reachable from ``seeds`` via at most ``k`` mesh edges."""
    if k < 0:
        raise ValueError("k must be >= 0")
    seeds = np.unique(np.asarray(list(seeds), dtype=np.int64))
    if len(seeds) == 0:
        return seeds
    adj = mesh.vertex_adjacency
    visited = np.zeros(adj.shape[0], dtype=bool)
    visited[seeds] = True
    frontier = seeds
    for _ in range(k):
        nxt = np.unique(adj[frontier].indices)
        nxt = nxt[~visited[nxt]]
        if len(nxt) == 0:
            break
        visited[nxt] = True
        frontier = nxt
    return np.nonzero(visited)[0]


# ----------------------------------------------------------------------
# TetGen ASCII I/O


def _data_lines(path):
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def _sibling_ele(node_path):
    from pathlib import Path

    return Path(node_path).with_suffix(".ele")


def load_tet_mesh(node_path, ele_path=None, vertex_labels=None) -> TetMesh:
    """Load a TetGen ASCII .node/.ele pair; 0/1-based indexing auto-detected.

    When ``ele_path`` is omitted it defaults to the .node path with an .ele
    suffix.
    """
    if ele_path is None:
        ele_path = _sibling_ele(node_path)
    lines = _data_lines(node_path)
    try:
        _, header = next(lines)
    except StopIteration:
        raise MeshParseError(f"{node_path}: empty file")
    try:
        n_nodes = int(header.split()[0])
    except (ValueError, IndexError):
        raise MeshParseError(f"{node_path}: malformed header {header!r}")

    ids = np.empty(n_nodes, dtype=np.int64)
    pts = np.empty((n_nodes, 3))
    for i in range(n_nodes):
        try:
            lineno, line = next(lines)
            parts = line.split()
            ids[i] = int(parts[0])
            pts[i] = [float(parts[1]), float(parts[2]), float(parts[3])]
        except StopIteration:
            raise MeshParseError(f"{node_path}: expected {n_nodes} nodes, got {i}")
        except (ValueError, IndexError):
            raise MeshParseError(f"{node_path}:{lineno}: malformed node line {line!r}")
    base = int(ids.min()) if n_nodes else 0
    if base not in (0, 1):
        raise MeshParseError(f"{node_path}: node indices start at {base}, expected 0 or 1")
    order = np.argsort(ids, kind="stable")
    pts = pts[order]

    lines = _data_lines(ele_path)
    try:
        _, header = next(lines)
        n_tets = int(header.split()[0])
    except (StopIteration, ValueError, IndexError):
        raise MeshParseError(f"{ele_path}: malformed or missing header")
    tets = np.empty((n_tets, 4), dtype=np.int64)
    for i in range(n_tets):
        try:
            lineno, line = next(lines)
            parts = line.split()
            tets[i] = [int(p) for p in parts[1:5]]
        except StopIteration:
            raise MeshParseError(f"{ele_path}: expected {n_tets} tets, got {i}")
        except (ValueError, IndexError):
            raise MeshParseError(f"{ele_path}:{lineno}: malformed element line {line!r}")
    tets -= base
    if n_tets and (tets.min() < 0 or tets.max() >= n_nodes):
        raise MeshParseError(f"{ele_path}: element references node outside 1..{n_nodes}")
    return TetMesh(pts, tets, vertex_labels=vertex_labels)


def save_tet_mesh(mesh: TetMesh, node_path, ele_path=None) -> None:
    if ele_path is None:
        ele_path = _sibling_ele(node_path)
    with open(node_path, "w") as fh:
        fh.write(f"{len(mesh.vertices)} 3 0 0\n")
        for i, p in enumerate(mesh.vertices):
            fh.write(f"{i} {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
    with open(ele_path, "w") as fh:
        fh.write(f"{len(mesh.tets)} 4 0\n")
        for i, t in enumerate(mesh.tets):
            fh.write(f"{i} {t[0]} {t[1]} {t[2]} {t[3]}\n")


# ----------------------------------------------------------------------
# Triangle surface meshes


class TriMesh:
    """Edge-manifold triangle mesh, optionally tagged with source tets."""

    def __init__(self, vertices, faces, source_tet=None, check_area=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshParseError("faces must be an (f, 3) array")
        self.source_tet = (
            None if source_tet is None else np.asarray(source_tet, dtype=np.int64)
        )
        if self.source_tet is not None and len(self.source_tet) != len(self.faces):
            raise MeshError("source_tet length must match face count")

        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        n = np.cross(b - a, c - a)
        norms = np.linalg.norm(n, axis=1)
        self.face_areas = 0.5 * norms
        if check_area and len(self.faces) and self.face_areas.min() < AREA_EPS:
            bad = int(np.argmin(self.face_areas))
            raise DegenerateElementError(
                f"face {bad} has area {self.face_areas[bad]:.3e} mm^2 below {AREA_EPS}"
            )
        with np.errstate(invalid="ignore", divide="ignore"):
            self.face_normals = np.where(
                norms[:, None] > 0, n / np.maximum(norms, 1e-300)[:, None], 0.0
            )
        self.face_centroids = (a + b + c) / 3.0

        self._build_edges()
        self._grad_ops = None
        self._boundary_loops = None
        self._vertex_normals = None

    def _build_edges(self):
        f = len(self.faces)
        pairs = np.stack(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]],
            axis=1,
        ).reshape(-1, 2)
        keys = np.sort(pairs, axis=1)
        uniq, inverse, counts = np.unique(
            keys, axis=0, return_inverse=True, return_counts=True
        )
        if len(counts) and counts.max() > 2:
            bad = uniq[int(np.argmax(counts))]
            raise MeshTopologyError(
                f"edge {tuple(bad)} bounds {counts.max()} faces (non-manifold)"
            )
        self.edges = uniq
        self.edge_counts = counts
        order = np.argsort(inverse, kind="stable")
        face_of = order // 3
        starts = np.searchsorted(inverse[order], np.arange(len(uniq)))
        interior = np.nonzero(counts == 2)[0]
        self.interior_edges = uniq[interior]
        self.edge_face_pairs = np.column_stack(
            [face_of[starts[interior]], face_of[starts[interior] + 1]]
        )
        self.boundary_edges = uniq[counts == 1]

        n = len(self.vertices)
        w = np.linalg.norm(
            self.vertices[uniq[:, 0]] - self.vertices[uniq[:, 1]], axis=1
        )
        rows = np.concatenate([uniq[:, 0], uniq[:, 1]])
        cols = np.concatenate([uniq[:, 1], uniq[:, 0]])
        self.vertex_adjacency = sp.csr_matrix(
            (np.concatenate([w, w]), (rows, cols)), shape=(n, n)
        )

    @property
    def grad_ops(self) -> np.ndarray:
        """Per-face (3, 3) operators: intrinsic gradient from 3 vertex values."""
        if self._grad_ops is None:
            v = self.vertices[self.faces]  # (f, 3, 3)
            ops = np.empty((len(self.faces), 3, 3))
            for i in range(3):
                opp = v[:, (i + 2) % 3] - v[:, (i + 1) % 3]
                ops[:, :, i] = np.cross(self.face_normals, opp)
            ops /= np.maximum(2.0 * self.face_areas, 1e-300)[:, None, None]
            self._grad_ops = ops
        return self._grad_ops

    @property
    def vertex_normals(self) -> np.ndarray:
        if self._vertex_normals is None:
            vn = np.zeros_like(self.vertices)
            w = self.face_normals * self.face_areas[:, None]
            for k in range(3):
                np.add.at(vn, self.faces[:, k], w)
            norms = np.linalg.norm(vn, axis=1, keepdims=True)
            self._vertex_normals = vn / np.maximum(norms, 1e-300)
        return self._vertex_normals

    @property
    def boundary_loops(self) -> list:
        """Closed vertex cycles covering all boundary edges."""
        if self._boundary_loops is None:
            self._boundary_loops = self._trace_boundary_loops()
        return self._boundary_loops

    def _trace_boundary_loops(self):
        nxt: dict[int, list[int]] = {}
        for a, b in self.boundary_edges:
            nxt.setdefault(int(a), []).append(int(b))
            nxt.setdefault(int(b), []).append(int(a))
        for v, ns in nxt.items():
            if len(ns) % 2 != 0:
                raise MeshTopologyError(f"open boundary chain at vertex {v}")
        unused = {tuple(sorted((int(a), int(b)))) for a, b in self.boundary_edges}
        loops = []
        for start in sorted(nxt):
            while any(tuple(sorted((start, n))) in unused for n in nxt[start]):
                loop = [start]
                cur = start
                while True:
                    step = None
                    for n in sorted(nxt[cur]):
                        if tuple(sorted((cur, n))) in unused:
                            step = n
                            break
                    if step is None:
                        raise MeshTopologyError(
                            f"open boundary chain at vertex {cur}"
                        )
                    unused.discard(tuple(sorted((cur, step))))
                    if step == start:
                        break
                    loop.append(step)
                    cur = step
                loops.append(loop)
        return loops

    @property
    def average_edge_length(self) -> float:
        e = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return float(np.linalg.norm(e, axis=1).mean())

    @property
    def euler_characteristic(self) -> int:
        return len(self.vertices) - len(self.edges) + len(self.faces)

    def vertex_components(self):
        ncomp, labels = connected_components(self.vertex_adjacency, directed=False)
        return ncomp, labels


def tri_gradient(mesh: TriMesh, fld: VertexField, f: int) -> np.ndarray:
    """Intrinsic (tangent) surface gradient of ``fld`` over face ``f``."""
    if mesh.face_areas[f] < AREA_EPS:
        raise DegenerateElementError(f"face {f} is degenerate")
    return mesh.grad_ops[f] @ fld.values[mesh.faces[f]]


def tri_gradients(mesh: TriMesh, values: np.ndarray) -> np.ndarray:
    return np.einsum("fij,fj->fi", mesh.grad_ops, values[mesh.faces])
