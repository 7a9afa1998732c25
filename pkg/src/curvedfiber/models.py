"""Bundled synthetic models used by the test suite, the CLI examples, and
the benchmarks: structured bar meshes, the twist bar with its analytic
rotating stress field, and flat/curved triangle meshes for the per-layer
stages.
"""

from __future__ import annotations

import numpy as np

from .mesh import TetMesh, TriMesh

# 5-tet decomposition of a cube with corners indexed x + 2y + 4z:
# one central tet plus four corner tets.
_FIVE_TETS = np.array(
    [[0, 1, 2, 4], [3, 1, 2, 7], [5, 1, 4, 7], [6, 2, 4, 7], [1, 2, 4, 7]]
)

# Kuhn subdivision of a unit cube into 6 tets, compatible across a grid.
_KUHN_PERMS = [
    (0, 1, 2),
    (0, 2, 1),
    (1, 0, 2),
    (1, 2, 0),
    (2, 0, 1),
    (2, 1, 0),
]


def single_tet() -> TetMesh:
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    return TetMesh(verts, np.array([[0, 1, 2, 3]]))


def five_tet_cube(size: float = 1.0) -> TetMesh:
    corners = np.array(
        [[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=float
    )
    return TetMesh(corners * size, _FIVE_TETS.copy())


def box_mesh(nx: int, ny: int, nz: int, size=(1.0, 1.0, 1.0)) -> TetMesh:
    """Structured box of nx*ny*nz cubes, 6 Kuhn tets per cube."""
    sx, sy, sz = size
    xs = np.linspace(0, sx, nx + 1)
    ys = np.linspace(0, sy, ny + 1)
    zs = np.linspace(0, sz, nz + 1)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    verts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    ii, jj, kk = np.meshgrid(
        np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"
    )
    base = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
    e = np.eye(3, dtype=int)
    tets = []
    for p in _KUHN_PERMS:
        c0 = base
        c1 = base + e[p[0]]
        c2 = base + e[p[0]] + e[p[1]]
        c3 = base + 1
        tets.append(
            np.stack(
                [vid(*c.T) for c in (c0, c1, c2, c3)],
                axis=1,
            )
        )
    tets = np.concatenate(tets, axis=0)
    return TetMesh(verts, tets)


def _wall_vertices(mesh: TetMesh, axis: int, value: float, tol=1e-9, band=None):
    sel = np.abs(mesh.vertices[:, axis] - value) < tol
    if band is not None:
        b_axis, b_lo, b_hi = band
        sel &= (mesh.vertices[:, b_axis] >= b_lo) & (mesh.vertices[:, b_axis] <= b_hi)
    return np.nonzero(sel)[0]


def make_uniform_bar(nx=20, ny=5, nz=5, length=40.0, width=10.0):
    """Bar along x with fixture/load labels on the two end walls."""
    mesh = box_mesh(nx, ny, nz, size=(length, width, width))
    mesh.set_label("fixture", _wall_vertices(mesh, 0, 0.0))
    mesh.set_label("load", _wall_vertices(mesh, 0, length))
    return mesh


def uniform_bar_stress(mesh: TetMesh, sxx: float = 5.0) -> np.ndarray:
    t = np.zeros((len(mesh.tets), 6))
    t[:, 0] = sxx
    return t


def make_twist_bar(nx=28, ny=8, nz=8, length=40.0, width=10.0, twist_deg=25.0):
    """Bar whose analytic stress direction rotates in-plane with height z.

    Returns (mesh, tensors). The maximal principal direction at height z is
    (cos(phi), sin(phi), 0) with phi varying linearly from -twist to +twist
    across the bar height; fixture/load labels sit on mid-height bands of the
    two x-walls so traced stress lines near mid height connect them.
    """
    mesh = box_mesh(nx, ny, nz, size=(length, width, width))
    band_half = 1.6 * width / nz
    band = (2, width / 2 - band_half, width / 2 + band_half)
    mesh.set_label("fixture", _wall_vertices(mesh, 0, 0.0, band=band))
    mesh.set_label("load", _wall_vertices(mesh, 0, length, band=band))

    phi = np.deg2rad(twist_deg) * (2.0 * mesh.centroids[:, 2] / width - 1.0)
    d = np.column_stack([np.cos(phi), np.sin(phi), np.zeros_like(phi)])
    s = 5.0
    tensors = np.column_stack(
        [
            s * d[:, 0] ** 2,  # sxx
            s * d[:, 1] ** 2,  # syy
            np.zeros_like(phi),  # szz
            s * d[:, 0] * d[:, 1],  # sxy
            np.zeros_like(phi),  # syz
            np.zeros_like(phi),  # szx
        ]
    )
    return mesh, tensors


# ----------------------------------------------------------------------
# Triangle meshes for per-layer stages


def grid_square(n=20, size=1.0, z=0.0) -> TriMesh:
    """Flat square in the z-plane, n*n quads split into triangles."""
    xs = np.linspace(0, size, n + 1)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    verts = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, float(z))])

    def vid(i, j):
        return i * (n + 1) + j

    faces = []
    for i in range(n):
        for j in range(n):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            faces.append([a, b, c])
            faces.append([a, c, d])
    return TriMesh(verts, np.array(faces))


def plate_with_holes(nx=40, ny=24, size_x=20.0, size_y=12.0, holes=()) -> TriMesh:
    """Flat plate with circular holes cut by removing faces.

    ``holes`` is a sequence of (cx, cy, r). Hole rims are jagged grid
    boundaries but topologically clean disks.
    """
    xs = np.linspace(0, size_x, nx + 1)
    ys = np.linspace(0, size_y, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])

    def vid(i, j):
        return i * (ny + 1) + j

    faces = []
    for i in range(nx):
        for j in range(ny):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            faces.append([a, b, c])
            faces.append([a, c, d])
    faces = np.array(faces)
    keep = np.ones(len(faces), dtype=bool)
    cent = verts[faces].mean(axis=1)
    for cx, cy, r in holes:
        inside = (cent[:, 0] - cx) ** 2 + (cent[:, 1] - cy) ** 2 < r * r
        keep &= ~inside
    faces = faces[keep]
    used = np.unique(faces)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(verts[used], remap[faces])


def annulus(n_rings=10, n_sectors=48, r_inner=1.0, r_outer=3.0) -> TriMesh:
    radii = np.linspace(r_inner, r_outer, n_rings + 1)
    theta = np.linspace(0, 2 * np.pi, n_sectors, endpoint=False)
    verts = np.array(
        [[r * np.cos(t), r * np.sin(t), 0.0] for r in radii for t in theta]
    )

    def vid(i, j):
        return i * n_sectors + (j % n_sectors)

    faces = []
    for i in range(n_rings):
        for j in range(n_sectors):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j + 1), vid(i + 1, j)
            faces.append([a, b, c])
            faces.append([a, c, d])
    return TriMesh(verts, np.array(faces))


def cylinder_tube(n_theta=64, n_z=24, radius=5.0, height=12.0) -> TriMesh:
    theta = np.linspace(0, 2 * np.pi, n_theta, endpoint=False)
    zs = np.linspace(0, height, n_z + 1)
    verts = np.array(
        [
            [radius * np.cos(t), radius * np.sin(t), z]
            for z in zs
            for t in theta
        ]
    )

    def vid(i, j):
        return i * n_theta + (j % n_theta)

    faces = []
    for i in range(n_z):
        for j in range(n_theta):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j + 1), vid(i + 1, j)
            faces.append([a, b, c])
            faces.append([a, c, d])
    return TriMesh(verts, np.array(faces))
