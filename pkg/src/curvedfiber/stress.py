"""Per-element stress tensors: built-in linear tet FEA, CSV ingestion, and
principal decomposition.

Stress tensors are stored in Voigt order (sxx, syy, szz, sxy, syz, szx), MPa.
The FEA uses constant-strain tetrahedra; high-fidelity workflows can bypass it
entirely by loading an externally computed stress CSV.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TetMesh

STRESS_CSV_HEADER = "elem,sxx,syy,szz,sxy,syz,szx"

# canonical tie tolerance for near-equal leading principal magnitudes
DEGENERACY_REL_TOL = 1e-3


class StressError(Exception):
    pass


class SingularStiffnessError(StressError):
    pass


@dataclass
class BoundaryCondition:
    """Fixed vertices, face tractions, and an isotropic material.

    ``loaded_faces`` are indices into ``mesh.boundary_faces``; ``tractions``
    holds one 3-vector (MPa) per loaded face.
    """

    fixed_vertices: np.ndarray
    loaded_faces: np.ndarray
    tractions: np.ndarray
    youngs_modulus: float = 3500.0  # MPa, PLA default
    poisson_ratio: float = 0.36

    def __post_init__(self):
        self.fixed_vertices = np.unique(np.asarray(self.fixed_vertices, dtype=np.int64))
        self.loaded_faces = np.asarray(self.loaded_faces, dtype=np.int64)
        self.tractions = np.atleast_2d(np.asarray(self.tractions, dtype=np.float64))
        if len(self.tractions) == 1 and len(self.loaded_faces) > 1:
            self.tractions = np.repeat(self.tractions, len(self.loaded_faces), axis=0)
        if self.tractions.shape != (len(self.loaded_faces), 3):
            raise StressError("tractions must be one 3-vector per loaded face")
        if not (0.0 <= self.poisson_ratio < 0.5):
            raise StressError("Poisson ratio must lie in [0, 0.5)")
        if self.youngs_modulus <= 0:
            raise StressError("Young's modulus must be positive")


def _elasticity_matrix(E: float, nu: float) -> np.ndarray:
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] += 2 * mu
    D[np.arange(3, 6), np.arange(3, 6)] = mu  # engineering shear strains
    return D


def _element_b_matrices(mesh: TetMesh) -> np.ndarray:
    """Strain-displacement matrices, shape (m, 6, 12), Voigt/engineering."""
    g = mesh.grad_ops  # (m, 3, 4): dN_k/dx_i
    m = len(mesh.tets)
    B = np.zeros((m, 6, 12))
    for k in range(4):
        dx, dy, dz = g[:, 0, k], g[:, 1, k], g[:, 2, k]
        c = 3 * k
        B[:, 0, c + 0] = dx
        B[:, 1, c + 1] = dy
        B[:, 2, c + 2] = dz
        B[:, 3, c + 0] = dy
        B[:, 3, c + 1] = dx
        B[:, 4, c + 1] = dz
        B[:, 4, c + 2] = dy
        B[:, 5, c + 0] = dz
        B[:, 5, c + 2] = dx
    return B


def _nodal_forces(mesh: TetMesh, bc: BoundaryCondition) -> np.ndarray:
    f = np.zeros((len(mesh.vertices), 3))
    for fi, trac in zip(bc.loaded_faces, bc.tractions):
        tri = mesh.boundary_faces[fi]
        a, b, c = mesh.vertices[tri]
        area = 0.5 * np.linalg.norm(np.cross(b - a, c - a))
        for v in tri:
            f[v] += trac * area / 3.0
    return f


def solve_linear_elasticity(mesh: TetMesh, bc: BoundaryCondition) -> np.ndarray:
    """Displacement solve + per-element stress, returned as (m, 6) Voigt MPa.

    Raises SingularStiffnessError when the fixture set cannot remove all
    rigid-body modes.
    """
    n = len(mesh.vertices)
    if len(bc.fixed_vertices) == 0:
        raise SingularStiffnessError(
            "no fixed vertices: stiffness matrix has 6 rigid-body modes"
        )

    D = _elasticity_matrix(bc.youngs_modulus, bc.poisson_ratio)
    B = _element_b_matrices(mesh)
    Ke = np.einsum("mji,jk,mkl,m->mil", B, D, B, mesh.volumes)  # (m, 12, 12)

    dof = (3 * mesh.tets[:, :, None] + np.arange(3)).reshape(len(mesh.tets), 12)
    rows = np.repeat(dof, 12, axis=1).ravel()
    cols = np.tile(dof, (1, 12)).ravel()
    K = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(3 * n, 3 * n))

    f = _nodal_forces(mesh, bc).ravel()
    fixed_dof = (3 * bc.fixed_vertices[:, None] + np.arange(3)).ravel()
    free = np.setdiff1d(np.arange(3 * n), fixed_dof)
    Kff = K[free][:, free].tocsc()
    ff = f[free]

    u = np.zeros(3 * n)
    if len(free):
        try:
            sol = spla.spsolve(Kff, ff)
        except RuntimeError as exc:
            raise SingularStiffnessError(f"direct solve failed: {exc}") from exc
        if not np.all(np.isfinite(sol)):
            raise SingularStiffnessError(
                "singular stiffness: fixture set leaves rigid-body modes"
            )
        res = np.linalg.norm(Kff @ sol - ff)
        ref = max(np.linalg.norm(ff), 1e-30)
        if np.linalg.norm(ff) > 0 and res / ref > 1e-8:
            raise SingularStiffnessError(
                f"solve did not converge: relative residual {res / ref:.3e}"
            )
        u[free] = sol

    ue = u.reshape(n, 3)[mesh.tets].reshape(len(mesh.tets), 12)
    strains = np.einsum("mij,mj->mi", B, ue)
    return strains @ D.T


# ----------------------------------------------------------------------
# Stress CSV I/O


def save_stress_field(path, tensors: np.ndarray) -> None:
    tensors = np.asarray(tensors, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write(STRESS_CSV_HEADER + "\n")
        for e, row in enumerate(tensors):
            fh.write(
                "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n" % (e, *row)
            )


def load_stress_field(path, mesh: TetMesh) -> np.ndarray:
    """Read per-element tensors; element ids must cover 0..M-1 exactly."""
    m = len(mesh.tets)
    tensors = np.full((m, 6), np.nan)
    seen = np.zeros(m, dtype=bool)
    with open(path, "r") as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != STRESS_CSV_HEADER:
            raise StressError(f"{path}: unexpected header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise StressError(f"{path}:{lineno}: expected 7 fields")
            try:
                e = int(parts[0])
                vals = [float(p) for p in parts[1:]]
            except ValueError:
                raise StressError(f"{path}:{lineno}: non-numeric field")
            if not 0 <= e < m:
                raise StressError(f"{path}:{lineno}: element id {e} out of range")
            if seen[e]:
                raise StressError(f"{path}:{lineno}: duplicate element id {e}")
            seen[e] = True
            tensors[e] = vals
    if not seen.all():
        missing = int(np.nonzero(~seen)[0][0])
        raise StressError(f"{path}: missing element id {missing}")
    return tensors


# ----------------------------------------------------------------------
# Principal decomposition


def voigt_to_tensor(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    sxx, syy, szz, sxy, syz, szx = np.moveaxis(v, -1, 0)
    t = np.empty(v.shape[:-1] + (3, 3))
    t[..., 0, 0], t[..., 1, 1], t[..., 2, 2] = sxx, syy, szz
    t[..., 0, 1] = t[..., 1, 0] = sxy
    t[..., 1, 2] = t[..., 2, 1] = syz
    t[..., 0, 2] = t[..., 2, 0] = szx
    return t


@dataclass(frozen=True)
class PrincipalStress:
    """Principal values sorted by |sigma| descending, with unit directions."""

    values: np.ndarray  # (m, 3)
    directions: np.ndarray = field(repr=False)  # (m, 3, 3), directions[e, k]
    degenerate: np.ndarray = field(repr=False)  # (m,) bool

    def __len__(self):
        return len(self.values)

    @property
    def sigma_max(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def dir_max(self) -> np.ndarray:
        return self.directions[:, 0]


def _canonicalize_signs(dirs: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude coordinate of each direction positive."""
    lead = np.argmax(np.abs(dirs), axis=-1)
    sign = np.sign(np.take_along_axis(dirs, lead[..., None], axis=-1))
    sign[sign == 0] = 1.0
    return dirs * sign


def principal_decompose(tensors: np.ndarray) -> PrincipalStress:
    """Symmetric eigendecomposition of Voigt tensors, |sigma|-sorted.

    The field is bidirectional, so each direction's sign is canonicalized.
    Equivalent to the SVD of a symmetric tensor but keeps the sign of each
    principal value (tension vs compression).
    """
    v = np.atleast_2d(np.asarray(tensors, dtype=np.float64))
    if not np.all(np.isfinite(v)):
        raise StressError("stress tensors contain non-finite components")
    t = voigt_to_tensor(v)
    w, vec = np.linalg.eigh(t)  # ascending eigenvalues, columns are vectors
    order = np.argsort(-np.abs(w), axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    vec = np.take_along_axis(
        np.swapaxes(vec, -1, -2), order[:, :, None], axis=1
    )  # (m, 3, 3), rows are directions
    vec = _canonicalize_signs(vec)
    tol = DEGENERACY_REL_TOL * np.maximum(1.0, np.abs(w[:, 0]))
    degenerate = (np.abs(w[:, 0]) - np.abs(w[:, 1])) < tol
    return PrincipalStress(values=w, directions=vec, degenerate=degenerate)
