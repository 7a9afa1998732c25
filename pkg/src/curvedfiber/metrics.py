"""Quantitative evaluation of generated toolpaths: stress-alignment
statistics, layer-thickness distribution, and continuity/turning reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ._accel import maybe_jit
from .layerfield import measure_layer_thickness
from .psl import PslWeights
from .stress import PrincipalStress

BARY_TOL = 1e-9
HISTOGRAM_BIN_DEG = 2.0
TURNING_ANGLE_DEG = 30.0


# ----------------------------------------------------------------------
# Point location in a tet mesh


def _locate_kernel(
    points, p0, inv_t, cell_start, cell_tets, origin, inv_h, dims, tol
):  # pragma: no cover - exercised via TetLocator
    n = points.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    for q in range(n):
        ix = int((points[q, 0] - origin[0]) * inv_h[0])
        iy = int((points[q, 1] - origin[1]) * inv_h[1])
        iz = int((points[q, 2] - origin[2]) * inv_h[2])
        if ix < 0:
            ix = 0
        if iy < 0:
            iy = 0
        if iz < 0:
            iz = 0
        if ix >= dims[0]:
            ix = dims[0] - 1
        if iy >= dims[1]:
            iy = dims[1] - 1
        if iz >= dims[2]:
            iz = dims[2] - 1
        cell = (ix * dims[1] + iy) * dims[2] + iz
        best = -1
        for k in range(cell_start[cell], cell_start[cell + 1]):
            t = cell_tets[k]
            l1 = (
                inv_t[t, 0, 0] * (points[q, 0] - p0[t, 0])
                + inv_t[t, 0, 1] * (points[q, 1] - p0[t, 1])
                + inv_t[t, 0, 2] * (points[q, 2] - p0[t, 2])
            )
            l2 = (
                inv_t[t, 1, 0] * (points[q, 0] - p0[t, 0])
                + inv_t[t, 1, 1] * (points[q, 1] - p0[t, 1])
                + inv_t[t, 1, 2] * (points[q, 2] - p0[t, 2])
            )
            l3 = (
                inv_t[t, 2, 0] * (points[q, 0] - p0[t, 0])
                + inv_t[t, 2, 1] * (points[q, 1] - p0[t, 1])
                + inv_t[t, 2, 2] * (points[q, 2] - p0[t, 2])
            )
            l0 = 1.0 - l1 - l2 - l3
            if l0 >= -tol and l1 >= -tol and l2 >= -tol and l3 >= -tol:
                if best < 0 or t < best:
                    best = t
        out[q] = best
    return out


_locate_kernel = maybe_jit(_locate_kernel)


class TetLocator:
    """Uniform-grid accelerated point-in-tet lookup.

    Ties on shared faces resolve to the lowest tet index, matching the
    brute-force oracle exactly.
    """

    def __init__(self, mesh, tol: float = BARY_TOL):
        self.mesh = mesh
        self.tol = tol
        m = len(mesh.tets)
        p0 = mesh.vertices[mesh.tets[:, 0]]
        d = np.stack(
            [mesh.vertices[mesh.tets[:, k]] - p0 for k in (1, 2, 3)], axis=1
        )
        # rows of inv_t are the barycentric gradients, so lam = inv_t @ (x-p0)
        self._inv_t = np.ascontiguousarray(
            np.swapaxes(np.linalg.inv(d), 1, 2)
        )
        self._p0 = np.ascontiguousarray(p0)

        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        res = max(1, int(round(m ** (1.0 / 3.0))))
        dims = np.maximum(1, np.minimum(res, 64) * np.ones(3, dtype=np.int64))
        h = np.maximum((hi - lo) / dims, 1e-12)
        self._origin = lo
        self._inv_h = 1.0 / h
        self._dims = dims

        tmin = mesh.vertices[mesh.tets].min(axis=1)
        tmax = mesh.vertices[mesh.tets].max(axis=1)
        c_lo = np.clip(((tmin - lo) * self._inv_h).astype(np.int64), 0, dims - 1)
        c_hi = np.clip(((tmax - lo) * self._inv_h).astype(np.int64), 0, dims - 1)
        ncell = int(dims.prod())
        counts = np.zeros(ncell + 1, dtype=np.int64)
        entries = []
        for t in range(m):
            xs = np.arange(c_lo[t, 0], c_hi[t, 0] + 1)
            ys = np.arange(c_lo[t, 1], c_hi[t, 1] + 1)
            zs = np.arange(c_lo[t, 2], c_hi[t, 2] + 1)
            cells = (
                (xs[:, None, None] * dims[1] + ys[None, :, None]) * dims[2]
                + zs[None, None, :]
            ).ravel()
            entries.append(np.stack([cells, np.full(len(cells), t)], axis=1))
        entries = np.concatenate(entries)
        order = np.lexsort((entries[:, 1], entries[:, 0]))
        entries = entries[order]
        np.add.at(counts, entries[:, 0] + 1, 1)
        self._cell_start = np.cumsum(counts)
        self._cell_tets = np.ascontiguousarray(entries[:, 1])

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Containing tet per point, -1 when outside the mesh."""
        points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        return _locate_kernel(
            points,
            self._p0,
            self._inv_t,
            self._cell_start,
            self._cell_tets,
            np.asarray(self._origin, dtype=np.float64),
            np.asarray(self._inv_h, dtype=np.float64),
            self._dims,
            self.tol,
        )


def brute_force_locate(mesh, points: np.ndarray, tol: float = BARY_TOL) -> np.ndarray:
    """Exhaustive point-in-tet oracle; lowest containing tet index or -1."""
    points = np.atleast_2d(points)
    p0 = mesh.vertices[mesh.tets[:, 0]]
    d = np.stack([mesh.vertices[mesh.tets[:, k]] - p0 for k in (1, 2, 3)], axis=1)
    inv_t = np.swapaxes(np.linalg.inv(d), 1, 2)
    out = np.full(len(points), -1, dtype=np.int64)
    for q, p in enumerate(points):
        lam = np.einsum("mij,mj->mi", inv_t, p - p0)
        l0 = 1.0 - lam.sum(axis=1)
        inside = (lam >= -tol).all(axis=1) & (l0 >= -tol)
        hits = np.nonzero(inside)[0]
        if len(hits):
            out[q] = hits[0]
    return out


# ----------------------------------------------------------------------
# Alignment


@dataclass
class AlignmentReport:
    angles_deg: np.ndarray = field(repr=False)  # critical-region waypoints
    other_angles_deg: np.ndarray = field(repr=False)  # outside critical regions
    seg_lengths: np.ndarray = field(repr=False)
    mean_deg: float = float("nan")
    median_deg: float = float("nan")
    length_weighted_mean_deg: float = float("nan")
    fraction_within_10deg: float = float("nan")
    other_mean_deg: float = float("nan")
    skipped_waypoints: int = 0

    def histogram(self):
        """(bin_start_deg, fraction) rows with 2-degree bins over [0, 90]."""
        edges = np.arange(0.0, 90.0 + HISTOGRAM_BIN_DEG, HISTOGRAM_BIN_DEG)
        if len(self.angles_deg) == 0:
            return [(float(e), 0.0) for e in edges[:-1]]
        counts, _ = np.histogram(self.angles_deg, bins=edges)
        frac = counts / counts.sum()
        return [(float(e), float(f)) for e, f in zip(edges[:-1], frac)]


def _fold_angle_deg(tangents: np.ndarray, directions: np.ndarray) -> np.ndarray:
    cosv = np.abs(np.einsum("ij,ij->i", tangents, directions))
    return np.degrees(np.arccos(np.clip(cosv, -1.0, 1.0)))


def alignment_stats(
    toolpaths,
    tet_stress: PrincipalStress,
    weights: PslWeights,
    mesh,
    locator=None,
) -> AlignmentReport:
    """Angles between toolpath segments and the element maximal-stress
    direction, folded into [0, 90] degrees; critical regions (elements with a
    positive stress-line count) are aggregated, the rest reported separately.
    """
    mids, tangs, lens = [], [], []
    for tp in toolpaths:
        if getattr(tp, "material", "fiber") != "fiber":
            continue
        pts = tp.waypoints
        if tp.closed and len(pts) > 1:
            pts = np.vstack([pts, pts[0]])
        if len(pts) < 2:
            continue
        seg = np.diff(pts, axis=0)
        ln = np.linalg.norm(seg, axis=1)
        ok = ln > 1e-12
        mids.append((pts[:-1] + pts[1:])[ok] * 0.5)
        tangs.append(seg[ok] / ln[ok, None])
        lens.append(ln[ok])
    if not mids:
        return AlignmentReport(
            angles_deg=np.zeros(0),
            other_angles_deg=np.zeros(0),
            seg_lengths=np.zeros(0),
        )
    mids = np.concatenate(mids)
    tangs = np.concatenate(tangs)
    lens = np.concatenate(lens)

    if locator is None:
        locator = TetLocator(mesh)
    tet_of = locator.locate(mids)
    found = tet_of >= 0
    skipped = int((~found).sum())
    tet_of, tangs, lens = tet_of[found], tangs[found], lens[found]

    angles = _fold_angle_deg(tangs, tet_stress.dir_max[tet_of])
    critical = weights.n_psl[tet_of] > 0
    crit_a, crit_l = angles[critical], lens[critical]
    other_a = angles[~critical]

    rep = AlignmentReport(
        angles_deg=crit_a,
        other_angles_deg=other_a,
        seg_lengths=crit_l,
        skipped_waypoints=skipped,
    )
    if len(crit_a):
        rep.mean_deg = float(crit_a.mean())
        rep.median_deg = float(np.median(crit_a))
        rep.length_weighted_mean_deg = float((crit_a * crit_l).sum() / crit_l.sum())
        rep.fraction_within_10deg = float((crit_a <= 10.0).mean())
    if len(other_a):
        rep.other_mean_deg = float(other_a.mean())
    return rep


# ----------------------------------------------------------------------
# Layer thickness


@dataclass
class ThicknessReport:
    values_mm: np.ndarray = field(repr=False)
    min_mm: float = float("nan")
    median_mm: float = float("nan")
    max_mm: float = float("nan")
    fraction_in_band: float = float("nan")
    band_mm: tuple = (float("nan"), float("nan"))


def thickness_stats(layers, toolpaths, band=None) -> ThicknessReport:
    """Waypoint-to-previous-layer distances across all layer pairs.

    ``band`` is an absolute (lo, hi) range in mm; when omitted it defaults to
    [0.5, 1.5] x median. A single layer yields an empty report.
    """
    by_layer: dict[int, list] = {}
    for tp in toolpaths:
        by_layer.setdefault(tp.layer_index, []).append(tp)
    vals = []
    for i in sorted(by_layer):
        if i == 0 or i - 1 >= len(layers) or i >= len(layers):
            continue
        pts = np.concatenate([tp.waypoints for tp in by_layer[i]])
        vals.append(measure_layer_thickness(layers[i], layers[i - 1], pts))
    if not vals:
        return ThicknessReport(values_mm=np.zeros(0))
    values = np.concatenate(vals)
    values = values[np.isfinite(values)]
    if len(values) == 0:
        return ThicknessReport(values_mm=np.zeros(0))
    med = float(np.median(values))
    lo, hi = band if band is not None else (0.5 * med, 1.5 * med)
    return ThicknessReport(
        values_mm=values,
        min_mm=float(values.min()),
        median_mm=med,
        max_mm=float(values.max()),
        fraction_in_band=float(((values >= lo) & (values <= hi)).mean()),
        band_mm=(float(lo), float(hi)),
    )


# ----------------------------------------------------------------------
# Continuity


def turning_angles_deg(toolpath) -> np.ndarray:
    """Direction change at each interior waypoint, degrees in [0, 180]."""
    pts = toolpath.waypoints
    if toolpath.closed and len(pts) > 2:
        pts = np.vstack([pts[-1], pts, pts[0]])
    if len(pts) < 3:
        return np.zeros(0)
    seg = np.diff(pts, axis=0)
    ln = np.linalg.norm(seg, axis=1)
    ok = ln > 1e-12
    seg = seg[ok] / ln[ok, None]
    if len(seg) < 2:
        return np.zeros(0)
    cosv = np.einsum("ij,ij->i", seg[:-1], seg[1:])
    return np.degrees(np.arccos(np.clip(cosv, -1.0, 1.0)))


@dataclass
class LayerContinuity:
    layer_index: int
    n_components: int
    visited: bool
    sharp_turns: int


@dataclass
class ContinuityReport:
    layers: list

    @property
    def all_visited(self) -> bool:
        return all(l.visited for l in self.layers)

    @property
    def total_sharp_turns(self) -> int:
        return sum(l.sharp_turns for l in self.layers)


def continuity_report(
    toolpaths,
    contours_per_layer: dict,
    surfaces_per_layer: dict | None = None,
    turn_threshold_deg: float = TURNING_ANGLE_DEG,
) -> ContinuityReport:
    """Per-layer component counts, turning statistics, and whether a single
    toolpath component passes within 2 edge lengths of every critical contour.

    ``contours_per_layer`` maps layer index to its contour classification;
    ``surfaces_per_layer`` maps layer index to the layer surface (needed for
    the edge-length scale; contour layers missing from it are skipped).
    """
    by_layer: dict[int, list] = {}
    for tp in toolpaths:
        if getattr(tp, "material", "fiber") != "fiber":
            continue
        by_layer.setdefault(tp.layer_index, []).append(tp)

    out = []
    for i in sorted(by_layer):
        paths = by_layer[i]
        sharp = sum(
            int((turning_angles_deg(tp) >= turn_threshold_deg).sum())
            for tp in paths
        )
        visited = True
        contours = contours_per_layer.get(i)
        if contours is not None and contours.critical:
            surface = (surfaces_per_layer or {}).get(i)
            if surface is None:
                visited = False
            else:
                reach = 2.0 * surface.average_edge_length
                trees = [
                    cKDTree(surface.vertices[np.asarray(loop, dtype=np.int64)])
                    for loop in contours.critical
                ]
                visited = any(
                    all(t.query(tp.waypoints)[0].min() <= reach for t in trees)
                    for tp in paths
                    if len(tp.waypoints)
                )
        out.append(
            LayerContinuity(
                layer_index=i,
                n_components=len(paths),
                visited=bool(visited),
                sharp_turns=sharp,
            )
        )
    return ContinuityReport(layers=out)


# ----------------------------------------------------------------------
# Report serialization


def format_report(alignment, thickness, continuity) -> str:
    lines = ["alignment:"]
    lines.append(f"  critical_waypoints: {len(alignment.angles_deg)}")
    lines.append(f"  mean_deg: {alignment.mean_deg:.6f}")
    lines.append(f"  median_deg: {alignment.median_deg:.6f}")
    lines.append(
        f"  length_weighted_mean_deg: {alignment.length_weighted_mean_deg:.6f}"
    )
    lines.append(f"  fraction_within_10deg: {alignment.fraction_within_10deg:.6f}")
    lines.append(f"  other_mean_deg: {alignment.other_mean_deg:.6f}")
    lines.append(f"  skipped_waypoints: {alignment.skipped_waypoints}")
    lines.append("thickness:")
    lines.append(f"  samples: {len(thickness.values_mm)}")
    lines.append(f"  min_mm: {thickness.min_mm:.6f}")
    lines.append(f"  median_mm: {thickness.median_mm:.6f}")
    lines.append(f"  max_mm: {thickness.max_mm:.6f}")
    lines.append(
        f"  band_mm: [{thickness.band_mm[0]:.6f}, {thickness.band_mm[1]:.6f}]"
    )
    lines.append(f"  fraction_in_band: {thickness.fraction_in_band:.6f}")
    lines.append("continuity:")
    lines.append(f"  all_visited: {continuity.all_visited}")
    lines.append(f"  total_sharp_turns: {continuity.total_sharp_turns}")
    for lc in continuity.layers:
        lines.append(
            f"  layer {lc.layer_index}: components={lc.n_components}"
            f" visited={lc.visited} sharp_turns={lc.sharp_turns}"
        )
    return "\n".join(lines) + "\n"


def save_histogram_csv(report: AlignmentReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_start_deg,fraction\n")
        for start, frac in report.histogram():
            fh.write(f"{start:.1f},{frac:.6f}\n")
