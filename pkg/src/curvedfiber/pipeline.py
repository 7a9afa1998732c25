"""End-to-end orchestration: a single config drives stress → stress lines →
guidance field → curved layers → per-layer toolpaths → metrics, with every
stage's output persisted and the whole run deterministic.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import models
from .layerfield import (
    CurvedLayer,
    LayerFieldProblem,
    extract_isosurfaces,
    slab_anchors,
    solve_guidance_field,
)
from .mesh import TetMesh, TriMesh, VertexField, k_ring, load_tet_mesh
from .metrics import (
    alignment_stats,
    continuity_report,
    format_report,
    save_histogram_csv,
    thickness_stats,
)
from .psl import PslWeights, compute_psl_weights, default_l_max
from .regions import parse_selector, select_vertices
from .stress import (
    BoundaryCondition,
    load_stress_field,
    principal_decompose,
    save_stress_field,
    solve_linear_elasticity,
)
from .surfpath import Toolpath, detect_contours, generate_layer_toolpaths

STAGES = ("stress", "psl", "slice", "paths", "metrics")
WAYPOINT_HEADER = "layer,path,seq,x,y,z,nx,ny,nz,material"


class ConfigError(Exception):
    pass


class StageError(Exception):
    """Raised when a stage fails; carries the stage name in the message."""


@dataclass
class PipelineConfig:
    mesh_path: str | None = None
    mesh_model: str | None = None
    mesh_params: dict = field(default_factory=dict)
    stress_path: str | None = None
    boundary: dict | None = None
    fixture_selectors: list = field(default_factory=list)
    load_selectors: list = field(default_factory=list)
    build_direction: tuple = (0.0, 0.0, 1.0)
    n_layers: int = 50
    layer_weights: tuple = (1.0, 0.5, 0.1)  # (sf, cg, cp)
    path_weights: tuple = (1.0, 1.0, 1.0)  # (sf, cp, hf)
    critical_selectors: list = field(default_factory=list)
    roi_rings: int = 4
    fiber_width: float = 0.37
    n_paths: int | None = None
    l_max_factor: float = 100.0
    matrix_paths: bool = False
    geodesic_method: str = "heat"
    parallelism: int = 1
    seed: int = 0
    output: str = "out"

    def __post_init__(self):
        if self.stress_path is not None and self.boundary is not None:
            raise ConfigError(
                "config must provide exactly one of stress.path or boundary"
            )
        if (
            self.stress_path is None
            and self.boundary is None
            and self.mesh_model is None
        ):
            # bundled models carry an analytic stress field; file meshes don't
            raise ConfigError(
                "config must provide exactly one of stress.path or boundary"
            )
        if self.mesh_path is None and self.mesh_model is None:
            raise ConfigError("config must provide mesh.path or mesh.model")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if min(self.layer_weights) < 0 or min(self.path_weights) < 0:
            raise ConfigError("all weights must be >= 0")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.fiber_width <= 0:
            raise ConfigError("fiber_width must be positive")


def _parse_selectors(specs):
    return [parse_selector(s) for s in (specs or [])]


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    mesh = raw.get("mesh") or {}
    stress = raw.get("stress") or {}
    boundary = raw.get("boundary")
    lw = raw.get("layer_weights") or {}
    pw = raw.get("path_weights") or {}
    base = Path(path).parent

    def _resolve(p):
        if p is None:
            return None
        p = Path(p)
        return str(p if p.is_absolute() else base / p)

    return PipelineConfig(
        mesh_path=_resolve(mesh.get("path")),
        mesh_model=mesh.get("model"),
        mesh_params=mesh.get("params") or {},
        stress_path=_resolve(stress.get("path")),
        boundary=boundary,
        fixture_selectors=_parse_selectors(
            raw.get("fixture_regions")
            or (boundary or {}).get("fixture")
        ),
        load_selectors=_parse_selectors(
            raw.get("load_regions") or (boundary or {}).get("load")
        ),
        build_direction=tuple(raw.get("build_direction", (0.0, 0.0, 1.0))),
        n_layers=int(raw.get("n_layers", 50)),
        layer_weights=(
            float(lw.get("sf", 1.0)),
            float(lw.get("cg", 0.5)),
            float(lw.get("cp", 0.1)),
        ),
        path_weights=(
            float(pw.get("sf", 1.0)),
            float(pw.get("cp", 1.0)),
            float(pw.get("hf", 1.0)),
        ),
        critical_selectors=_parse_selectors(raw.get("critical_regions")),
        roi_rings=int(raw.get("roi_rings", 4)),
        fiber_width=float(raw.get("fiber_width", 0.37)),
        n_paths=(None if raw.get("n_paths") is None else int(raw["n_paths"])),
        l_max_factor=float(raw.get("l_max_factor", 100.0)),
        matrix_paths=bool(raw.get("matrix_paths", False)),
        geodesic_method=str(raw.get("geodesic_method", "heat")),
        parallelism=int(raw.get("parallelism", 1)),
        seed=int(raw.get("seed", 0)),
        output=str(raw.get("output", "out")),
    )


# ----------------------------------------------------------------------
# Artifact I/O


def save_layer_obj(surface: TriMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in surface.vertices:
            fh.write("v %.17g %.17g %.17g\n" % (v[0], v[1], v[2]))
        for f in surface.faces:
            fh.write("f %d %d %d\n" % (f[0] + 1, f[1] + 1, f[2] + 1))


def load_layer_obj(path) -> TriMesh:
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return TriMesh(
        np.asarray(verts, dtype=np.float64).reshape(-1, 3),
        np.asarray(faces, dtype=np.int64).reshape(-1, 3),
        check_area=False,
    )


def export_waypoints(toolpaths, path) -> None:
    """CSV rows ordered by (layer, path, sequence); 6-decimal floats."""
    if not toolpaths:
        raise StageError("paths: no toolpaths to export")
    rows = sorted(toolpaths, key=lambda t: (t.layer_index, t.path_index))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(WAYPOINT_HEADER + "\n")
        for tp in rows:
            for s, (p, n) in enumerate(zip(tp.waypoints, tp.normals)):
                fh.write(
                    "%d,%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%s\n"
                    % (
                        tp.layer_index,
                        tp.path_index,
                        s,
                        p[0],
                        p[1],
                        p[2],
                        n[0],
                        n[1],
                        n[2],
                        tp.material,
                    )
                )


def load_waypoints(path) -> list[Toolpath]:
    groups: dict[tuple, list] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != WAYPOINT_HEADER:
            raise StageError(f"paths: unexpected waypoint header {header!r}")
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != 10:
                raise StageError(f"paths: malformed waypoint row {line!r}")
            key = (int(parts[0]), int(parts[1]), parts[9])
            groups.setdefault(key, []).append([float(x) for x in parts[3:9]])
    out = []
    for (layer, pathi, material) in sorted(groups):
        arr = np.asarray(groups[(layer, pathi, material)])
        out.append(
            Toolpath(
                waypoints=arr[:, :3],
                normals=arr[:, 3:6],
                params=np.zeros(len(arr)),
                closed=False,
                layer_index=layer,
                path_index=pathi,
                material=material,
            )
        )
    return out


def _save_field_csv(path, header, values, fmt="%.17g"):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for i, v in enumerate(values):
            fh.write(("%d," + fmt + "\n") % (i, v))


def _load_field_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    order = np.argsort(data[:, 0])
    return data[order, 1]


# ----------------------------------------------------------------------
# Stages


def _build_mesh(config: PipelineConfig):
    if config.mesh_path is not None:
        mesh = load_tet_mesh(config.mesh_path)
        analytic = None
    else:
        name = config.mesh_model
        params = dict(config.mesh_params)
        if name == "uniform_bar":
            mesh = models.make_uniform_bar(**params)
            analytic = models.uniform_bar_stress(mesh)
        elif name == "twist_bar":
            mesh, analytic = models.make_twist_bar(**params)
        else:
            raise ConfigError(f"unknown bundled model {name!r}")
    if config.fixture_selectors:
        mesh.set_label(
            "fixture", select_vertices(mesh.vertices, config.fixture_selectors)
        )
    if config.load_selectors:
        mesh.set_label("load", select_vertices(mesh.vertices, config.load_selectors))
    return mesh, analytic


def _boundary_condition(mesh: TetMesh, config: PipelineConfig) -> BoundaryCondition:
    b = config.boundary or {}
    fixed = mesh.vertex_labels.get("fixture", np.empty(0, dtype=np.int64))
    load_flags = np.zeros(len(mesh.vertices), dtype=bool)
    load_flags[mesh.vertex_labels.get("load", np.empty(0, dtype=np.int64))] = True
    loaded = np.nonzero(load_flags[mesh.boundary_faces].all(axis=1))[0]
    if len(loaded) == 0:
        raise StageError("stress: no boundary faces inside the load selectors")
    traction = np.asarray(b.get("traction", (0.0, 0.0, -1.0)), dtype=np.float64)
    material = b.get("material") or {}
    return BoundaryCondition(
        fixed_vertices=fixed,
        loaded_faces=loaded,
        tractions=np.tile(traction, (len(loaded), 1)),
        youngs_modulus=float(material.get("E", 3500.0)),
        poisson_ratio=float(material.get("nu", 0.36)),
    )


@dataclass
class PipelineState:
    config: PipelineConfig
    out_dir: Path
    mesh: TetMesh = None
    tensors: np.ndarray = None
    principal: object = None
    weights: PslWeights = None
    guidance: VertexField = None
    layers: list = None
    toolpaths: list = None
    contours_per_layer: dict = None
    timings: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)


def _stage_stress(state: PipelineState):
    cfg = state.config
    state.mesh, analytic = _build_mesh(cfg)
    art = state.out_dir / "stress.csv"
    if art.exists():
        state.tensors = load_stress_field(art, state.mesh)
    elif cfg.stress_path is not None:
        state.tensors = load_stress_field(cfg.stress_path, state.mesh)
        save_stress_field(art, state.tensors)
    elif cfg.boundary is not None:
        bc = _boundary_condition(state.mesh, cfg)
        state.tensors = solve_linear_elasticity(state.mesh, bc)
        save_stress_field(art, state.tensors)
    else:  # bundled analytic field
        state.tensors = analytic
        save_stress_field(art, state.tensors)
    state.principal = principal_decompose(state.tensors)
    state.manifest["stress"] = {
        "artifact": "stress.csv",
        "elements": int(len(state.mesh.tets)),
        "vertices": int(len(state.mesh.vertices)),
    }


def _stage_psl(state: PipelineState):
    cfg = state.config
    art = state.out_dir / "npsl.csv"
    if art.exists():
        n_psl = _load_field_csv(art).astype(np.int64)
        state.weights = PslWeights(n_psl=n_psl)
    else:
        l_max = default_l_max(state.mesh, cfg.l_max_factor)
        state.weights = compute_psl_weights(state.mesh, state.principal, l_max=l_max)
        _save_field_csv(art, "elem,n_psl", state.weights.n_psl, fmt="%d")
    state.manifest["psl"] = {
        "artifact": "npsl.csv",
        "critical_elements": int((state.weights.n_psl > 0).sum()),
    }


def _stage_slice(state: PipelineState):
    cfg = state.config
    mesh = state.mesh
    g_art = state.out_dir / "guidance.csv"
    if g_art.exists():
        state.guidance = VertexField(mesh, _load_field_csv(g_art))
    else:
        lo, hi = slab_anchors(mesh, cfg.build_direction)
        roi = []
        for name in ("fixture", "load"):
            seeds = mesh.vertex_labels.get(name, np.empty(0, dtype=np.int64))
            if len(seeds):
                roi.append(k_ring(mesh, seeds, cfg.roi_rings))
        problem = LayerFieldProblem(
            weight_sf=cfg.layer_weights[0],
            weight_cg=cfg.layer_weights[1],
            weight_cp=cfg.layer_weights[2],
            roi_regions=roi,
            anchors_low=lo,
            anchors_high=hi,
        )
        state.guidance = solve_guidance_field(
            mesh, state.principal, state.weights, problem
        )
        _save_field_csv(g_art, "vertex,g", state.guidance.values)

    state.layers = extract_isosurfaces(mesh, state.guidance, cfg.n_layers)
    with open(state.out_dir / "layers.csv", "w", encoding="utf-8") as fh:
        fh.write("layer,iso_value,face_count,area_mm2\n")
        for layer in state.layers:
            s = layer.surface
            save_layer_obj(s, state.out_dir / ("layer_%04d.obj" % layer.layer_index))
            fh.write(
                "%d,%.6f,%d,%.6f\n"
                % (
                    layer.layer_index,
                    layer.iso_value,
                    len(s.faces),
                    float(s.face_areas.sum()),
                )
            )
    state.manifest["slice"] = {
        "artifact": "layers.csv",
        "layers": int(len(state.layers)),
        "faces": int(sum(len(l.surface.faces) for l in state.layers)),
    }


def _stage_paths(state: PipelineState):
    cfg = state.config

    def one_layer(layer):
        return generate_layer_toolpaths(
            layer,
            state.principal,
            critical_selectors=cfg.critical_selectors,
            weight_sf=cfg.path_weights[0],
            weight_cp=cfg.path_weights[1],
            weight_hf=cfg.path_weights[2],
            fiber_width=cfg.fiber_width,
            n_paths=cfg.n_paths,
            matrix_paths=cfg.matrix_paths,
            geodesic_method=cfg.geodesic_method,
        )

    if cfg.parallelism > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            results = list(pool.map(one_layer, state.layers))
    else:
        results = [one_layer(layer) for layer in state.layers]

    state.toolpaths = []
    state.contours_per_layer = {}
    for layer, (tps, contours, _diag) in zip(state.layers, results):
        state.toolpaths.extend(tps)
        state.contours_per_layer[layer.layer_index] = contours
    export_waypoints(state.toolpaths, state.out_dir / "waypoints.csv")
    state.manifest["paths"] = {
        "artifact": "waypoints.csv",
        "toolpaths": int(len(state.toolpaths)),
        "waypoints": int(sum(len(t) for t in state.toolpaths)),
    }


def _stage_metrics(state: PipelineState):
    surfaces = {l.layer_index: l.surface for l in state.layers}
    align = alignment_stats(
        state.toolpaths, state.principal, state.weights, state.mesh
    )
    thick = thickness_stats(state.layers, state.toolpaths)
    cont = continuity_report(
        state.toolpaths, state.contours_per_layer, surfaces
    )
    with open(state.out_dir / "report.txt", "w", encoding="utf-8") as fh:
        fh.write(format_report(align, thick, cont))
    save_histogram_csv(align, state.out_dir / "alignment_hist.csv")
    state.manifest["metrics"] = {
        "artifact": "report.txt",
        "alignment_mean_deg": (
            None if np.isnan(align.mean_deg) else round(align.mean_deg, 6)
        ),
        "fraction_within_10deg": (
            None
            if np.isnan(align.fraction_within_10deg)
            else round(align.fraction_within_10deg, 6)
        ),
        "thickness_median_mm": (
            None if np.isnan(thick.median_mm) else round(thick.median_mm, 6)
        ),
        "all_contours_visited": bool(cont.all_visited),
    }


_STAGE_FUNCS = {
    "stress": _stage_stress,
    "psl": _stage_psl,
    "slice": _stage_slice,
    "paths": _stage_paths,
    "metrics": _stage_metrics,
}


def run_pipeline(
    config: PipelineConfig, out_dir=None, last_stage: str = "metrics"
) -> PipelineState:
    """Execute stages in order up to ``last_stage``; artifacts cached on disk
    are reused so reruns from any stage reproduce identical outputs.
    """
    if last_stage not in STAGES:
        raise ConfigError(f"unknown stage {last_stage!r}")
    out = Path(out_dir if out_dir is not None else config.output)
    out.mkdir(parents=True, exist_ok=True)
    state = PipelineState(config=config, out_dir=out)
    for stage in STAGES[: STAGES.index(last_stage) + 1]:
        t0 = time.perf_counter()
        try:
            _STAGE_FUNCS[stage](state)
        except (ConfigError, StageError):
            raise
        except Exception as exc:
            raise StageError(f"{stage}: {exc}") from exc
        state.timings[stage] = round(time.perf_counter() - t0, 6)

    manifest = {
        "stages": {k: state.manifest[k] for k in sorted(state.manifest)},
        "config_digest": _config_digest(config),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    # timings vary run to run; kept out of the deterministic artifact set
    with open(out / "timings.json", "w", encoding="utf-8") as fh:
        json.dump(state.timings, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return state


def _config_digest(config: PipelineConfig) -> str:
    enc = json.dumps(
        {
            k: (list(v) if isinstance(v, tuple) else str(v))
            for k, v in vars(config).items()
            if k
            not in (
                "output",
                "parallelism",
                "fixture_selectors",
                "load_selectors",
                "critical_selectors",
            )
        },
        sort_keys=True,
    )
    return hashlib.sha256(enc.encode()).hexdigest()[:16]
