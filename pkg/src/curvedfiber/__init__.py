"""Stress-aligned curved-layer slicing and continuous fiber toolpath
generation for tetrahedral solid models.
"""

from ._accel import NUMBA_ENABLED, backend_name
from .layerfield import (
    CurvedLayer,
    FieldSolveError,
    LayerFieldProblem,
    extract_isosurfaces,
    marching_tets,
    measure_layer_thickness,
    slab_anchors,
    solve_guidance_field,
)
from .mesh import (
    DegenerateElementError,
    MeshError,
    MeshParseError,
    MeshTopologyError,
    TetMesh,
    TriMesh,
    VertexField,
    load_tet_mesh,
    save_tet_mesh,
)
from .metrics import (
    AlignmentReport,
    ContinuityReport,
    TetLocator,
    ThicknessReport,
    alignment_stats,
    continuity_report,
    thickness_stats,
)
from .pipeline import ConfigError, PipelineConfig, StageError, load_config, run_pipeline
from .psl import (
    PrincipalStressLine,
    PslWeights,
    compute_psl_weights,
    count_psl_weights,
    select_psls,
    trace_all,
    trace_psl,
)
from .regions import BoxSelector, IndexSelector, SphereSelector, parse_selector
from .stress import (
    BoundaryCondition,
    PrincipalStress,
    SingularStiffnessError,
    StressError,
    load_stress_field,
    principal_decompose,
    save_stress_field,
    solve_linear_elasticity,
)
from .surfpath import (
    CriticalContours,
    CutGraph,
    LayerStress,
    Toolpath,
    TopologyAnalysisError,
    build_cut_graph,
    cut_mesh,
    detect_contours,
    extract_isocurves,
    generate_layer_toolpaths,
    geodesic_field,
    project_stress,
    region_center,
    solve_toolpath_field,
    voronoi_partition,
)

__version__ = "0.1.0"
