"""Visuotactile sensor simulation.

Soft-body (barrier contact) and compliant rigid physics, orthographic
tactile height maps, polynomial optical shading, marker motion fields,
and steppable environments built on top of them.
"""

from .compliant import (
    CompliantParams,
    RigidBody,
    contact_forces,
    inertia_of_solid_box,
    inertia_of_solid_sphere,
    step_rigid,
)
from .contact import ContactParams
from .errors import (
    CalibrationError,
    ConfigError,
    InvalidArgumentError,
    MeshFormatError,
    NumericalError,
    SolverStallError,
    TacsimError,
)
from .geometry import (
    Pose,
    TetMesh,
    TriMesh,
    edge_edge_distance,
    icosphere_surface,
    point_triangle_distance,
    surface_of,
    tetrahedralize_box,
    tetrahedralize_sphere,
)
from .envs import (
    MODE_RIGID,
    MODE_SOFT,
    TASKS,
    Action,
    ActionLimits,
    BenchReport,
    Environment,
    Observation,
    SceneConfig,
    StageTimings,
    VectorEnv,
    bench_task,
    config_from_json,
    config_to_json,
    default_config,
    make_env,
    observation_digest,
    run_bench,
    scripted_action,
    scripted_episode_length,
)
from .marker import LoadState, MarkerField, marker_displacements, track_load
from .meshio import load_mesh, save_mesh
from .optical import LightingModel, PolyTable, calibrate, normals_from, shade
from .softbody import (
    AttachmentSet,
    Material,
    SoftBodyState,
    SolverDiagnostics,
    SolverParams,
    find_attachments,
    init_softbody,
    step,
)
from .tactile import (
    HeightMap,
    IndentationMap,
    SensorConfig,
    indentation_from,
    load_heightmap_raw,
    render_heightmap,
    save_heightmap_raw,
    smooth_pyramid,
)

__version__ = "0.1.0"
