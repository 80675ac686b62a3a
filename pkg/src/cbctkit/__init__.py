"""cbctkit: matrix-free cone-beam CT projection and iterative reconstruction."""

from .geometry import (
    ConfigError,
    DetectorGeometry,
    GeometryError,
    TrajectoryGeometry,
    VolumeGeometry,
    detector_pixel_center,
    load_config,
    make_circular_trajectory,
    save_config,
    source_position,
)
from .phantom import Ellipsoid, Volume, generate_phantom, load_ellipsoids, shepp_logan_3d
from .operator import CbctOperator, GeometryMismatchError, ProjectionStack
from .solvers import (
    ConvergenceRecord,
    DegenerateOperatorError,
    SolverConfig,
    SolverConfigError,
    SolverReport,
    cgls,
    lsqr,
    normal_spectral_radius,
    psirt,
    psirt_step_scale,
    sirt,
    solve,
    write_history_csv,
)
from .analysis import DiscrepancyMetric, iterations_to_tolerance, relative_discrepancy
from .estimators import (
    CglsReconstructor,
    LsqrReconstructor,
    PsirtReconstructor,
    SirtReconstructor,
)

__version__ = "0.1.0"

__all__ = [
    "CbctOperator",
    "CglsReconstructor",
    "ConfigError",
    "ConvergenceRecord",
    "DegenerateOperatorError",
    "DetectorGeometry",
    "DiscrepancyMetric",
    "Ellipsoid",
    "GeometryError",
    "GeometryMismatchError",
    "LsqrReconstructor",
    "ProjectionStack",
    "PsirtReconstructor",
    "SirtReconstructor",
    "SolverConfig",
    "SolverConfigError",
    "SolverReport",
    "TrajectoryGeometry",
    "Volume",
    "VolumeGeometry",
    "cgls",
    "detector_pixel_center",
    "generate_phantom",
    "iterations_to_tolerance",
    "load_config",
    "load_ellipsoids",
    "lsqr",
    "make_circular_trajectory",
    "normal_spectral_radius",
    "psirt",
    "psirt_step_scale",
    "relative_discrepancy",
    "save_config",
    "shepp_logan_3d",
    "sirt",
    "solve",
    "source_position",
    "write_history_csv",
]
