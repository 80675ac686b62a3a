"""Volume grids and the circular CBCT acquisition trajectory.

World frame convention (fixed here, used everywhere else):
right-handed, rotation axis = z, the view-0 source sits on the negative
x axis at distance ``sid`` from the isocenter.  The detector u axis lies
in the rotation plane and the v axis points along +z.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "GeometryError",
    "ConfigError",
    "VolumeGeometry",
    "DetectorGeometry",
    "TrajectoryGeometry",
    "make_circular_trajectory",
    "view_angle",
    "source_position",
    "detector_frame",
    "detector_pixel_center",
    "load_config",
    "save_config",
]


class GeometryError(ValueError):
    """Raised when a geometry object would violate its invariants."""


class ConfigError(ValueError):
    """Raised on malformed geometry config files (bad syntax, unknown keys)."""


@dataclass(frozen=True)
class VolumeGeometry:
    """Voxel grid: counts, physical voxel size (mm) and world-space offset
    of the volume center from the rotation isocenter (mm)."""

    nx: int
    ny: int
    nz: int
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)
    center_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise GeometryError("voxel counts must be >= 1")
        if min(self.voxel_size) <= 0:
            raise GeometryError("voxel sizes must be > 0")

    @property
    def n_voxels(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def extent(self) -> tuple[float, float, float]:
        """Physical edge lengths of the volume box, mm."""
        return (
            self.nx * self.voxel_size[0],
            self.ny * self.voxel_size[1],
            self.nz * self.voxel_size[2],
        )

    def corner(self) -> np.ndarray:
        """World position of the low corner of the volume box."""
        ext = self.extent
        return np.array(
            [self.center_offset[a] - 0.5 * ext[a] for a in range(3)], dtype=np.float64
        )


@dataclass(frozen=True)
class DetectorGeometry:
    """Flat-panel layout: nu columns x nv rows, pixel pitch in mm, and the
    in-plane offset of the source's orthogonal projection (principal point)."""

    nu: int
    nv: int
    pixel_size: tuple[float, float] = (1.0, 1.0)
    principal_point_offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if min(self.nu, self.nv) < 1:
            raise GeometryError("detector pixel counts must be >= 1")
        if min(self.pixel_size) <= 0:
            raise GeometryError("detector pixel sizes must be > 0")


@dataclass(frozen=True)
class TrajectoryGeometry:
    """Circular source trajectory plus the detector riding opposite it.

    View k has angle theta_k = start_angle + k * angular_span / n_views.
    """

    sid: float
    sdd: float
    n_views: int
    start_angle: float
    angular_span: float
    detector: DetectorGeometry

    def __post_init__(self):
        if not (0 < self.sid < self.sdd):
            raise GeometryError(f"need 0 < sid < sdd, got sid={self.sid}, sdd={self.sdd}")
        if self.n_views < 1:
            raise GeometryError("n_views must be >= 1")

    @property
    def n_rays(self) -> int:
        return self.detector.nu * self.detector.nv * self.n_views


def make_circular_trajectory(
    sid: float,
    sdd: float,
    n_views: int,
    start_angle: float,
    angular_span: float,
    detector: DetectorGeometry,
) -> TrajectoryGeometry:
    """Build a validated circular trajectory (full constructor validation)."""
    return TrajectoryGeometry(
        sid=float(sid),
        sdd=float(sdd),
        n_views=int(n_views),
        start_angle=float(start_angle),
        angular_span=float(angular_span),
        detector=detector,
    )


def view_angle(traj: TrajectoryGeometry, view: int) -> float:
    if not 0 <= view < traj.n_views:
        raise IndexError(f"view {view} out of range [0, {traj.n_views})")
    return traj.start_angle + view * traj.angular_span / traj.n_views


def source_position(traj: TrajectoryGeometry, view: int) -> np.ndarray:
    """World position of the source at a given view, mm."""
    theta = view_angle(traj, view)
    return np.array(
        [-traj.sid * np.cos(theta), -traj.sid * np.sin(theta), 0.0], dtype=np.float64
    )


def detector_frame(traj: TrajectoryGeometry, view: int):
    """Detector plane at a view: (center, u_axis, v_axis), unit axes.

    The center is the point at distance sdd from the source along the
    source-isocenter ray; principal_point_offset shifts pixel coordinates,
    not this point.
    """
    theta = view_angle(traj, view)
    c, s = np.cos(theta), np.sin(theta)
    center = np.array([(traj.sdd - traj.sid) * c, (traj.sdd - traj.sid) * s, 0.0])
    u_axis = np.array([-s, c, 0.0])
    v_axis = np.array([0.0, 0.0, 1.0])
    return center, u_axis, v_axis


def detector_pixel_center(traj: TrajectoryGeometry, view: int, u: int, v: int) -> np.ndarray:
    """World position of the center of detector pixel (u, v) at a view, mm."""
    det = traj.detector
    if not 0 <= u < det.nu:
        raise IndexError(f"u {u} out of range [0, {det.nu})")
    if not 0 <= v < det.nv:
        raise IndexError(f"v {v} out of range [0, {det.nv})")
    center, u_axis, v_axis = detector_frame(traj, view)
    pu, pv = det.pixel_size
    ou, ov = det.principal_point_offset
    du = (u + 0.5 - det.nu / 2.0) * pu + ou
    dv = (v + 0.5 - det.nv / 2.0) * pv + ov
    return center + du * u_axis + dv * v_axis


# Config file: flat "key = value" lines, '#' comments, fixed key set.
_CONFIG_KEYS = {
    "sid_mm": float,
    "sdd_mm": float,
    "n_views": int,
    "start_angle_rad": float,
    "angular_span_rad": float,
    "det_nu": int,
    "det_nv": int,
    "det_pitch_u_mm": float,
    "det_pitch_v_mm": float,
    "det_offset_u_mm": float,
    "det_offset_v_mm": float,
    "vol_nx": int,
    "vol_ny": int,
    "vol_nz": int,
    "vox_x_mm": float,
    "vox_y_mm": float,
    "vox_z_mm": float,
    "vol_offset_x_mm": float,
    "vol_offset_y_mm": float,
    "vol_offset_z_mm": float,
}

_DEFAULTS = {
    "start_angle_rad": 0.0,
    "angular_span_rad": 2.0 * np.pi,
    "det_offset_u_mm": 0.0,
    "det_offset_v_mm": 0.0,
    "vol_offset_x_mm": 0.0,
    "vol_offset_y_mm": 0.0,
    "vol_offset_z_mm": 0.0,
}


def load_config(path) -> tuple[VolumeGeometry, TrajectoryGeometry]:
    """Parse a geometry config file; unknown keys are an error."""
    values = dict(_DEFAULTS)
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _CONFIG_KEYS[key](val)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {val!r}") from exc
    missing = sorted(k for k in _CONFIG_KEYS if k not in values)
    if missing:
        raise ConfigError(f"{path}: missing keys: {', '.join(missing)}")

    vol = VolumeGeometry(
        nx=values["vol_nx"],
        ny=values["vol_ny"],
        nz=values["vol_nz"],
        voxel_size=(values["vox_x_mm"], values["vox_y_mm"], values["vox_z_mm"]),
        center_offset=(
            values["vol_offset_x_mm"],
            values["vol_offset_y_mm"],
            values["vol_offset_z_mm"],
        ),
    )
    det = DetectorGeometry(
        nu=values["det_nu"],
        nv=values["det_nv"],
        pixel_size=(values["det_pitch_u_mm"], values["det_pitch_v_mm"]),
        principal_point_offset=(values["det_offset_u_mm"], values["det_offset_v_mm"]),
    )
    traj = make_circular_trajectory(
        sid=values["sid_mm"],
        sdd=values["sdd_mm"],
        n_views=values["n_views"],
        start_angle=values["start_angle_rad"],
        angular_span=values["angular_span_rad"],
        detector=det,
    )
    return vol, traj


def save_config(path, vol: VolumeGeometry, traj: TrajectoryGeometry) -> None:
    det = traj.detector
    pairs = [
        ("sid_mm", traj.sid),
        ("sdd_mm", traj.sdd),
        ("n_views", traj.n_views),
        ("start_angle_rad", traj.start_angle),
        ("angular_span_rad", traj.angular_span),
        ("det_nu", det.nu),
        ("det_nv", det.nv),
        ("det_pitch_u_mm", det.pixel_size[0]),
        ("det_pitch_v_mm", det.pixel_size[1]),
        ("det_offset_u_mm", det.principal_point_offset[0]),
        ("det_offset_v_mm", det.principal_point_offset[1]),
        ("vol_nx", vol.nx),
        ("vol_ny", vol.ny),
        ("vol_nz", vol.nz),
        ("vox_x_mm", vol.voxel_size[0]),
        ("vox_y_mm", vol.voxel_size[1]),
        ("vox_z_mm", vol.voxel_size[2]),
        ("vol_offset_x_mm", vol.center_offset[0]),
        ("vol_offset_y_mm", vol.center_offset[1]),
        ("vol_offset_z_mm", vol.center_offset[2]),
    ]
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in pairs:
            fh.write(f"{key} = {value!r}\n")


def shifted(vol: VolumeGeometry, offset_mm) -> VolumeGeometry:
    """Copy of a volume geometry with center_offset displaced by offset_mm."""
    new = tuple(vol.center_offset[a] + float(offset_mm[a]) for a in range(3))
    return replace(vol, center_offset=new)
