"""Voxelized phantoms built from sums of constant-intensity ellipsoids."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .geometry import VolumeGeometry

__all__ = [
    "Ellipsoid",
    "Volume",
    "generate_phantom",
    "shepp_logan_3d",
    "load_ellipsoids",
    "parse_ellipsoid_table",
]


@dataclass(frozen=True)
class Ellipsoid:
    """One additive phantom component in the normalized cube [-1,1]^3.

    euler_angles follow the z-x-z intrinsic convention; a point p is
    inside iff || R (p - center) / semi_axes ||_2 <= 1.
    """

    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]
    euler_angles: tuple[float, float, float] = (0.0, 0.0, 0.0)
    intensity: float = 1.0

    def __post_init__(self):
        if min(self.semi_axes) <= 0:
            raise ValueError("semi_axes must all be > 0")

    def rotation(self) -> np.ndarray:
        """World-to-ellipsoid rotation matrix from the Euler angles."""
        phi, theta, psi = self.euler_angles
        return _rot_z(psi) @ _rot_x(theta) @ _rot_z(phi)


def _rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


@dataclass
class Volume:
    """Attenuation values on a voxel grid, x-fastest flat layout."""

    geometry: VolumeGeometry
    data: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.data is None:
            self.data = np.zeros(self.geometry.n_voxels, dtype=np.float64)
        else:
            self.data = np.ascontiguousarray(self.data, dtype=np.float64).ravel()
            if self.data.size != self.geometry.n_voxels:
                raise ValueError(
                    f"data length {self.data.size} != nx*ny*nz = {self.geometry.n_voxels}"
                )

    def as_3d(self) -> np.ndarray:
        """View shaped (nz, ny, nx) so data[k, j, i] is voxel (i, j, k)."""
        g = self.geometry
        return self.data.reshape(g.nz, g.ny, g.nx)


def _normalized_voxel_centers(geom: VolumeGeometry):
    """Per-axis voxel-center coordinates after mapping the volume bounding
    box onto the cube [-1,1]^3 (anisotropic voxels are honored)."""
    cx = (2.0 * np.arange(geom.nx) + 1.0 - geom.nx) / geom.nx
    cy = (2.0 * np.arange(geom.ny) + 1.0 - geom.ny) / geom.ny
    cz = (2.0 * np.arange(geom.nz) + 1.0 - geom.nz) / geom.nz
    return cx, cy, cz


def generate_phantom(ellipsoids, geom: VolumeGeometry) -> Volume:
    """Voxelize a sum of ellipsoids by point-sampling voxel centers.

    Each voxel value is the sum of intensities of all ellipsoids that
    contain the voxel center (no supersampling).
    """
    cx, cy, cz = _normalized_voxel_centers(geom)
    X = cx[None, None, :]
    Y = cy[None, :, None]
    Z = cz[:, None, None]
    out = np.zeros((geom.nz, geom.ny, geom.nx), dtype=np.float64)
    for e in ellipsoids:
        R = e.rotation()
        dx, dy, dz = X - e.center[0], Y - e.center[1], Z - e.center[2]
        px = (R[0, 0] * dx + R[0, 1] * dy + R[0, 2] * dz) / e.semi_axes[0]
        py = (R[1, 0] * dx + R[1, 1] * dy + R[1, 2] * dz) / e.semi_axes[1]
        pz = (R[2, 0] * dx + R[2, 1] * dy + R[2, 2] * dz) / e.semi_axes[2]
        inside = px * px + py * py + pz * pz <= 1.0
        out += np.where(inside, e.intensity, 0.0)
    return Volume(geometry=geom, data=out.ravel())


def parse_ellipsoid_table(text: str) -> list[Ellipsoid]:
    """Parse an ellipsoid table: one ellipsoid per line, 10 reals
    (cx cy cz a b c phi theta psi intensity), '#' comments allowed."""
    ellipsoids = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 10:
            raise ValueError(f"line {lineno}: expected 10 values, got {len(parts)}")
        vals = [float(p) for p in parts]
        ellipsoids.append(
            Ellipsoid(
                center=(vals[0], vals[1], vals[2]),
                semi_axes=(vals[3], vals[4], vals[5]),
                euler_angles=(vals[6], vals[7], vals[8]),
                intensity=vals[9],
            )
        )
    return ellipsoids


def load_ellipsoids(path) -> list[Ellipsoid]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_ellipsoid_table(fh.read())


def shepp_logan_3d() -> list[Ellipsoid]:
    """The built-in 10-ellipsoid 3D Shepp-Logan head phantom (modified
    low-contrast intensities; summed values lie in [0, 1])."""
    text = resources.files("cbctkit.data").joinpath("shepp_logan_3d.txt").read_text()
    return parse_ellipsoid_table(text)
