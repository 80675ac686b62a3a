"""Independent dense reference for the matrix-free operator.

Implements Siddon's method the classical way (sorted union of all plane
crossing parameters, midpoint voxel lookup) in plain numpy, deliberately
sharing no code with the package's incremental traversal kernels, and
assembles the system matrix row by row.
"""

import numpy as np

from cbctkit.geometry import detector_pixel_center, source_position


def ray_weights(src, dst, lo, pitch, counts):
    """Return (voxel linear indices, intersection lengths) for one ray."""
    src = np.asarray(src, dtype=np.float64)
    d = np.asarray(dst, dtype=np.float64) - src
    tmin, tmax = 0.0, 1.0
    for a in range(3):
        hi = lo[a] + counts[a] * pitch[a]
        if abs(d[a]) < 1e-12 * pitch[a]:
            if src[a] < lo[a] or src[a] >= hi:
                return np.empty(0, dtype=np.int64), np.empty(0)
        else:
            t1 = (lo[a] - src[a]) / d[a]
            t2 = (hi - src[a]) / d[a]
            tmin = max(tmin, min(t1, t2))
            tmax = min(tmax, max(t1, t2))
    if tmax <= tmin:
        return np.empty(0, dtype=np.int64), np.empty(0)
    alphas = [np.array([tmin, tmax])]
    for a in range(3):
        if abs(d[a]) >= 1e-12 * pitch[a]:
            planes = lo[a] + pitch[a] * np.arange(counts[a] + 1)
            t = (planes - src[a]) / d[a]
            alphas.append(t[(t > tmin) & (t < tmax)])
    alphas = np.unique(np.concatenate(alphas))
    lengths = np.diff(alphas) * np.linalg.norm(d)
    mids = src[None, :] + 0.5 * (alphas[:-1] + alphas[1:])[:, None] * d[None, :]
    idx3 = np.floor((mids - np.asarray(lo)) / np.asarray(pitch)).astype(np.int64)
    np.clip(idx3, 0, np.asarray(counts) - 1, out=idx3)
    lin = idx3[:, 0] + counts[0] * (idx3[:, 1] + counts[1] * idx3[:, 2])
    keep = lengths > 1e-12
    return lin[keep], lengths[keep]


def assemble_matrix(vol_geom, traj):
    """Dense system matrix, row layout u-fastest, then v, then view."""
    lo = vol_geom.corner()
    pitch = vol_geom.voxel_size
    counts = (vol_geom.nx, vol_geom.ny, vol_geom.nz)
    det = traj.detector
    A = np.zeros((traj.n_rays, vol_geom.n_voxels))
    row = 0
    for view in range(traj.n_views):
        src = source_position(traj, view)
        for v in range(det.nv):
            for u in range(det.nu):
                dst = detector_pixel_center(traj, view, u, v)
                lin, lengths = ray_weights(src, dst, lo, pitch, counts)
                np.add.at(A[row], lin, lengths)
                row += 1
    return A
