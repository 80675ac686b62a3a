"""Iterative reconstruction: CGLS (delayed residual update), LSQR, SIRT,
PSIRT, plus Jacobi split preconditioning and Tikhonov augmentation.

Solver orchestration is single-threaded; all parallelism lives inside the
operator applications.  Solvers only touch the operator through its
``project``/``backproject`` methods (and ``normal_diagonal`` for Jacobi),
so instrumented wrappers can be substituted freely.

History convention: for the Krylov solvers, record ``j`` holds the
iterated relative discrepancy after ``j + 1`` solution updates (record 0
is the pre-loop update of the delayed-residual scheme), so CGLS and LSQR
histories are comparable index by index.  For SIRT/PSIRT record 0 is the
initial discrepancy and record ``j`` follows update ``j``.  In all cases
a run capped at K iterations yields K + 1 records.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .operator import ProjectionStack
from .phantom import Volume

__all__ = [
    "SolverConfigError",
    "DegenerateOperatorError",
    "SolverConfig",
    "ConvergenceRecord",
    "SolverReport",
    "cgls",
    "lsqr",
    "sirt",
    "psirt",
    "solve",
    "write_history_csv",
    "KRYLOV_METHODS",
    "CLASSICAL_METHODS",
]

KRYLOV_METHODS = ("cgls", "lsqr")
CLASSICAL_METHODS = ("sirt", "psirt")


class SolverConfigError(ValueError):
    """Invalid solver configuration."""


class DegenerateOperatorError(RuntimeError):
    """The operator never touches the volume (all-zero row or column sums)."""


@dataclass
class SolverConfig:
    method: str = "cgls"
    max_iterations: int = 40
    rel_discrepancy_tol: float = 0.0  # 0 disables the tolerance stop
    initial_x0: Volume | None = None
    tikhonov_lambda: float = 0.0
    jacobi_precondition: bool = False
    jacobi_floor: float = 1e-6  # fraction of the max normal-equation diagonal
    box_bounds: tuple[float, float] | None = None
    relaxation: float = 1.0
    true_discrepancy_every: int = 0  # 0 = never recompute the true residual

    def validate(self) -> None:
        if self.method not in KRYLOV_METHODS + CLASSICAL_METHODS:
            raise SolverConfigError(f"unknown method {self.method!r}")
        if self.max_iterations < 1:
            raise SolverConfigError("max_iterations must be >= 1")
        if not 0.0 <= self.rel_discrepancy_tol <= 1.0:
            raise SolverConfigError("rel_discrepancy_tol must lie in [0, 1]")
        if self.tikhonov_lambda < 0:
            raise SolverConfigError("tikhonov_lambda must be >= 0")
        if self.jacobi_floor <= 0:
            raise SolverConfigError("jacobi_floor must be > 0")
        if self.relaxation <= 0:
            raise SolverConfigError("relaxation must be > 0")
        if self.true_discrepancy_every < 0:
            raise SolverConfigError("true_discrepancy_every must be >= 0")
        if self.box_bounds is not None:
            lo, hi = self.box_bounds
            if lo > hi:
                raise SolverConfigError("box_bounds must satisfy lo <= hi")
            if self.method in KRYLOV_METHODS:
                raise SolverConfigError(
                    "box constraints are incompatible with Krylov methods "
                    "(the clamped iterate leaves the Krylov subspace)"
                )
        if self.method in CLASSICAL_METHODS:
            if self.tikhonov_lambda != 0.0:
                raise SolverConfigError("tikhonov_lambda applies to cgls/lsqr only")
            if self.jacobi_precondition:
                raise SolverConfigError("jacobi_precondition applies to cgls/lsqr only")


@dataclass
class ConvergenceRecord:
    iteration: int
    wall_seconds: float
    rel_discrepancy: float
    true_rel_discrepancy: float | None = None


@dataclass
class SolverReport:
    final_x: Volume
    iterations: int
    final_discrepancy_norm: float
    history: list[ConvergenceRecord]
    worker_count: int
    breakdown: bool = False


def _alloc(size: int) -> np.ndarray:
    """Allocation funnel for the solver work vectors (auditable in tests)."""
    return np.zeros(size, dtype=np.float64)


class _Chain:
    """Flat-array view of the (possibly wrapped) operator.

    apply/applyT write into caller-provided buffers; x_of maps the working
    unknown back to attenuation space; report_norm extracts the norm of
    the original-data block of a residual vector.
    """

    def __init__(self, op):
        self.op = op
        self.n = op.n
        self.m = op.m
        self.m_orig = op.m

    def apply(self, x, out):
        vol = Volume(self.op.vol_geom, x)
        return self.op.project(vol, out=out).data

    def applyT(self, y, out):
        stack = ProjectionStack(self.op.trajectory, y)
        return self.op.backproject(stack, out=out).data

    def z_of(self, x0: np.ndarray) -> np.ndarray:
        return x0

    def x_of(self, z: np.ndarray) -> np.ndarray:
        return z

    def rhs(self, b: np.ndarray) -> np.ndarray:
        return b

    def report_norm(self, e_b: np.ndarray) -> float:
        return float(np.linalg.norm(e_b[: self.m_orig]))


class _JacobiChain(_Chain):
    """Split Jacobi preconditioning: solve min ||b - A D^-1/2 z||, x = D^-1/2 z,
    with the diagonal floored at jacobi_floor * max(diag)."""

    def __init__(self, inner: _Chain, diag: np.ndarray, floor_frac: float):
        self.inner = inner
        self.n = inner.n
        self.m = inner.m
        self.m_orig = inner.m_orig
        dmax = float(diag.max())
        if dmax <= 0:
            raise DegenerateOperatorError("normal-equation diagonal is identically zero")
        floored = np.maximum(diag, floor_frac * dmax)
        self.scale = 1.0 / np.sqrt(floored)
        self._tmp = np.empty(self.n, dtype=np.float64)

    def apply(self, z, out):
        np.multiply(z, self.scale, out=self._tmp)
        return self.inner.apply(self._tmp, out)

    def applyT(self, y, out):
        self.inner.applyT(y, out)
        out *= self.scale
        return out

    def z_of(self, x0):
        return x0 / self.scale

    def x_of(self, z):
        return z * self.scale

    def rhs(self, b):
        return self.inner.rhs(b)

    def report_norm(self, e_b):
        return self.inner.report_norm(e_b)


class _TikhonovChain(_Chain):
    """Stacked operator [A; lambda I] with stacked data [b; 0]."""

    def __init__(self, inner: _Chain, lam: float):
        self.inner = inner
        self.lam = float(lam)
        self.n = inner.n
        self.m = inner.m + inner.n
        self.m_orig = inner.m_orig
        self._tmpT = np.empty(self.n, dtype=np.float64)

    def apply(self, x, out):
        self.inner.apply(x, out[: self.inner.m])
        np.multiply(x, self.lam, out=out[self.inner.m :])
        return out

    def applyT(self, y, out):
        self.inner.applyT(y[: self.inner.m], out)
        np.multiply(y[self.inner.m :], self.lam, out=self._tmpT)
        out += self._tmpT
        return out

    def z_of(self, x0):
        return self.inner.z_of(x0)

    def x_of(self, z):
        return self.inner.x_of(z)

    def rhs(self, b):
        stacked = np.zeros(self.m, dtype=np.float64)
        stacked[: self.inner.m] = self.inner.rhs(b)
        return stacked

    def report_norm(self, e_b):
        return self.inner.report_norm(e_b)


def _build_chain(op, cfg: SolverConfig) -> _Chain:
    chain = _Chain(op)
    if cfg.jacobi_precondition:
        diag = op.normal_diagonal().data
        chain = _JacobiChain(chain, diag, cfg.jacobi_floor)
    if cfg.tikhonov_lambda > 0.0:
        chain = _TikhonovChain(chain, cfg.tikhonov_lambda)
    return chain


def _check_inputs(op, b: ProjectionStack, cfg: SolverConfig, method: str) -> None:
    cfg.validate()
    if cfg.method != method:
        raise SolverConfigError(f"cfg.method is {cfg.method!r}, expected {method!r}")
    if b.trajectory != op.trajectory:
        raise SolverConfigError("projection data does not match the operator trajectory")
    if cfg.initial_x0 is not None and cfg.initial_x0.geometry != op.vol_geom:
        raise SolverConfigError("initial_x0 geometry does not match the operator")


def _x0_flat(op, cfg: SolverConfig) -> np.ndarray:
    if cfg.initial_x0 is None:
        return np.zeros(op.n, dtype=np.float64)
    return cfg.initial_x0.data.copy()


def _true_rel(op, x_flat: np.ndarray, b: ProjectionStack, nb0: float) -> float:
    resid = b.data - op.project(Volume(op.vol_geom, x_flat)).data
    return float(np.linalg.norm(resid)) / nb0 if nb0 > 0 else 0.0


def _want_true(cfg: SolverConfig, iteration: int) -> bool:
    k = cfg.true_discrepancy_every
    return k > 0 and iteration % k == 0


def cgls(op, b: ProjectionStack, cfg: SolverConfig) -> SolverReport:
    """CGLS on the normal equations with delayed residual computation.

    The residual/direction refresh happens at the *start* of each loop
    iteration, so a run of K loop iterations costs exactly K + 2 forward
    projections and K + 1 backprojections (the pre-loop phase performs
    the first solution update).  Breakdown (zero residual or null search
    direction) returns the current iterate immediately.
    """
    _check_inputs(op, b, cfg, "cgls")
    chain = _build_chain(op, cfg)
    n, m = chain.n, chain.m
    t0 = time.perf_counter()

    x = _alloc(n)
    x[:] = chain.z_of(_x0_flat(op, cfg))
    d_x = _alloc(n)
    r_x = _alloc(n)
    e_b = _alloc(m)
    p_b = _alloc(m)
    b_eff = chain.rhs(b.data)

    nb0 = float(np.linalg.norm(b.data))
    history: list[ConvergenceRecord] = []

    def rel(norm_val: float) -> float:
        return norm_val / nb0 if nb0 > 0 else 0.0

    def record(iteration: int, include_true: bool) -> None:
        e = rel(chain.report_norm(e_b))
        true_e = None
        if include_true and _want_true(cfg, iteration):
            true_e = _true_rel(op, chain.x_of(x), b, nb0)
        history.append(
            ConvergenceRecord(iteration, time.perf_counter() - t0, e, true_e)
        )

    def finish(i: int, breakdown: bool) -> SolverReport:
        return SolverReport(
            final_x=Volume(op.vol_geom, chain.x_of(x)),
            iterations=i,
            final_discrepancy_norm=chain.report_norm(e_b),
            history=history,
            worker_count=getattr(op, "workers", 1),
            breakdown=breakdown,
        )

    # pre-loop phase: first update folded in, residual refresh deferred
    chain.apply(x, out=p_b)
    np.subtract(b_eff, p_b, out=e_b)
    chain.applyT(e_b, out=r_x)
    nr2_old = float(r_x @ r_x)
    if nr2_old == 0.0:
        record(0, include_true=True)
        return finish(0, breakdown=True)
    d_x[:] = r_x
    chain.apply(d_x, out=p_b)
    np2 = float(p_b @ p_b)
    if np2 == 0.0:
        # e_b still holds b - A x0; nothing was updated
        record(0, include_true=True)
        return finish(0, breakdown=True)
    alpha = nr2_old / np2
    x += alpha * d_x
    e_b -= alpha * p_b
    nb = float(np.linalg.norm(e_b))
    record(0, include_true=True)

    i = 0
    err = cfg.rel_discrepancy_tol
    while rel(nb) > err and i < cfg.max_iterations:
        chain.applyT(e_b, out=r_x)
        nr2_now = float(r_x @ r_x)
        if nr2_now == 0.0:
            return finish(i, breakdown=True)
        beta = nr2_now / nr2_old
        d_x *= beta
        d_x += r_x
        nr2_old = nr2_now
        chain.apply(d_x, out=p_b)
        np2 = float(p_b @ p_b)
        if np2 == 0.0:
            return finish(i, breakdown=True)
        alpha = nr2_old / np2
        x += alpha * d_x
        e_b -= alpha * p_b
        nb = float(np.linalg.norm(e_b))
        i += 1
        record(i, include_true=True)
    return finish(i, breakdown=False)


def lsqr(op, b: ProjectionStack, cfg: SolverConfig) -> SolverReport:
    """LSQR (Golub-Kahan bidiagonalization, Paige-Saunders recurrences).

    Supports an initial guess through the shifted system A(x0 + delta) = b.
    History records are aligned with cgls: record j holds the iterated
    relative discrepancy after j + 1 solution updates.
    """
    _check_inputs(op, b, cfg, "lsqr")
    chain = _build_chain(op, cfg)
    n, m = chain.n, chain.m
    t0 = time.perf_counter()

    z0 = chain.z_of(_x0_flat(op, cfg))
    x = z0.copy()
    b_eff = chain.rhs(b.data)
    nb0 = float(np.linalg.norm(b.data))

    history: list[ConvergenceRecord] = []

    def rel(val: float) -> float:
        return val / nb0 if nb0 > 0 else 0.0

    def record(iteration: int, e: float) -> None:
        true_e = None
        if _want_true(cfg, iteration):
            true_e = _true_rel(op, chain.x_of(x), b, nb0)
        history.append(
            ConvergenceRecord(iteration, time.perf_counter() - t0, e, true_e)
        )

    def finish(i: int, phibar: float, breakdown: bool) -> SolverReport:
        return SolverReport(
            final_x=Volume(op.vol_geom, chain.x_of(x)),
            iterations=i,
            final_discrepancy_norm=phibar,
            history=history,
            worker_count=getattr(op, "workers", 1),
            breakdown=breakdown,
        )

    u = np.empty(m, dtype=np.float64)
    chain.apply(x, out=u)
    np.subtract(b_eff, u, out=u)
    beta = float(np.linalg.norm(u))
    if beta == 0.0:
        record(0, 0.0)
        return finish(0, 0.0, breakdown=True)
    u /= beta
    v = np.empty(n, dtype=np.float64)
    chain.applyT(u, out=v)
    alpha = float(np.linalg.norm(v))
    if alpha == 0.0:
        record(0, rel(beta))
        return finish(0, beta, breakdown=True)
    v /= alpha
    w = v.copy()
    phibar = beta
    rhobar = alpha

    tmp_m = np.empty(m, dtype=np.float64)
    tmp_n = np.empty(n, dtype=np.float64)

    err = cfg.rel_discrepancy_tol
    updates = 0
    breakdown = False
    # K loop iterations on top of the record-0 update, as in cgls
    while updates < cfg.max_iterations + 1:
        # bidiagonalization step
        chain.apply(v, out=tmp_m)
        u *= -alpha
        u += tmp_m
        beta = float(np.linalg.norm(u))
        if beta > 0.0:
            u /= beta
            chain.applyT(u, out=tmp_n)
            v *= -beta
            v += tmp_n
            alpha = float(np.linalg.norm(v))
            if alpha > 0.0:
                v /= alpha
        # orthogonal transformation
        rho = np.hypot(rhobar, beta)
        c = rhobar / rho
        s = beta / rho
        theta = s * alpha
        rhobar = -c * alpha
        phi = c * phibar
        phibar = s * phibar
        x += (phi / rho) * w
        w *= -(theta / rho)
        w += v
        record(updates, rel(phibar))
        updates += 1
        if beta == 0.0 or alpha == 0.0:
            breakdown = True
            break
        if err > 0.0 and rel(phibar) <= err:
            break
    return finish(len(history) - 1, phibar, breakdown)


def normal_spectral_radius(op, power_iterations: int = 10):
    """Estimate the largest eigenvalue of A^T R^-1 A by power iteration.

    R is the diagonal of row sums (zero rows contribute nothing).  The
    iteration starts from the all-ones volume and is fully deterministic,
    so repeated calls on the same operator give the same value.  Returns
    the final Rayleigh quotient, which approaches the true eigenvalue
    from below.
    """
    if power_iterations < 1:
        raise ValueError("power_iterations must be >= 1")
    row = op.row_sums().data
    inv_row = np.where(row > 0, 1.0 / np.where(row > 0, row, 1.0), 0.0)
    proj = np.empty(op.m, dtype=np.float64)
    w = np.empty(op.n, dtype=np.float64)
    v = np.ones(op.n, dtype=np.float64)
    for _ in range(power_iterations):
        op.project(Volume(op.vol_geom, v), out=proj)
        proj *= inv_row
        op.backproject(ProjectionStack(op.trajectory, proj), out=w)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            raise DegenerateOperatorError("operator never intersects the volume")
        v = w / norm
    op.project(Volume(op.vol_geom, v), out=proj)
    proj *= inv_row
    op.backproject(ProjectionStack(op.trajectory, proj), out=w)
    return float(v @ w)


# PSIRT step = 2 * relaxation / (safety * rho_estimate).  The optimal
# scalar for the preconditioned Richardson iteration is just below
# 2 / rho; the safety margin keeps the step inside the convergence bound
# even though the power-iteration estimate approaches rho from below.
_PSIRT_SPECTRAL_SAFETY = 1.05


def psirt_step_scale(op, relaxation: float = 1.0) -> float:
    """The scalar step used by psirt for the given operator."""
    rho = normal_spectral_radius(op)
    return 2.0 * relaxation / (_PSIRT_SPECTRAL_SAFETY * rho)


def _classical(op, b: ProjectionStack, cfg: SolverConfig, method: str) -> SolverReport:
    _check_inputs(op, b, cfg, method)
    t0 = time.perf_counter()
    n = op.n

    row = op.row_sums().data
    col = op.col_sums().data
    if not np.any(row > 0) or not np.any(col > 0):
        raise DegenerateOperatorError("operator never intersects the volume")
    inv_row = np.where(row > 0, 1.0 / np.where(row > 0, row, 1.0), 0.0)
    if method == "sirt":
        step = cfg.relaxation * np.where(col > 0, 1.0 / np.where(col > 0, col, 1.0), 0.0)
    else:
        # PSIRT: single near-optimal scalar from a spectral estimate; no
        # voxel-sized scaling vector is kept during the iteration
        step = psirt_step_scale(op, cfg.relaxation)
    del col

    x = _x0_flat(op, cfg)
    nb0 = float(np.linalg.norm(b.data))
    lo, hi = cfg.box_bounds if cfg.box_bounds is not None else (None, None)

    history: list[ConvergenceRecord] = []

    def rel(val: float) -> float:
        return val / nb0 if nb0 > 0 else 0.0

    def record(iteration: int, e: float) -> None:
        true_e = e if _want_true(cfg, iteration) else None
        history.append(
            ConvergenceRecord(iteration, time.perf_counter() - t0, e, true_e)
        )

    resid = np.empty(op.m, dtype=np.float64)
    weighted = np.empty(op.m, dtype=np.float64)
    upd = np.empty(n, dtype=np.float64)

    op.project(Volume(op.vol_geom, x), out=resid)
    np.subtract(b.data, resid, out=resid)
    e = rel(float(np.linalg.norm(resid)))
    record(0, e)

    err = cfg.rel_discrepancy_tol
    i = 0
    while (err == 0.0 or e > err) and i < cfg.max_iterations:
        np.multiply(resid, inv_row, out=weighted)
        op.backproject(ProjectionStack(op.trajectory, weighted), out=upd)
        x += step * upd
        if lo is not None:
            np.clip(x, lo, hi, out=x)
        op.project(Volume(op.vol_geom, x), out=resid)
        np.subtract(b.data, resid, out=resid)
        e = rel(float(np.linalg.norm(resid)))
        i += 1
        record(i, e)
        if err > 0.0 and e <= err:
            break
    return SolverReport(
        final_x=Volume(op.vol_geom, x),
        iterations=i,
        final_discrepancy_norm=e * nb0,
        history=history,
        worker_count=getattr(op, "workers", 1),
        breakdown=False,
    )


def sirt(op, b: ProjectionStack, cfg: SolverConfig) -> SolverReport:
    """SIRT: x += relaxation * C^-1 A^T R^-1 (b - A x), optionally clamped.

    R and C are the diagonal row/column sums of A; zero rows and columns
    contribute nothing (their reciprocals are zeroed).
    """
    return _classical(op, b, cfg, "sirt")


def psirt(op, b: ProjectionStack, cfg: SolverConfig) -> SolverReport:
    """PSIRT: like sirt but with the column scaling collapsed to a single
    scalar, so no voxel-sized scaling vector is stored during the
    iteration.  The scalar is chosen near the optimum 2 / rho(A^T R^-1 A)
    (see psirt_step_scale), which converges faster than the per-voxel
    column scaling of sirt."""
    return _classical(op, b, cfg, "psirt")


_SOLVERS = {"cgls": cgls, "lsqr": lsqr, "sirt": sirt, "psirt": psirt}


def solve(op, b: ProjectionStack, cfg: SolverConfig) -> SolverReport:
    """Dispatch to the solver named by cfg.method."""
    cfg.validate()
    return _SOLVERS[cfg.method](op, b, cfg)


def write_history_csv(history, path) -> None:
    """Convergence history CSV: iter,seconds,rel_discrepancy,true_rel_discrepancy
    (empty when not computed), '.' decimal separator, LF line endings."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "seconds", "rel_discrepancy", "true_rel_discrepancy"])
        for rec in history:
            true_field = "" if rec.true_rel_discrepancy is None else repr(rec.true_rel_discrepancy)
            writer.writerow(
                [rec.iteration, f"{rec.wall_seconds:.6f}", repr(rec.rel_discrepancy), true_field]
            )
