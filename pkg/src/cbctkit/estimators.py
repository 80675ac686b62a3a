"""Scikit-learn style reconstructor estimators.

Each reconstructor wraps one iterative solver: construct it with an
operator and solver parameters, call ``fit(projections)``, and read the
result from ``volume_`` / ``report_``.  ``get_params`` / ``set_params``
come from sklearn's BaseEstimator, so the reconstructors compose with
model-selection utilities that clone estimators from their parameters.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .operator import CbctOperator, ProjectionStack
from .phantom import Volume
from .solvers import SolverConfig, solve

__all__ = [
    "CglsReconstructor",
    "LsqrReconstructor",
    "SirtReconstructor",
    "PsirtReconstructor",
]


class _BaseReconstructor(BaseEstimator):
    _method: str = ""

    def __init__(
        self,
        operator: CbctOperator | None = None,
        max_iterations: int = 40,
        rel_discrepancy_tol: float = 0.0,
        initial_x0: Volume | None = None,
        true_discrepancy_every: int = 0,
    ):
        self.operator = operator
        self.max_iterations = max_iterations
        self.rel_discrepancy_tol = rel_discrepancy_tol
        self.initial_x0 = initial_x0
        self.true_discrepancy_every = true_discrepancy_every

    def _config(self) -> SolverConfig:
        return SolverConfig(
            method=self._method,
            max_iterations=self.max_iterations,
            rel_discrepancy_tol=self.rel_discrepancy_tol,
            initial_x0=self.initial_x0,
            true_discrepancy_every=self.true_discrepancy_every,
        )

    def fit(self, X: ProjectionStack, y=None):
        """Run the solver on a projection stack; stores volume_ and report_."""
        if self.operator is None:
            raise ValueError("operator must be set before fit")
        cfg = self._config()
        self.report_ = solve(self.operator, X, cfg)
        self.volume_ = self.report_.final_x
        return self

    def transform(self, X: ProjectionStack) -> Volume:
        """Reconstruct a projection stack (stateless: runs the solver)."""
        return self.fit(X).volume_

    def fit_transform(self, X: ProjectionStack, y=None) -> Volume:
        return self.transform(X)

    @property
    def history_(self):
        if not hasattr(self, "report_"):
            raise NotFittedError("call fit before accessing history_")
        return self.report_.history


class CglsReconstructor(_BaseReconstructor):
    """CGLS with delayed residual computation."""

    _method = "cgls"

    def __init__(
        self,
        operator=None,
        max_iterations=40,
        rel_discrepancy_tol=0.0,
        initial_x0=None,
        true_discrepancy_every=0,
        tikhonov_lambda: float = 0.0,
        jacobi_precondition: bool = False,
        jacobi_floor: float = 1e-6,
    ):
        super().__init__(operator, max_iterations, rel_discrepancy_tol,
                         initial_x0, true_discrepancy_every)
        self.tikhonov_lambda = tikhonov_lambda
        self.jacobi_precondition = jacobi_precondition
        self.jacobi_floor = jacobi_floor

    def _config(self) -> SolverConfig:
        cfg = super()._config()
        cfg.tikhonov_lambda = self.tikhonov_lambda
        cfg.jacobi_precondition = self.jacobi_precondition
        cfg.jacobi_floor = self.jacobi_floor
        return cfg


class LsqrReconstructor(CglsReconstructor):
    """LSQR via Golub-Kahan bidiagonalization."""

    _method = "lsqr"


class _ClassicalReconstructor(_BaseReconstructor):
    def __init__(
        self,
        operator=None,
        max_iterations=40,
        rel_discrepancy_tol=0.0,
        initial_x0=None,
        true_discrepancy_every=0,
        relaxation: float = 1.0,
        box_bounds: tuple[float, float] | None = None,
    ):
        super().__init__(operator, max_iterations, rel_discrepancy_tol,
                         initial_x0, true_discrepancy_every)
        self.relaxation = relaxation
        self.box_bounds = box_bounds

    def _config(self) -> SolverConfig:
        cfg = super()._config()
        cfg.relaxation = self.relaxation
        cfg.box_bounds = self.box_bounds
        return cfg


class SirtReconstructor(_ClassicalReconstructor):
    """SIRT with per-voxel column scaling and optional box clamping."""

    _method = "sirt"


class PsirtReconstructor(_ClassicalReconstructor):
    """PSIRT: SIRT with the column scaling collapsed to one scalar."""

    _method = "psirt"
