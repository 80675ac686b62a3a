"""Convergence metrics and comparison helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operator import ProjectionStack
from .phantom import Volume

__all__ = ["DiscrepancyMetric", "relative_discrepancy", "iterations_to_tolerance"]


@dataclass(frozen=True)
class DiscrepancyMetric:
    """Relative discrepancy ||A x - b|| / ||b|| with its two norms."""

    numerator: float
    denominator: float

    @property
    def value(self) -> float:
        return self.numerator / self.denominator


def relative_discrepancy(op, x: Volume, b: ProjectionStack) -> DiscrepancyMetric:
    """One forward projection; undefined (raises) for zero b."""
    denom = float(np.linalg.norm(b.data))
    if denom == 0.0:
        raise ValueError("relative discrepancy is undefined for zero projection data")
    resid = op.project(x).data - b.data
    return DiscrepancyMetric(numerator=float(np.linalg.norm(resid)), denominator=denom)


def iterations_to_tolerance(history, tol: float) -> int | None:
    """Smallest iteration index whose recorded discrepancy is <= tol."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    for rec in history:
        if rec.rel_discrepancy <= tol:
            return rec.iteration
    return None
