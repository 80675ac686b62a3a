import numpy as np
import pytest

from cbctkit.analysis import iterations_to_tolerance, relative_discrepancy
from cbctkit.operator import ProjectionStack
from cbctkit.phantom import Volume
from cbctkit.solvers import ConvergenceRecord


def test_exact_solution_gives_zero(small_instance):
    rng = np.random.default_rng(1)
    x = Volume(small_instance.vol_geom, rng.random(small_instance.n))
    b = small_instance.project(x)
    metric = relative_discrepancy(small_instance, x, b)
    assert metric.value == pytest.approx(0.0, abs=1e-14)


def test_zero_volume_gives_one(small_instance):
    rng = np.random.default_rng(2)
    b = ProjectionStack(small_instance.trajectory, rng.random(small_instance.m))
    metric = relative_discrepancy(small_instance, Volume(small_instance.vol_geom), b)
    assert metric.value == 1.0


def test_zero_b_rejected(small_instance):
    with pytest.raises(ValueError):
        relative_discrepancy(
            small_instance, Volume(small_instance.vol_geom),
            ProjectionStack(small_instance.trajectory),
        )


def test_scale_invariance(small_instance):
    rng = np.random.default_rng(3)
    x = Volume(small_instance.vol_geom, rng.random(small_instance.n))
    b = ProjectionStack(small_instance.trajectory, rng.random(small_instance.m))
    base = relative_discrepancy(small_instance, x, b).value
    for c in (0.25, 3.0, 1e6):
        xc = Volume(small_instance.vol_geom, c * x.data)
        bc = ProjectionStack(small_instance.trajectory, c * b.data)
        scaled = relative_discrepancy(small_instance, xc, bc).value
        assert scaled == pytest.approx(base, rel=1e-12)


def _history(values):
    return [ConvergenceRecord(i, 0.0, e) for i, e in enumerate(values)]


def test_iterations_to_tolerance_first_index():
    assert iterations_to_tolerance(_history([1.0, 0.5, 0.009]), 0.01) == 2


def test_iterations_to_tolerance_never_reached():
    assert iterations_to_tolerance(_history([1.0, 0.5, 0.2]), 0.01) is None


def test_iterations_to_tolerance_requires_positive_tol():
    with pytest.raises(ValueError):
        iterations_to_tolerance(_history([1.0]), 0.0)
