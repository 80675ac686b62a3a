import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cbctkit.estimators import (
    CglsReconstructor,
    LsqrReconstructor,
    PsirtReconstructor,
    SirtReconstructor,
)
from cbctkit.phantom import Volume
from cbctkit.solvers import SolverConfig, cgls

ALL = [CglsReconstructor, LsqrReconstructor, SirtReconstructor, PsirtReconstructor]


@pytest.fixture
def consistent(small_instance):
    rng = np.random.default_rng(11)
    x_true = Volume(small_instance.vol_geom, rng.random(small_instance.n))
    return x_true, small_instance.project(x_true)


@pytest.mark.parametrize("cls", ALL)
def test_get_set_params_round_trip(cls, small_instance):
    est = cls(operator=small_instance, max_iterations=9)
    params = est.get_params()
    assert params["max_iterations"] == 9
    assert params["operator"] is small_instance
    est.set_params(max_iterations=3)
    assert est.max_iterations == 3


@pytest.mark.parametrize("cls", ALL)
def test_clone_preserves_params(cls, small_instance):
    est = cls(operator=small_instance, max_iterations=4, rel_discrepancy_tol=0.1)
    twin = clone(est)
    ours = est.get_params()
    theirs = twin.get_params()
    # the operator param is deep-copied by clone; compare it by type
    assert type(theirs.pop("operator")) is type(ours.pop("operator"))
    assert theirs == ours


@pytest.mark.parametrize("cls", ALL)
def test_fit_sets_attributes(cls, small_instance, consistent):
    _, b = consistent
    est = cls(operator=small_instance, max_iterations=3)
    out = est.fit(b)
    assert out is est
    assert est.volume_ is est.report_.final_x
    assert est.report_.iterations == 3
    assert len(est.history_) >= 1


def test_fit_matches_direct_solver_call(small_instance, consistent):
    _, b = consistent
    est = CglsReconstructor(operator=small_instance, max_iterations=6)
    est.fit(b)
    report = cgls(small_instance, b, SolverConfig(method="cgls", max_iterations=6))
    np.testing.assert_array_equal(est.volume_.data, report.final_x.data)


def test_transform_returns_volume(small_instance, consistent):
    _, b = consistent
    vol = LsqrReconstructor(operator=small_instance, max_iterations=2).transform(b)
    assert isinstance(vol, Volume)
    assert vol.data.shape == (small_instance.n,)


def test_history_before_fit_raises(small_instance):
    est = CglsReconstructor(operator=small_instance)
    with pytest.raises(NotFittedError):
        est.history_


def test_fit_without_operator_raises(small_instance, consistent):
    _, b = consistent
    with pytest.raises(ValueError):
        CglsReconstructor().fit(b)


def test_box_bounds_forwarded(small_instance, consistent):
    _, b = consistent
    est = PsirtReconstructor(
        operator=small_instance, max_iterations=20, box_bounds=(0.0, 1.0)
    )
    est.fit(b)
    assert est.volume_.data.min() >= 0.0
    assert est.volume_.data.max() <= 1.0


def test_tikhonov_forwarded(small_instance, consistent):
    _, b = consistent
    plain = CglsReconstructor(operator=small_instance, max_iterations=30).fit(b)
    damped = CglsReconstructor(
        operator=small_instance, max_iterations=30, tikhonov_lambda=5.0
    ).fit(b)
    assert np.linalg.norm(damped.volume_.data) < np.linalg.norm(plain.volume_.data)
