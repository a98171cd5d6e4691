import math
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from vortexblob.exceptions import ParameterError
from vortexblob.field import InitialVorticitySpec, VortexBlobField, discretize, eval_vorticity, l1_norm
from vortexblob.velocity import VelocityEvaluator, velocity_direct, velocity_treecode


@pytest.fixture(scope="module")
def rankine_field():
    return discretize(InitialVorticitySpec("rankine", {"omega0": 1.0, "radius": 1.0}), 0.02, 256)


@pytest.fixture(scope="module")
def random_field():
    rng = np.random.default_rng(7)
    n = 10_000
    return VortexBlobField(rng.uniform(-1, 1, size=(n, 2)), rng.normal(size=n) / n, 0.01)


def test_point_vortex_velocity():
    f = VortexBlobField([[0.0, 0.0]], [2 * math.pi], 1e-3)
    for r in (0.5, 1.0, 3.0):
        np.testing.assert_allclose(velocity_direct(f, [[r, 0.0]])[0], [0.0, 1 / r], atol=1e-6)


@pytest.mark.parametrize("r, expected", [(0.5, 0.25), (2.0, 0.25), (0.8, 0.4)])
def test_rankine_speed(rankine_field, r, expected):
    ang = np.linspace(0, 2 * math.pi, 7)[:-1]
    pts = r * np.column_stack([np.cos(ang), np.sin(ang)])
    speed = np.linalg.norm(velocity_direct(rankine_field, pts), axis=1)
    np.testing.assert_allclose(speed, expected, rtol=0.01)


def test_zero_weights_give_zero_velocity():
    f = VortexBlobField(np.random.default_rng(0).normal(size=(50, 2)), np.zeros(50), 0.1)
    assert np.all(velocity_direct(f, np.ones((4, 2))) == 0.0)


def test_empty_field_and_empty_targets():
    empty = VortexBlobField(np.zeros((0, 2)), [], 0.1)
    assert velocity_direct(empty, [[1.0, 2.0]]).shape == (1, 2)
    f = VortexBlobField([[0, 0]], [1.0], 0.1)
    assert velocity_direct(f, np.zeros((0, 2))).shape == (0, 2)


def test_direct_sum_is_bitwise_reproducible(random_field):
    t = np.random.default_rng(1).uniform(-1, 1, size=(200, 2))
    assert np.array_equal(velocity_direct(random_field, t), velocity_direct(random_field, t))


@given(st.floats(-100, 100))
def test_velocity_linear_in_weights(c):
    rng = np.random.default_rng(3)
    f = VortexBlobField(rng.normal(size=(30, 2)), rng.normal(size=30), 0.2)
    t = rng.normal(size=(10, 2))
    np.testing.assert_allclose(velocity_direct(f.scaled(c), t), c * velocity_direct(f, t),
                               rtol=1e-12, atol=1e-14 * (1 + abs(c)))


def test_far_field_divergence_free(rankine_field):
    rng = np.random.default_rng(5)
    ang = rng.uniform(0, 2 * math.pi, 40)
    rad = rng.uniform(1.2, 3.0, 40)
    x = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    h = 1e-4
    ev = VelocityEvaluator(method="direct").fit(rankine_field)
    dx = ev.predict(x + [h, 0]) - ev.predict(x - [h, 0])
    dy = ev.predict(x + [0, h]) - ev.predict(x - [0, h])
    div = (dx[:, 0] + dy[:, 1]) / (2 * h)
    scale = np.linalg.norm(ev.predict(x), axis=1) / rad
    assert np.all(np.abs(div) <= 1e-4 * scale)


def test_curl_recovers_vorticity():
    spec = InitialVorticitySpec("lamb_oseen", {"circulation": 1.0, "core": 0.3})
    f = discretize(spec, 0.02, 160)
    x = np.array([[0.0, 0.0], [0.2, 0.1], [-0.3, 0.25], [0.5, -0.4]])
    h = 1e-3
    ev = VelocityEvaluator(method="direct").fit(f)
    curl = ((ev.predict(x + [h, 0])[:, 1] - ev.predict(x - [h, 0])[:, 1])
            - (ev.predict(x + [0, h])[:, 0] - ev.predict(x - [0, h])[:, 0])) / (2 * h)
    ref = eval_vorticity(f, x)
    assert np.max(np.abs(curl - ref)) <= 0.02 * np.max(np.abs(ref))


# -- treecode ------------------------------------------------------------------

def test_treecode_accuracy_theta_03_order_8(random_field):
    t = np.random.default_rng(11).uniform(-1.2, 1.2, size=(2000, 2))
    ref = velocity_direct(random_field, t)
    got, rep = velocity_treecode(random_field, t, theta=0.3, order=8, return_report=True)
    rel = np.linalg.norm(got - ref) / np.linalg.norm(ref)
    assert rel <= 1e-6
    assert rep.relative_error_bound >= rel
    assert not rep.fell_back_to_direct


@pytest.mark.parametrize("theta, order", [(0.5, 4), (0.5, 8), (0.3, 4), (0.7, 10)])
def test_treecode_error_within_reported_bound(random_field, theta, order):
    t = np.random.default_rng(12).uniform(-1, 1, size=(500, 2))
    ref = velocity_direct(random_field, t)
    got, rep = velocity_treecode(random_field, t, theta=theta, order=order, return_report=True)
    assert np.linalg.norm(got - ref) / np.linalg.norm(ref) <= rep.relative_error_bound


def test_treecode_small_theta_matches_direct(random_field):
    t = np.random.default_rng(13).uniform(-1, 1, size=(100, 2))
    got = velocity_treecode(random_field, t, theta=1e-6, order=2)
    np.testing.assert_allclose(got, velocity_direct(random_field, t), rtol=1e-12, atol=1e-15)


def test_coincident_cloud_falls_back_to_direct():
    f = VortexBlobField(np.ones((20, 2)), np.ones(20), 0.1)
    got, rep = velocity_treecode(f, [[0.0, 0.0]], return_report=True)
    assert rep.fell_back_to_direct
    np.testing.assert_array_equal(got, velocity_direct(f, [[0.0, 0.0]]))


@pytest.mark.parametrize("kwargs", [{"theta": 0.0}, {"theta": 1.0}, {"order": -1},
                                    {"method": "fmm"}])
def test_evaluator_validates_parameters(kwargs):
    with pytest.raises(ParameterError):
        VelocityEvaluator(**kwargs).fit(VortexBlobField([[0, 0]], [1.0], 0.1))


def test_evaluator_is_a_clonable_estimator():
    ev = VelocityEvaluator(method="tree", theta=0.4)
    c = clone(ev)
    assert c.get_params() == ev.get_params()
    rng = np.random.default_rng(2)
    x, w = rng.normal(size=(40, 2)), rng.normal(size=40)
    got = c.fit(x, w, blob_scale=0.1).predict([[0.3, 0.3]])
    np.testing.assert_allclose(got, velocity_direct(VortexBlobField(x, w, 0.1), [[0.3, 0.3]]),
                               rtol=1e-4)


def test_treecode_faster_than_direct_at_scale():
    rng = np.random.default_rng(0)
    n = 40_000
    f = VortexBlobField(rng.uniform(-1, 1, (n, 2)), rng.normal(size=n) / n, 0.01)
    t = rng.uniform(-1, 1, (n, 2))
    velocity_treecode(f, t[:10])
    velocity_direct(f, t[:10])
    t0 = time.perf_counter()
    velocity_treecode(f, t, theta=0.3, order=8)
    tree = time.perf_counter() - t0
    t0 = time.perf_counter()
    velocity_direct(f, t)
    direct = time.perf_counter() - t0
    assert direct >= 3 * tree


def test_speed_bounded_by_mass_over_blob_scale(rankine_field):
    # |K_eps| <= C / eps pointwise, so |v| <= C ||omega||_1 / eps
    pts = np.random.default_rng(4).uniform(-2, 2, (300, 2))
    speed = np.linalg.norm(velocity_direct(rankine_field, pts), axis=1)
    assert speed.max() <= l1_norm(rankine_field) / (2 * math.pi * rankine_field.blob_scale)
