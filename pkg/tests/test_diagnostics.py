import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vortexblob.diagnostics import (SampledScalarField, hls_ratio, local_measure_distance,
                                    m2_seminorm, sampled_l1_distance, velocity_l1_distance,
                                    weak_dictionary, weak_l1_pairing)
from vortexblob.exceptions import (CoverageError, DegenerateRatioError, GridMismatchError,
                                   ParameterError)
from vortexblob.field import InitialVorticitySpec, VortexBlobField, discretize, l1_norm
from vortexblob.grid import UniformGrid

RANKINE = InitialVorticitySpec("rankine", {"omega0": 1.0, "radius": 1.0})


def ball_grid(h=1 / 512, radius=1.0):
    return UniformGrid.covering_ball((0, 0), radius, h)


def inverse_radius(p):
    return 1.0 / np.maximum(np.hypot(p[:, 0], p[:, 1]), 1e-12)


def test_m2_of_inverse_radius():
    u = SampledScalarField.from_function(ball_grid(), inverse_radius)
    assert m2_seminorm(u, 1.0) == pytest.approx(math.sqrt(math.pi), rel=0.03)


def test_m2_of_indicator_tends_to_sqrt_pi():
    u = SampledScalarField.from_function(ball_grid(), lambda p: np.ones(len(p)))
    rep = m2_seminorm(u, 1.0, return_report=True)
    assert rep.seminorm == pytest.approx(math.sqrt(math.pi), rel=0.01)
    assert rep.power == pytest.approx(rep.seminorm**2)


def test_m2_of_zero_is_zero():
    u = SampledScalarField(ball_grid(0.05), np.zeros(ball_grid(0.05).shape))
    assert m2_seminorm(u, 1.0) == 0.0


def test_m2_requires_coverage():
    u = SampledScalarField.from_function(ball_grid(0.05), inverse_radius)
    with pytest.raises(CoverageError):
        m2_seminorm(u, 2.0)
    with pytest.raises(ParameterError):
        m2_seminorm(u, 0.0)


@given(st.floats(-1e3, 1e3).filter(lambda c: abs(c) > 1e-3))
def test_m2_positively_homogeneous(c):
    u = SampledScalarField.from_function(ball_grid(1 / 64), inverse_radius)
    assert m2_seminorm(c * u, 1.0) == pytest.approx(abs(c) * m2_seminorm(u, 1.0), rel=1e-12)


@pytest.mark.parametrize("fn", [lambda p: np.exp(-p[:, 0] ** 2),
                                lambda p: 1 + p[:, 0] * p[:, 1],
                                lambda p: np.sin(3 * p[:, 0]) + 2])
def test_m2_below_l2_norm(fn):
    g = ball_grid(1 / 128)
    u = SampledScalarField.from_function(g, fn)
    mask = g.ball_mask(1.0)
    l2 = math.sqrt(np.sum(u.values.ravel()[mask] ** 2) * g.cell_area)
    assert m2_seminorm(u, 1.0) <= l2


def test_sampled_field_validates_shape():
    g = UniformGrid((0, 0), 0.1, (4, 5))
    with pytest.raises(ParameterError):
        SampledScalarField(g, np.zeros((5, 4)))
    with pytest.raises(ParameterError):
        SampledScalarField(g, np.full((4, 5), np.nan))
    assert SampledScalarField(g, np.zeros(20)).values.shape == (4, 5)


# -- hls ratio -----------------------------------------------------------------

def test_hls_ratio_point_vortex():
    f = VortexBlobField([[0.0, 0.0]], [1.0], 1e-3)
    ratio = hls_ratio(f, 1.0, spacing=1 / 256)
    assert ratio == pytest.approx(math.sqrt(math.pi) / (2 * math.pi), rel=0.05)


@given(st.floats(0.01, 100))
def test_hls_ratio_scale_invariant(c):
    f = discretize(RANKINE, 0.1, 16)
    a = hls_ratio(f, 1.5, spacing=0.05, method="direct")
    b = hls_ratio(f.scaled(c), 1.5, spacing=0.05, method="direct")
    assert b == pytest.approx(a, rel=1e-10)


def test_hls_ratio_two_patches_below_twice_single():
    one = discretize(RANKINE, 0.05, 64)
    pair = InitialVorticitySpec("patch_union", {"patches": [
        {"center": [-1.5, 0], "radius": 1.0, "strength": 1.0},
        {"center": [1.5, 0], "radius": 1.0, "strength": 1.0}]})
    two = discretize(pair, 0.05, 128)
    single = hls_ratio(one, 3.0, spacing=0.02)
    double = hls_ratio(two, 3.0, spacing=0.02)
    assert double <= 2 * single


def test_hls_ratio_zero_field_degenerate():
    with pytest.raises(DegenerateRatioError):
        hls_ratio(VortexBlobField([[0, 0]], [0.0], 0.1), 1.0)


# -- local convergence in measure ------------------------------------------------

def test_measure_distance_identical_is_zero():
    u = SampledScalarField.from_function(ball_grid(0.02), inverse_radius)
    assert local_measure_distance(u, u, 1e-9, 1.0) == 0.0


def test_measure_distance_constant_gap():
    g = ball_grid(0.01, 1.0)
    gamma = 0.1
    u = SampledScalarField(g, np.full(g.shape, 2 * gamma))
    z = SampledScalarField(g, np.zeros(g.shape))
    assert local_measure_distance(u, z, gamma, 1.0) == pytest.approx(math.pi,
                                                                     abs=2 * math.pi * 0.01)


def test_measure_distance_rejects_grid_mismatch():
    u = SampledScalarField(UniformGrid((0, 0), 0.1, (4, 4)), np.zeros((4, 4)))
    v = SampledScalarField(UniformGrid((0, 0), 0.2, (4, 4)), np.zeros((4, 4)))
    with pytest.raises(GridMismatchError):
        local_measure_distance(u, v, 0.1, 1.0)


def test_mollified_indicator_converges_in_measure():
    g = UniformGrid.covering_ball((0, 0), 1.5, 0.01)
    from vortexblob.field import eval_vorticity

    ind = SampledScalarField(g, RANKINE.evaluate(g.points))
    dists = []
    for eps in (0.08, 0.04, 0.02):
        f = discretize(RANKINE, eps, 100)
        dists.append(local_measure_distance(SampledScalarField(g, eval_vorticity(f, g.points)),
                                            ind, 0.25, 1.5))
    assert dists[0] > dists[1] > dists[2]
    # supported in an annulus of width ~ eps around the unit circle
    assert dists[-1] <= 4 * math.pi * 0.02


@given(st.integers(0, 10_000))
def test_measure_distance_triangle_bound(seed):
    rng = np.random.default_rng(seed)
    g = UniformGrid((-1, -1), 0.1, (20, 20))
    u, v, w = (SampledScalarField(g, rng.normal(size=(20, 20))) for _ in range(3))
    gamma = 0.4
    lhs = local_measure_distance(u, w, 2 * gamma, 1.0)
    assert lhs <= local_measure_distance(u, v, gamma, 1.0) + local_measure_distance(v, w, gamma, 1.0)


# -- pairings and L1 distances -------------------------------------------------

def test_pairing_with_one_is_total_circulation():
    f = VortexBlobField([[0, 0], [1, 2], [3, -1]], [0.5, -0.25, 2.0], 0.1)
    assert weak_l1_pairing(f, lambda x: np.ones(len(x))) == f.total_circulation


def test_pairing_with_smoothed_ball_indicator():
    f = discretize(RANKINE, 0.02, 256)

    def g(x):
        r = np.hypot(x[:, 0], x[:, 1])
        return np.clip((1.05 - r) / 0.1 + 0.5, 0.0, 1.0)

    assert weak_l1_pairing(f, g) == pytest.approx(math.pi, rel=0.02)


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_pairing_linear_and_bounded(a, b):
    rng = np.random.default_rng(0)
    pos = rng.normal(size=(30, 2))
    w1, w2 = rng.normal(size=30), rng.normal(size=30)
    f1, f2 = VortexBlobField(pos, w1, 0.1), VortexBlobField(pos, w2, 0.1)
    comb = VortexBlobField(pos, a * w1 + b * w2, 0.1)
    for _, g in weak_dictionary():
        lhs = weak_l1_pairing(comb, g)
        assert lhs == pytest.approx(a * weak_l1_pairing(f1, g) + b * weak_l1_pairing(f2, g),
                                    abs=1e-10)
        assert abs(lhs) <= l1_norm(comb) + 1e-12


def test_dictionary_has_sixteen_bounded_functions():
    d = weak_dictionary()
    assert len(d) == 16 and len({n for n, _ in d}) == 16
    x = np.random.default_rng(1).uniform(-6, 6, (2000, 2))
    for _, g in d:
        assert np.all(np.abs(g(x)) <= 1.0)


def test_velocity_l1_distance_of_identical_fields():
    f = discretize(RANKINE, 0.1, 16)
    assert velocity_l1_distance(f, f, 1.0, 0.05) == 0.0
    empty = VortexBlobField(np.zeros((0, 2)), [], 0.1)
    assert velocity_l1_distance(f, empty, 1.0, 0.05) > 0.0


def test_sampled_l1_distance():
    g = UniformGrid((0, 0), 0.5, (2, 2))
    a = SampledScalarField(g, [[1.0, 2.0], [0.0, 0.0]])
    b = SampledScalarField(g, np.zeros((2, 2)))
    assert sampled_l1_distance(a, b) == pytest.approx(0.75)
