"""Tests for motion, TDOA, clutter, and birth models."""

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from flowtrack.errors import SingularityError
from flowtrack.models import (BirthModel, CvMotionModel, LinearMeasurementModel,
                              MeasurementFrame, TdoaModel,
                              build_two_array_geometry)


def small_tdoa(**kwargs):
    receivers = np.array([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                          [0.0, 2.0, 0.0]])
    pairs = np.array([[0, 1], [0, 2]])
    defaults = dict(c=2.0, sigma_v=0.1, p_d=0.9, clutter_mean=1.0)
    defaults.update(kwargs)
    return TdoaModel(receivers=receivers, pairs=pairs, **defaults)


def default_tdoa():
    receivers, pairs = build_two_array_geometry([(250.0, 0.0, -10.0),
                                                 (0.0, 250.0, -10.0)])
    return TdoaModel(receivers=receivers, pairs=pairs)


# ---------------------------------------------------------------------------
# constant-velocity motion

def test_noise_free_prediction_moves_with_velocity():
    motion = CvMotionModel(dt=1.0, drive_var=0.0, survival_prob=1.0)
    rng = np.random.default_rng(0)
    x = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    np.testing.assert_array_equal(motion.predict(x, rng),
                                  [1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    x2 = np.array([0.0, 0.0, -100.0, 0.0, 2.0, 0.0])
    for _ in range(2):
        x2 = motion.predict(x2, rng)
    np.testing.assert_array_equal(x2, [0.0, 4.0, -100.0, 0.0, 2.0, 0.0])


def test_prediction_is_linear_in_the_state_without_noise():
    motion = CvMotionModel(dt=0.5, drive_var=0.0)
    rng = np.random.default_rng(0)
    a = np.array([1.0, 2.0, 1.5, -1.0])
    b = np.array([-2.0, 0.5, 0.0, 3.0])
    lhs = motion.predict(2.0 * a + 3.0 * b, rng)
    rhs = 2.0 * motion.predict(a, rng) + 3.0 * motion.predict(b, rng)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    np.testing.assert_allclose(motion.predict(a, rng),
                               motion.transition_matrix(4) @ a)


def test_noise_cov_matches_white_acceleration_blocks():
    motion = CvMotionModel(dt=2.0, drive_var=0.3)
    q = motion.noise_cov(4)
    dt = 2.0
    per_axis = 0.3 * np.array([[dt ** 4 / 4.0, dt ** 3 / 2.0],
                               [dt ** 3 / 2.0, dt ** 2]])
    for axis in range(2):
        block = q[np.ix_([axis, axis + 2], [axis, axis + 2])]
        np.testing.assert_allclose(block, per_axis)
    # cross-axis terms vanish
    assert q[0, 1] == 0.0 and q[0, 3] == 0.0


def test_sampled_noise_matches_noise_cov():
    motion = CvMotionModel(dt=1.0, drive_var=0.01)
    rng = np.random.default_rng(42)
    n = 100_000
    # the deterministic part of the map fixes the origin, so predictions
    # from zero states are pure noise draws
    noise = motion.predict(np.zeros((n, 6)), rng)
    emp = noise.T @ noise / n
    np.testing.assert_allclose(emp, motion.noise_cov(6), atol=3e-4)


def test_motion_model_validation():
    with pytest.raises(ValueError):
        CvMotionModel(dt=0.0)
    with pytest.raises(ValueError):
        CvMotionModel(drive_var=-1.0)
    with pytest.raises(ValueError):
        CvMotionModel(survival_prob=1.5)
    motion = CvMotionModel()
    with pytest.raises(ValueError):
        motion.predict(np.zeros(5), np.random.default_rng(0))


# ---------------------------------------------------------------------------
# TDOA measurement model

def test_equidistant_position_gives_zero_component():
    model = small_tdoa()
    x = np.array([0.0, 5.0, 1.0, 0.0, 0.0, 0.0])
    h = model.h(x)
    assert h[0] == pytest.approx(0.0, abs=1e-15)


def test_h_matches_direct_computation():
    model = small_tdoa()
    x = np.array([0.3, -0.7, 2.0, 1.0, 1.0, 1.0])
    pos = x[:3]
    expect = np.array([
        (np.linalg.norm(pos - model.receivers[0])
         - np.linalg.norm(pos - model.receivers[1])) / model.c,
        (np.linalg.norm(pos - model.receivers[0])
         - np.linalg.norm(pos - model.receivers[2])) / model.c,
    ])
    np.testing.assert_allclose(model.h(x), expect, rtol=1e-14)
    np.testing.assert_allclose(model.h_many(x[None])[0], expect, rtol=1e-14)


def test_components_respect_receiver_separation_bound():
    model = default_tdoa()
    rng = np.random.default_rng(5)
    states = rng.uniform([-500, -500, -500, -10, -10, -10],
                         [500, 500, 0, 10, 10, 10], size=(500, 6))
    h = model.h_many(states)
    assert np.all(np.abs(h) <= model.tdoa_bounds + 1e-15)


def test_jacobian_matches_finite_differences():
    model = default_tdoa()
    rng = np.random.default_rng(6)
    for _ in range(5):
        x = rng.uniform([-400, -400, -400, -5, -5, -5],
                        [400, 400, -50, 5, 5, 5])
        jac = model.jacobian(x)
        eps = 1e-4
        fd = np.empty_like(jac)
        for i in range(6):
            dx = np.zeros(6)
            dx[i] = eps
            fd[:, i] = (model.h(x + dx) - model.h(x - dx)) / (2.0 * eps)
        np.testing.assert_allclose(jac, fd, atol=1e-9)
    assert np.all(model.jacobian(x)[:, 3:] == 0.0)


def test_state_on_receiver_raises():
    model = small_tdoa()
    at_receiver = np.array([-1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    with pytest.raises(SingularityError):
        model.h(at_receiver)
    with pytest.raises(SingularityError):
        model.jacobian(at_receiver)


def test_loglik_matches_gaussian_density():
    model = small_tdoa()
    rng = np.random.default_rng(7)
    states = rng.normal(size=(20, 6)) * 3.0
    z = np.array([0.1, -0.2])
    expect = [multivariate_normal(model.h(x), model.noise_cov).logpdf(z)
              for x in states]
    np.testing.assert_allclose(model.loglik_many(z, states), expect, rtol=1e-10)


def test_clutter_density_normalizes_and_cuts_off():
    model = small_tdoa()
    b = model.tdoa_bounds
    volume = np.prod(2.0 * b)
    assert np.exp(model.clutter_log_density) * volume == pytest.approx(1.0, rel=1e-12)
    inside = np.array([b[0] * 0.5, -b[1] * 0.5])
    assert model.clutter_logpdf(inside) == pytest.approx(model.clutter_log_density)
    assert model.clutter_logpdf(np.array([b[0] * 1.01, 0.0])) == -np.inf
    # boundary values still count as support
    assert np.isfinite(model.clutter_logpdf(b.copy()))


def test_clutter_samples_are_uniform_on_the_support():
    model = small_tdoa()
    rng = np.random.default_rng(8)
    z = model.sample_clutter(rng, 20_000)
    b = model.tdoa_bounds
    assert np.all(np.abs(z) <= b)
    assert np.all(np.abs(z.mean(axis=0)) <= 0.02 * b)
    np.testing.assert_allclose(z.var(axis=0), b ** 2 / 3.0, rtol=0.05)


def test_tdoa_validation():
    receivers = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    with pytest.raises(ValueError):
        TdoaModel(receivers=receivers, pairs=np.array([[0, 0]]))
    with pytest.raises(ValueError):
        TdoaModel(receivers=receivers, pairs=np.array([[0, 2]]))
    with pytest.raises(ValueError):
        TdoaModel(receivers=receivers, pairs=np.array([[0, 1]]), sigma_v=0.0)
    with pytest.raises(ValueError):
        TdoaModel(receivers=receivers, pairs=np.array([[0, 1]]), p_d=1.2)


def test_two_array_geometry_layout():
    receivers, pairs = build_two_array_geometry([(250.0, 0.0, -10.0),
                                                 (0.0, 250.0, -10.0)])
    assert receivers.shape == (10, 3)
    assert pairs.shape == (12, 2)
    np.testing.assert_array_equal(receivers[0], [250.0, 0.0, -10.0])
    np.testing.assert_array_equal(receivers[5], [0.0, 250.0, -10.0])
    seps = np.linalg.norm(receivers[pairs[:, 0]] - receivers[pairs[:, 1]], axis=1)
    assert np.sum(np.isclose(seps, 10.0)) == 8
    assert np.sum(np.isclose(seps, 20.0)) == 4
    # pairs never straddle the two arrays
    assert np.all((pairs < 5).all(axis=1) | (pairs >= 5).all(axis=1))


# ---------------------------------------------------------------------------
# birth model

def test_birth_density_is_normalized_uniform():
    birth = BirthModel(mean_births=0.011,
                       position_box=np.array([[-500.0, 500.0],
                                              [-500.0, 500.0],
                                              [-500.0, 0.0]]),
                       velocity_box=np.array([[-10.0, 10.0]] * 3))
    widths = birth.state_box[:, 1] - birth.state_box[:, 0]
    assert np.exp(birth.log_density) * np.prod(widths) == pytest.approx(1.0)
    inside = np.array([0.0, 0.0, -250.0, 1.0, 1.0, 1.0])
    outside = np.array([0.0, 0.0, 250.0, 1.0, 1.0, 1.0])
    assert birth.logpdf(inside[None])[0] == pytest.approx(birth.log_density)
    assert birth.logpdf(outside[None])[0] == -np.inf
    assert birth.contains(np.vstack([inside, outside])).tolist() == [True, False]


def test_birth_samples_and_moments():
    birth = BirthModel(mean_births=1.0,
                       position_box=np.array([[0.0, 2.0]]),
                       velocity_box=np.array([[-1.0, 3.0]]))
    rng = np.random.default_rng(9)
    x = birth.sample(50_000, rng)
    assert x.shape == (50_000, 2)
    assert np.all(birth.contains(x))
    summary = birth.moment_gaussian()
    np.testing.assert_array_equal(summary.mean, [1.0, 1.0])
    np.testing.assert_allclose(np.diag(summary.cov),
                               [4.0 / 12.0, 16.0 / 12.0])
    np.testing.assert_allclose(x.mean(axis=0), summary.mean, atol=0.02)
    np.testing.assert_allclose(x.var(axis=0), np.diag(summary.cov), rtol=0.03)


def test_birth_model_validation():
    with pytest.raises(ValueError):
        BirthModel(mean_births=-0.1, position_box=np.array([[0.0, 1.0]]),
                   velocity_box=np.array([[0.0, 1.0]]))
    with pytest.raises(ValueError):
        BirthModel(mean_births=0.1, position_box=np.array([[1.0, 0.0]]),
                   velocity_box=np.array([[0.0, 1.0]]))


# ---------------------------------------------------------------------------
# linear measurement model and frames

def test_linear_model_surface():
    model = LinearMeasurementModel(H=[[1.0, 0.0], [1.0, 1.0]],
                                   R=np.diag([0.5, 2.0]),
                                   clutter_mean=0.5,
                                   clutter_box=np.array([[-4.0, 4.0],
                                                         [-4.0, 4.0]]))
    x = np.array([1.0, 2.0])
    np.testing.assert_allclose(model.h(x), [1.0, 3.0])
    np.testing.assert_allclose(model.h_many(x[None])[0], [1.0, 3.0])
    np.testing.assert_array_equal(model.jacobian(x), model.H)
    z = np.array([0.5, 1.0])
    expect = multivariate_normal(model.h(x), model.R).logpdf(z)
    np.testing.assert_allclose(model.loglik_many(z, x[None])[0], expect,
                               rtol=1e-12)
    assert model.clutter_logpdf(z) == pytest.approx(-np.log(64.0))
    assert model.clutter_logpdf(np.array([5.0, 0.0])) == -np.inf
    samples = model.sample_clutter(np.random.default_rng(0), 100)
    assert np.all(np.abs(samples) <= 4.0)


def test_measurement_frame_validation():
    frame = MeasurementFrame(k=3, z=np.zeros((2, 12)))
    assert frame.n_meas == 2
    empty = MeasurementFrame(k=1, z=np.zeros((0, 12)))
    assert empty.n_meas == 0
    with pytest.raises(ValueError):
        MeasurementFrame(k=1, z=np.zeros(12))
    with pytest.raises(ValueError):
        MeasurementFrame(k=-1, z=np.zeros((1, 12)))
