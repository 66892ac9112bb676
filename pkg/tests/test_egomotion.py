import math
from os import path
import shutil
import tempfile

import numpy as np
import pytest

from deerwatch.core import EgoPose, FormatError, wrap_angle
from deerwatch.egomotion import (
    CONSTANT_TURN_RATE, CONSTANT_VELOCITY, EXTERNAL, Delta, EgoMotionForecast,
    combine_deltas, compose_pose, normalize_forecast, predict_future,
    read_external_forecast, relative_delta, rollout, rotate_view,
    rotation_compensate, write_external_forecast)
from deerwatch.synth import CameraIntrinsics, make_suite


def test_constant_velocity():
    history = [EgoPose(0, 0, 0), EgoPose(1, 0, 0), EgoPose(2, 0, 0)]
    forecast = predict_future(history, 2)
    assert forecast.deltas == (Delta(1, 0, 0), Delta(1, 0, 0))


def test_constant_velocity_in_vehicle_frame():
    """Steps are expressed along the current heading."""
    yaw = math.pi / 2
    history = [EgoPose(0, 0, yaw), EgoPose(0, 2, yaw)]
    step = predict_future(history, 1).deltas[0]
    assert step.dx == pytest.approx(2)
    assert step.dy == pytest.approx(0, abs=1e-12)
    assert step.dyaw == 0


def test_needs_enough_history():
    with pytest.raises(ValueError):
        predict_future([EgoPose(0, 0, 0)], 5)
    with pytest.raises(ValueError):
        predict_future([EgoPose(0, 0, 0), EgoPose(1, 0, 0)], 5, CONSTANT_TURN_RATE)
    with pytest.raises(ValueError):
        predict_future([EgoPose(0, 0, 0), EgoPose(1, 0, 0)], 0)
    with pytest.raises(ValueError):
        predict_future([EgoPose(0, 0, 0), EgoPose(1, 0, 0)], 3, 'teleport')


def test_constant_turn_rate_follows_the_circle():
    r, w = 20.0, 0.02
    history = [EgoPose(r * math.sin(w * k), r * (1 - math.cos(w * k)), w * k)
               for k in range(3)]
    poses = rollout(history[-1], predict_future(history, 10, CONSTANT_TURN_RATE))
    for i, pose in enumerate(poses):
        k = 3 + i
        assert pose.x == pytest.approx(r * math.sin(w * k), abs=1e-9)
        assert pose.y == pytest.approx(r * (1 - math.cos(w * k)), abs=1e-9)
        assert pose.yaw == pytest.approx(w * k)


def test_constant_turn_rate_straight():
    history = [EgoPose(0.5 * k, 0, 0) for k in range(3)]
    forecast = predict_future(history, 4, CONSTANT_TURN_RATE)
    assert forecast.deltas == (Delta(0.5, 0.0, 0.0),) * 4


def test_compose_pose():
    pose = compose_pose(EgoPose(0, 0, 0), (1, 0, math.pi / 2))
    assert (pose.x, pose.y, pose.yaw) == (1, 0, pytest.approx(math.pi / 2))

    pose = compose_pose(EgoPose(1, 1, math.pi / 2), (2, 0, 0))
    assert pose.x == pytest.approx(1)
    assert pose.y == pytest.approx(3)


def test_relative_delta_inverts_compose():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = EgoPose(*rng.uniform(-10, 10, 2), rng.uniform(-3, 3))
        delta = Delta(*rng.uniform(-2, 2, 2), rng.uniform(-0.5, 0.5))
        back = relative_delta(a, compose_pose(a, delta))
        assert back.dx == pytest.approx(delta.dx)
        assert back.dy == pytest.approx(delta.dy)
        assert back.dyaw == pytest.approx(delta.dyaw)


def test_combine_deltas():
    a, b = Delta(1, 0.5, 0.3), Delta(2, -0.2, -0.1)
    pose = EgoPose(3, 4, 1.0)
    direct = compose_pose(pose, combine_deltas(a, b))
    stepwise = compose_pose(compose_pose(pose, a), b)
    assert direct.x == pytest.approx(stepwise.x)
    assert direct.y == pytest.approx(stepwise.y)
    assert direct.yaw == pytest.approx(stepwise.yaw)


def test_compose_is_associative():
    rng = np.random.default_rng(4)
    for _ in range(100):
        pose = EgoPose(*rng.uniform(-50, 50, 2), rng.uniform(-3, 3))
        a = Delta(*rng.uniform(-3, 3, 2), rng.uniform(-1, 1))
        b = Delta(*rng.uniform(-3, 3, 2), rng.uniform(-1, 1))
        direct = compose_pose(pose, combine_deltas(a, b))
        stepwise = compose_pose(compose_pose(pose, a), b)
        assert abs(direct.x - stepwise.x) < 1e-9
        assert abs(direct.y - stepwise.y) < 1e-9
        assert abs(wrap_angle(direct.yaw - stepwise.yaw)) < 1e-9


def _assert_predicts_odometry(scenario, kind, horizon=30):
    for t0 in (10, 45, 80):
        history = [scenario.pose(k) for k in range(t0 - 4, t0 + 1)]
        poses = rollout(history[-1], predict_future(history, horizon, kind))
        for i, pose in enumerate(poses, 1):
            truth = scenario.pose(t0 + i)
            assert abs(pose.x - truth.x) < 1e-9
            assert abs(pose.y - truth.y) < 1e-9
            assert abs(wrap_angle(pose.yaw - truth.yaw)) < 1e-9


def test_predictors_follow_synthetic_odometry():
    for scenario in make_suite('crossing', 3, 0):
        _assert_predicts_odometry(scenario, CONSTANT_VELOCITY)
        _assert_predicts_odometry(scenario, CONSTANT_TURN_RATE)
    for scenario in make_suite('curve_ego', 3, 0):
        _assert_predicts_odometry(scenario, CONSTANT_TURN_RATE)


def test_normalize_forecast():
    features = normalize_forecast(EgoMotionForecast((Delta(0.5, 0.0, 0.5),)))
    assert features.shape == (1, 3)
    assert features[0, 0] == pytest.approx(0.5)
    assert features[0, 2] == 4.0

    features = normalize_forecast(EgoMotionForecast((Delta(-100, 100, -1),)))
    assert features.tolist() == [[-4.0, 4.0, -4.0]]


def test_rotate_view():
    camera = CameraIntrinsics()
    center = camera.center
    # Turning left moves what was straight ahead to the right.
    moved = rotate_view([center], 0.1, camera)[0]
    assert moved[0] == pytest.approx(center[0] + camera.focal * math.tan(0.1))
    assert moved[1] == pytest.approx(center[1])

    points = np.array([[100.0, 50.0], [500.0, 400.0]])
    back = rotation_compensate(rotate_view(points, 0.05, camera), 0.05, camera)
    assert np.allclose(back, points)

    with pytest.raises(ValueError):
        rotate_view([center], 2.0, camera)


class TestExternalForecast(object):

    def setup_method(self, method):
        self._tmpdir = tempfile.mkdtemp()

    def teardown_method(self, method):
        shutil.rmtree(self._tmpdir)

    def test_external(self):
        forecast = EgoMotionForecast((Delta(0.5, 0.0, 0.01), Delta(0.4, 0.1, 0.02)))
        filename = path.join(self._tmpdir, 'ego.csv')
        write_external_forecast(forecast, 10, filename)
        table = read_external_forecast(filename)
        assert sorted(table) == [11, 12]

        assert predict_future([], 2, EXTERNAL, external=table, t0=10) == forecast
        with pytest.raises(ValueError):
            predict_future([], 3, EXTERNAL, external=table, t0=10)
        with pytest.raises(ValueError):
            predict_future([], 2, EXTERNAL)

    def test_bad_header(self):
        filename = path.join(self._tmpdir, 'ego.csv')
        with open(filename, 'w') as f:
            f.write('frame,dx\n11,0.5\n')
        with pytest.raises(FormatError):
            read_external_forecast(filename)

    def test_bad_row(self):
        filename = path.join(self._tmpdir, 'ego.csv')
        with open(filename, 'w') as f:
            f.write('frame_index,dx_m,dy_m,dyaw_rad\n11,0.5,0,0\n12,0.5\n')
        with pytest.raises(FormatError) as e:
            read_external_forecast(filename)
        assert ':3:' in str(e.value)
