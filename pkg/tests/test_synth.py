import math
from os import path
import shutil
import tempfile

import numpy as np
import pytest

from deerwatch.core import HIGH, LOW, find_sequences, open_sequence
from deerwatch.flow import gt_flow, warp
from deerwatch.synth import (
    CONSTANT_VELOCITY, JUMP, STATIONARY, STRAIGHT, SUITES, TURN,
    BehindCameraError, CameraIntrinsics, DeerMotionModel, EgoMotion, Occluder,
    Scenario, annotate, collision_frame, corridor_entry_frame, deer_in_vehicle_frame,
    generate, make_suite, project, read_scenario, render, risk_label, to_camera,
    write_suite)
from deerwatch.test import TINY_CAMERA, ground_box, tiny_scenario


def test_project():
    camera = CameraIntrinsics()
    f = 320 / math.tan(math.radians(25))
    assert camera.focal == pytest.approx(f)
    assert camera.focal == pytest.approx(686.3, abs=0.1)
    assert project((0, 0, 10), camera) == (320, 240)
    u, v = project((1, 0.8, 10), camera)
    assert u == pytest.approx(320 + f / 10)
    assert v == pytest.approx(240 + 0.8 * f / 10)
    with pytest.raises(BehindCameraError):
        project((0, 0, -1), camera)
    with pytest.raises(ValueError):
        CameraIntrinsics(hfov=180)


def test_motion_models_checked():
    with pytest.raises(ValueError):
        DeerMotionModel('teleport', (10, 0))
    with pytest.raises(ValueError):
        DeerMotionModel(JUMP, (10, 0))
    with pytest.raises(ValueError):
        DeerMotionModel(STATIONARY, (10, 0), (1, 0))
    with pytest.raises(ValueError):
        DeerMotionModel(CONSTANT_VELOCITY, (10, 0), jump_frame=3)
    with pytest.raises(ValueError):
        EgoMotion(TURN, 10.0, 0.0)
    deer = DeerMotionModel(CONSTANT_VELOCITY, (10, 0), (0, 1))
    with pytest.raises(ValueError):
        Scenario('s', (deer, deer), duration=10)


def test_jump_position():
    deer = DeerMotionModel(JUMP, (10.0, 5.0), (0.0, 0.0), 30, (0.0, -3.0))
    assert deer.position_at(15, 30.0) == (10.0, 5.0)
    assert deer.position_at(60, 30.0) == (10.0, 2.0)
    assert deer.velocity_at(29) == (0.0, 0.0)
    assert deer.velocity_at(30) == (0.0, -3.0)


def test_turning_ego():
    ego = EgoMotion(TURN, 10.0, 0.1)
    pose = ego.pose_at(math.pi / 0.1)
    # half a circle of radius 100 m
    assert pose.x == pytest.approx(0, abs=1e-9)
    assert pose.y == pytest.approx(200)
    assert abs(pose.yaw) == pytest.approx(math.pi)
    assert ego.lateral_offset(0.0, 0.0) == pytest.approx(0)
    assert ego.lateral_offset(0.0, 5.0) == pytest.approx(5.0)


def test_risk_label():
    scenario = tiny_scenario()
    assert risk_label(scenario, scenario.deer[0], 0) == HIGH
    far = DeerMotionModel(STATIONARY, (30.0, 15.0))
    assert risk_label(scenario, far, 0) == LOW
    coming = DeerMotionModel(CONSTANT_VELOCITY, (30.0, 12.0), (0.0, -3.0))
    assert risk_label(scenario, coming, 0) == HIGH


def test_corridor_entry():
    deer = DeerMotionModel(CONSTANT_VELOCITY, (20.0, 4.0), (0.0, -3.6))
    scenario = Scenario('s', (deer,), EgoMotion(STRAIGHT, 10.0), duration=40)
    assert corridor_entry_frame(scenario, deer) == 21
    assert corridor_entry_frame(scenario, deer, stop=20) is None


def test_collision_frame():
    deer = DeerMotionModel(STATIONARY, (20.0, 0.0))
    scenario = Scenario('s', (deer,), EgoMotion(STRAIGHT, 10.0), duration=90)
    assert collision_frame(scenario, deer) == 60
    assert corridor_entry_frame(scenario, deer) == 0

    aside = DeerMotionModel(STATIONARY, (20.0, 5.0))
    assert collision_frame(Scenario('s', (aside,), duration=90), aside) is None


def test_render_is_deterministic():
    a = render(tiny_scenario(duration=6))
    b = render(tiny_scenario(duration=6))
    assert all(np.array_equal(x, y) for x, y in zip(a.frames, b.frames))
    assert a.records == b.records
    c = render(tiny_scenario(duration=6, seed=1))
    assert not np.array_equal(a.frames[0], c.frames[0])


def test_render_outputs():
    rendering = render(tiny_scenario(duration=10))
    assert len(rendering.frames) == 10
    assert len(rendering.flows) == 9
    assert rendering.frames[0].dtype == np.uint16
    assert rendering.frames[0].shape == (48, 64)
    assert [r.frame_index for r in rendering.records] == list(range(10))
    assert rendering.poses[3].x == pytest.approx(1.0)
    assert rendering.poses[3].speed == 10.0
    assert rendering.warnings == []


def test_boxes_follow_geometry():
    rendering = render(tiny_scenario(duration=10))
    for k in (0, 5, 9):
        annotation = rendering.records[k].boxes[0]
        assert annotation.track_id == 'deer0'
        expected = ground_box(20.0 - 10.0 * k / 30.0, 4.0 - 3.0 * k / 30.0)
        assert annotation.box.cx == pytest.approx(expected.cx)
        assert annotation.box.cy == pytest.approx(expected.cy)
        assert annotation.box.w == pytest.approx(expected.w)
        assert annotation.box.h == pytest.approx(expected.h)


def test_deer_is_warm():
    rendering = render(tiny_scenario(duration=2))
    image = rendering.images()[0]
    box = rendering.records[0].boxes[0].box
    assert image[int(box.cy), int(box.cx)] > image[47, 0]
    assert image[0, 0] == pytest.approx(0.15, abs=1e-4)


def test_occluded_box_is_shorter():
    deer = DeerMotionModel(STATIONARY, (15.0, 1.0))
    grass = Occluder((10.0, 20.0), (-1.0, 3.0), 0.4)
    clear = render(Scenario('c', (deer,), camera=TINY_CAMERA, duration=2))
    hidden = render(Scenario('h', (deer,), camera=TINY_CAMERA, duration=2,
                             occluders=(grass,)))
    a = clear.records[0].boxes[0].box
    b = hidden.records[0].boxes[0].box
    assert a.top == pytest.approx(b.top)
    assert b.h == pytest.approx(a.h * (1.3 - 0.4) / 1.3)


def test_deer_behind_is_not_annotated():
    deer = DeerMotionModel(STATIONARY, (-5.0, 0.0))
    rendering = render(Scenario('s', (deer,), camera=TINY_CAMERA, duration=2))
    assert all(not r.boxes for r in rendering.records)
    assert rendering.warnings == ['deer0 is never visible']


def test_flow_on_the_deer():
    camera = CameraIntrinsics(160, 120)
    deer = DeerMotionModel(CONSTANT_VELOCITY, (20.0, 2.0), (0.0, -3.0))
    rendering = render(Scenario('s', (deer,), camera=camera, duration=3))
    before = rendering.records[1].boxes[0].box
    after = rendering.records[2].boxes[0].box
    flow = rendering.flows[1]
    row, col = int(before.cy), int(before.cx)
    assert flow.u[row, col] == pytest.approx(after.cx - before.cx, abs=0.05)
    assert flow.v[row, col] == pytest.approx(after.cy - before.cy, abs=0.05)


def test_make_suite():
    for name in SUITES:
        scenarios = make_suite(name, 6, 7)
        assert scenarios == make_suite(name, 6, 7)
        assert [s.name for s in scenarios] == ['%s_%04d' % (name, i) for i in range(6)]
        assert [s.set_id for s in scenarios] == ['set0', 'set1', 'set2', 'set3', 'set4', 'set0']
    assert make_suite('crossing', 3, 7) != make_suite('crossing', 3, 8)

    with pytest.raises(ValueError):
        make_suite('stampede', 1, 0)
    with pytest.raises(ValueError):
        make_suite('crossing', 0, 0)


def test_suite_geometry():
    for scenario in make_suite('crossing', 10, 0):
        deer = scenario.deer[0]
        assert corridor_entry_frame(scenario, deer) is not None
        # still well ahead of the vehicle at the end
        assert collision_frame(scenario, deer) is None
        assert deer_in_vehicle_frame(scenario, deer, scenario.duration - 1)[0] >= 30.0
    for name in ('jump', 'occluded_jump'):
        for scenario in make_suite(name, 10, 0):
            assert collision_frame(scenario, scenario.deer[0]) is not None
    for scenario in make_suite('stationary', 10, 0):
        assert collision_frame(scenario, scenario.deer[0]) is None
    for scenario in make_suite('occluded_jump', 5, 0):
        assert len(scenario.occluders) == 1
        assert 0 < scenario.deer[0].jump_frame < scenario.duration
    for scenario in make_suite('curve_ego', 5, 0):
        assert scenario.ego.kind == TURN


def test_annotate_matches_render():
    scenario = tiny_scenario(duration=8)
    rendering = render(scenario)
    records, poses = annotate(scenario)
    assert records == rendering.records
    assert poses == rendering.poses


def test_boxes_match_projection():
    for name in SUITES:
        checked = 0
        for scenario in make_suite(name, 5, 0):
            cam = scenario.camera
            deer = scenario.deer[0]
            records, poses = annotate(scenario)
            for record, pose in zip(records, poses):
                if not record.boxes:
                    continue
                box = record.boxes[0].box
                if (box.left <= 0 or box.top <= 0 or box.right >= cam.width
                        or box.bottom >= cam.height):
                    continue
                x, y = deer.position_at(record.frame_index, scenario.frame_rate)
                if any(o.covers(x, y) for o in scenario.occluders):
                    continue
                point = to_camera([(x, y, deer.size[1] / 2.0)], pose, cam)[0]
                u, v = project(point, cam)
                assert abs(box.cx - u) <= 1.0 and abs(box.cy - v) <= 1.0
                assert abs(box.w - cam.focal * deer.size[0] / point[2]) <= 1.0
                assert abs(box.h - cam.focal * deer.size[1] / point[2]) <= 1.0
                checked += 1
        assert checked > 100, name


def test_flow_warps_frames_back():
    scenarios = (make_suite('crossing', 1, 0, duration=30)
                 + make_suite('curve_ego', 1, 0, duration=30))
    for scenario in scenarios:
        rendering = render(scenario)
        images = rendering.images()
        for k in (0, 14, 28):
            warped = warp(images[k + 1], rendering.flows[k])
            valid = ~np.isnan(warped)
            assert valid.mean() > 0.7
            error = np.abs(warped[valid] - images[k][valid]).mean()
            assert error < 0.02 * images[k][valid].mean()


class TestGenerate(object):

    def setup_method(self, method):
        self._tmpdir = tempfile.mkdtemp()

    def teardown_method(self, method):
        shutil.rmtree(self._tmpdir)

    def test_generate(self):
        scenario = tiny_scenario(duration=5)
        directory = path.join(self._tmpdir, 'tiny')
        rendering = generate(scenario, directory)

        assert read_scenario(path.join(directory, 'scenario.json')) == scenario
        sequence = open_sequence(directory)
        assert len(sequence) == 5
        assert sequence.records == rendering.records
        assert np.array_equal(sequence.frame(2), rendering.images()[2])
        flow = gt_flow(sequence, 3)
        assert np.array_equal(flow.u, rendering.flows[3].u)
        assert np.array_equal(flow.v, rendering.flows[3].v)
        assert not path.exists(path.join(directory, 'flow', '000004.bin'))

    def test_write_suite(self):
        scenarios = write_suite('stationary', 2, 0, self._tmpdir, duration=3)
        assert find_sequences(self._tmpdir) == [
            path.join(self._tmpdir, s.name) for s in scenarios]
        assert open_sequence(path.join(self._tmpdir, 'stationary_0001')).set_id == 'set1'
