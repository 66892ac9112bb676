"""
Helpers to build small sequences for tests and for ``simulate.py``.
"""
from os import path

import numpy as np

from .core import (BoundingBox, BoxAnnotation, EgoPose, FrameRecord, HIGH,
                   Manifest, Sequence)
from .synth import (CONSTANT_VELOCITY, STRAIGHT, CameraIntrinsics,
                    DeerMotionModel, EgoMotion, Scenario, generate)


__all__ = ('TINY_CAMERA', 'moving_box', 'ground_box', 'make_sequence',
           'rendering_sequence', 'tiny_scenario', 'write_tiny_dataset')


TINY_CAMERA = CameraIntrinsics(64, 48)


def moving_box(cx, cy, w=8.0, h=6.0, vx=0.0, vy=0.0, first=0, last=None):
    """A track as a function of the frame: a box moving at a constant pixel
    velocity, present in frames ``first`` to ``last`` (inclusive).
    """
    def box(k):
        if k < first or (last is not None and k > last):
            return None
        return BoundingBox(cx + vx * k, cy + vy * k, w, h)
    return box


def ground_box(forward, left, camera=TINY_CAMERA, size=(1.6, 1.3)):
    """Pixel box of a deer of ``size`` meters standing on flat ground
    ``forward`` meters ahead of the camera and ``left`` to its left.
    """
    f = camera.focal
    cx, cy = camera.center
    u = cx - f * left / forward
    half_width = f * size[0] / forward / 2.0
    return BoundingBox.from_corners(
        u - half_width, cy + f * (camera.mount_height - size[1]) / forward,
        u + half_width, cy + f * camera.mount_height / forward)


def _draw(boxes, camera):
    image = np.full((camera.height, camera.width), 0.3, dtype=np.float32)
    for box in boxes:
        box = box.clamp(camera.width, camera.height)
        image[int(box.top):int(np.ceil(box.bottom)),
              int(box.left):int(np.ceil(box.right))] = 0.85
    return image


def make_sequence(tracks, n_frames, camera=TINY_CAMERA, speed=10.0,
                  frame_rate=30.0, risks=None, sequence_id='seq0',
                  set_id='set0', images=False):
    """An in-memory ``Sequence``.

    ``tracks`` maps track ids to functions of the frame index returning a
    ``BoundingBox`` or ``None``; ``risks`` maps track ids to a risk level
    or a function of the frame index (default high). The vehicle drives
    straight ahead at ``speed``. With ``images``, frames show the boxes as
    bright rectangles.
    """
    risks = risks or {}
    records, poses = [], []
    for k in range(n_frames):
        boxes = []
        for track_id in sorted(tracks):
            box = tracks[track_id](k)
            if box is None:
                continue
            risk = risks.get(track_id, HIGH)
            boxes.append(BoxAnnotation(track_id, box, risk(k) if callable(risk) else risk))
        records.append(FrameRecord(sequence_id, k, k / frame_rate, tuple(boxes)))
        poses.append(EgoPose(speed * k / frame_rate, 0.0, 0.0, speed))
    manifest = Manifest(set_id, sequence_id, camera.width, camera.height,
                        frame_rate, camera.hfov, camera.mount_height)
    frames = None
    if images:
        frames = [_draw([a.box for a in r.boxes], camera) for r in records]
    return Sequence(manifest, records, poses, images=frames)


def rendering_sequence(rendering):
    """A ``Sequence`` over a rendering kept in memory."""
    return Sequence(rendering.scenario.manifest(), rendering.records,
                    rendering.poses, images=rendering.images())


def tiny_scenario(name='tiny', duration=24, seed=0, set_id='set0', side=1.0):
    """A deer crossing 20 m ahead of a vehicle at 10 m/s, seen by a 64x48
    camera.
    """
    deer = DeerMotionModel(CONSTANT_VELOCITY, (20.0, side * 4.0), (0.0, -side * 3.0))
    return Scenario(name, (deer,), EgoMotion(STRAIGHT, 10.0), camera=TINY_CAMERA,
                    duration=duration, seed=seed, set_id=set_id)


def write_tiny_dataset(root, count=2, duration=24):
    """Render ``count`` tiny scenarios below ``root``, one set each."""
    directories = []
    for i in range(count):
        scenario = tiny_scenario('tiny_%d' % i, duration, seed=i, set_id='set%d' % i,
                                 side=1.0 if i % 2 == 0 else -1.0)
        directory = path.join(root, scenario.name)
        generate(scenario, directory)
        directories.append(directory)
    return directories
