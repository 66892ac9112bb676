"""
Where will the camera be over the next frames?

The decoder of the trajectory network is conditioned on the predicted
motion of the vehicle carrying the camera. Motion is planar: a forecast is a
list of per-frame steps ``(dx, dy, dyaw)``, each expressed in the vehicle
frame of the previous pose (x forward, y to the left, yaw counter-clockwise).
"""
from collections import namedtuple
from dataclasses import dataclass
import csv
import math

import numpy as np

from .core import EgoPose, FormatError, wrap_angle


__all__ = ('Delta', 'EgoMotionForecast', 'compose_pose', 'relative_delta',
           'combine_deltas', 'predict_future', 'rollout', 'normalize_forecast',
           'rotate_view', 'rotation_compensate', 'read_external_forecast',
           'write_external_forecast', 'PREDICTOR_KINDS')


CONSTANT_VELOCITY = 'constant_velocity'
CONSTANT_TURN_RATE = 'constant_turn_rate'
EXTERNAL = 'external'
PREDICTOR_KINDS = (CONSTANT_VELOCITY, CONSTANT_TURN_RATE, EXTERNAL)

# Units of the decoder features: meters forward, meters lateral, radians.
FEATURE_SCALE = np.array([1.0, 0.5, 0.05])
FEATURE_CLIP = 4.0

EXTERNAL_HEADER = ['frame_index', 'dx_m', 'dy_m', 'dyaw_rad']


Delta = namedtuple('Delta', 'dx dy dyaw')
ZERO_DELTA = Delta(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class EgoMotionForecast:
    deltas: tuple

    def __len__(self):
        return len(self.deltas)

    def as_array(self):
        return np.array(self.deltas, dtype=np.float64).reshape(len(self.deltas), 3)


def compose_pose(pose, delta):
    """Move ``pose`` by ``delta`` given in its own vehicle frame."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    return EgoPose(pose.x + c * delta[0] - s * delta[1],
                   pose.y + s * delta[0] + c * delta[1],
                   wrap_angle(pose.yaw + delta[2]),
                   pose.speed)


def relative_delta(a, b):
    """The delta that takes pose ``a`` to pose ``b``."""
    wx, wy = b.x - a.x, b.y - a.y
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    return Delta(c * wx + s * wy, -s * wx + c * wy, wrap_angle(b.yaw - a.yaw))


def combine_deltas(a, b):
    """A single delta equivalent to applying ``a`` and then ``b``."""
    c, s = math.cos(a[2]), math.sin(a[2])
    return Delta(a[0] + c * b[0] - s * b[1],
                 a[1] + s * b[0] + c * b[1],
                 wrap_angle(a[2] + b[2]))


def _arc_step(chord, dyaw):
    """One frame of circular motion covering ``chord`` meters of straight
    line distance while turning by ``dyaw``.
    """
    if abs(dyaw) < 1e-12:
        return Delta(chord, 0.0, 0.0)
    radius = chord / (2.0 * math.sin(dyaw / 2.0))
    return Delta(radius * math.sin(dyaw), radius * (1.0 - math.cos(dyaw)), dyaw)


def predict_future(history, horizon, kind=CONSTANT_VELOCITY, external=None,
                   t0=None, average_steps=1):
    """Forecast ``horizon`` per-frame steps of the vehicle from its past
    poses.

    ``constant_velocity`` repeats the mean of the last ``average_steps``
    displacements (in the frame of the latest pose) without turning.
    ``constant_turn_rate`` fits speed and yaw rate to the last three poses
    and continues on the circular arc. ``external`` takes the steps for
    frames ``t0 + 1 .. t0 + horizon`` from ``external``, a mapping of frame
    index to step as returned by ``read_external_forecast``.
    """
    if horizon < 1:
        raise ValueError('horizon must be at least 1, not %r' % horizon)
    history = [EgoPose(*p).check() if not isinstance(p, EgoPose) else p.check()
               for p in history]

    if kind == CONSTANT_VELOCITY:
        if len(history) < 2:
            raise ValueError('constant_velocity needs at least 2 poses, got %d'
                             % len(history))
        latest = history[-1]
        steps = min(max(1, average_steps), len(history) - 1)
        moves = []
        for a, b in zip(history[-steps - 1:-1], history[-steps:]):
            # displacement of this step, seen from the latest heading
            wx, wy = b.x - a.x, b.y - a.y
            c, s = math.cos(latest.yaw), math.sin(latest.yaw)
            moves.append((c * wx + s * wy, -s * wx + c * wy))
        dx = sum(m[0] for m in moves) / len(moves)
        dy = sum(m[1] for m in moves) / len(moves)
        step = Delta(dx, dy, 0.0)
        return EgoMotionForecast(tuple([step] * horizon))

    elif kind == CONSTANT_TURN_RATE:
        if len(history) < 3:
            raise ValueError('constant_turn_rate needs at least 3 poses, got %d'
                             % len(history))
        d1 = relative_delta(history[-3], history[-2])
        d2 = relative_delta(history[-2], history[-1])
        dyaw = (d1.dyaw + d2.dyaw) / 2.0
        chord = (math.hypot(d1.dx, d1.dy) + math.hypot(d2.dx, d2.dy)) / 2.0
        if d1.dx + d2.dx < 0:
            chord = -chord
        step = _arc_step(chord, dyaw)
        return EgoMotionForecast(tuple([step] * horizon))

    elif kind == EXTERNAL:
        if external is None or t0 is None:
            raise ValueError('external ego forecasts need a forecast table and t0')
        deltas = []
        for frame_index in range(t0 + 1, t0 + horizon + 1):
            if frame_index not in external:
                raise ValueError('external forecast has no row for frame %d'
                                 % frame_index)
            deltas.append(Delta(*external[frame_index]))
        return EgoMotionForecast(tuple(deltas))

    raise ValueError('unknown ego predictor kind %r' % (kind,))


def rollout(pose, forecast):
    """The poses reached by applying each step of ``forecast`` in turn."""
    poses = []
    for delta in forecast.deltas:
        pose = compose_pose(pose, delta)
        poses.append(pose)
    return poses


def normalize_forecast(forecast):
    """Decoder features of a forecast: an ``(H, 3)`` array, scaled and
    clipped to [-4, 4].
    """
    scaled = forecast.as_array() / FEATURE_SCALE
    return np.clip(np.nan_to_num(scaled, posinf=FEATURE_CLIP, neginf=-FEATURE_CLIP),
                   -FEATURE_CLIP, FEATURE_CLIP)


def rotate_view(points, dyaw, camera):
    """Where distant points seen at pixel positions ``points`` appear after
    the camera yaws by ``dyaw`` (counter-clockwise). Passing the negated
    yaw of a frame step stabilizes the later frame onto the earlier one.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    f = camera.focal
    cx, cy = camera.width / 2.0, camera.height / 2.0
    x = (points[:, 0] - cx) / f
    y = (points[:, 1] - cy) / f
    c, s = math.cos(dyaw), math.sin(dyaw)
    x_rot = s + c * x
    z_rot = c - s * x
    if np.any(z_rot <= 0):
        raise ValueError('rotation moves points behind the camera')
    return np.stack([cx + f * x_rot / z_rot, cy + f * y / z_rot], axis=1)


def rotation_compensate(points, dyaw, camera):
    """Undo the image motion of distant points caused by a camera yaw of
    ``dyaw``: pixel positions in the later frame mapped onto the earlier one.
    """
    return rotate_view(points, -dyaw, camera)


def read_external_forecast(filename):
    """Read an external forecast file into ``{frame_index: Delta}``."""
    table = {}
    with open(filename, 'r', newline='') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != EXTERNAL_HEADER:
            raise FormatError('%s:1: expected header %s' % (
                filename, ','.join(EXTERNAL_HEADER)))
        for row in reader:
            if not row:
                continue
            try:
                table[int(row[0])] = Delta(float(row[1]), float(row[2]), float(row[3]))
            except (IndexError, ValueError) as e:
                raise FormatError('%s:%d: cannot parse forecast row: %s' % (
                    filename, reader.line_num, e))
    return table


def write_external_forecast(forecast, t0, filename):
    with open(filename, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(EXTERNAL_HEADER)
        for i, delta in enumerate(forecast.deltas):
            writer.writerow([t0 + 1 + i, repr(delta[0]), repr(delta[1]), repr(delta[2])])
