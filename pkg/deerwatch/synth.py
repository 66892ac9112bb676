"""
Synthetic nighttime thermal scenes of deer near a road.

The world is a flat ground plane (x forward from the starting pose, y to
the left, z up). The camera sits at the front of the vehicle, at
``mount_height`` above the ground, looking along the vehicle heading with
no pitch or roll. Deer are warm two-ellipse silhouettes (body and head)
facing the camera; the background is cool, world-anchored value noise with
a darker road band following the ego path. Everything is a closed-form
function of the ``Scenario`` and its seed, so rendering the same scenario
twice gives the same bytes, and the annotation boxes, the odometry and the
ground truth flow can be checked against the geometry exactly.
"""
from dataclasses import dataclass, field
import json
import logging
import math
import os
from os import path

import cv2
import numpy as np
from scipy import ndimage

from .core import (
    BoundingBox, BoxAnnotation, EgoPose, FrameRecord, Manifest, HIGH, LOW,
    wrap_angle, write_annotations, write_manifest, write_odometry)
from .egomotion import rotate_view
from .flow import FlowField, write_flow


__all__ = ('CameraIntrinsics', 'DeerMotionModel', 'EgoMotion', 'Occluder',
           'Scenario', 'Rendering', 'BehindCameraError', 'project',
           'annotate', 'generate', 'render', 'make_suite', 'write_suite', 'SUITES',
           'SUITE_RANGES', 'risk_label', 'corridor_entry_frame',
           'collision_frame', 'deer_position', 'ego_pose', 'lateral_offset',
           'read_scenario')


log = logging.getLogger(__name__)


STATIONARY = 'stationary'
CONSTANT_VELOCITY = 'constant_velocity'
JUMP = 'jump'
DEER_KINDS = (STATIONARY, CONSTANT_VELOCITY, JUMP)

STRAIGHT = 'straight'
TURN = 'turn'

# Intensities, in [0, 1] of the sensor range.
SKY = 0.15
GROUND = 0.30
GROUND_TEXTURE = 0.08
ROAD_DARKENING = 0.08
DEER = 0.85

TEXTURE_CELL_M = 4.0
TEXTURE_SIZE = 128
NEAR_M = 1.0
MIN_BOX_PX = 2.0

# Risk labeling: a deer is high risk while it will come closer than this to
# the corridor centerline within the look-ahead.
RISK_DISTANCE_M = 8.0
RISK_LOOKAHEAD_S = 2.0

# Default half width of the corridor swept by the vehicle.
CORRIDOR_HALF_WIDTH_M = 1.5


class BehindCameraError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int = 640
    height: int = 480
    hfov: float = 50.0
    mount_height: float = 0.8

    def __post_init__(self):
        if not 0 < self.hfov < 180:
            raise ValueError('hfov must be in (0, 180) degrees, not %r' % self.hfov)
        if self.width <= 0 or self.height <= 0:
            raise ValueError('image size must be positive, not %rx%r' % (
                self.width, self.height))

    @property
    def focal(self):
        return self.width / (2.0 * math.tan(math.radians(self.hfov) / 2.0))

    @property
    def center(self):
        return self.width / 2.0, self.height / 2.0


def project(point, camera):
    """Pinhole projection of a camera-frame point (X right, Y down, Z
    forward, meters) to pixel coordinates.
    """
    x, y, z = point
    if not z > 0:
        raise BehindCameraError('point %r is not in front of the camera' % (point,))
    cx, cy = camera.center
    f = camera.focal
    return cx + f * x / z, cy + f * y / z


def to_camera(points, pose, camera):
    """World points ``(N, 3)`` into the camera frame of ``pose``."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    dx = points[:, 0] - pose.x
    dy = points[:, 1] - pose.y
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    forward = c * dx + s * dy
    left = -s * dx + c * dy
    return np.stack([-left, camera.mount_height - points[:, 2], forward], axis=1)


@dataclass(frozen=True)
class DeerMotionModel:
    """Ground-plane kinematics of one deer. Velocities are world-frame
    vectors in m/s; a jump switches to ``jump_velocity`` at ``jump_frame``.
    ``size`` is the silhouette (width, height) in meters.
    """

    kind: str
    position: tuple
    velocity: tuple = (0.0, 0.0)
    jump_frame: int = None
    jump_velocity: tuple = None
    size: tuple = (1.6, 1.3)
    track_id: str = 'deer0'

    def __post_init__(self):
        if self.kind not in DEER_KINDS:
            raise ValueError('unknown deer motion kind %r' % (self.kind,))
        has_jump = self.jump_frame is not None or self.jump_velocity is not None
        if self.kind == JUMP:
            if self.jump_frame is None or self.jump_velocity is None:
                raise ValueError('jump motion needs jump_frame and jump_velocity')
            if self.jump_frame < 0:
                raise ValueError('jump_frame must not be negative')
        elif has_jump:
            raise ValueError('jump fields are only allowed for jump motion')
        if self.kind == STATIONARY and any(self.velocity):
            raise ValueError('a stationary deer cannot have a velocity')
        if min(self.size) <= 0:
            raise ValueError('deer size must be positive, not %r' % (self.size,))

    def position_at(self, frame, frame_rate):
        x0, y0 = self.position
        vx, vy = self.velocity
        if self.kind == JUMP and frame >= self.jump_frame:
            tj = self.jump_frame / frame_rate
            jx, jy = self.jump_velocity
            dt = (frame - self.jump_frame) / frame_rate
            return x0 + vx * tj + jx * dt, y0 + vy * tj + jy * dt
        t = frame / frame_rate
        return x0 + vx * t, y0 + vy * t

    def velocity_at(self, frame):
        if self.kind == JUMP and frame >= self.jump_frame:
            return tuple(self.jump_velocity)
        return tuple(self.velocity)

    @property
    def facing(self):
        """+1 when the head is drawn on the image right, -1 on the left."""
        for vx, vy in (self.velocity, self.jump_velocity or (0.0, 0.0)):
            if vy:
                return -1 if vy > 0 else 1
        return 1

    def to_dict(self):
        return {'kind': self.kind, 'position': list(self.position),
                'velocity': list(self.velocity), 'jump_frame': self.jump_frame,
                'jump_velocity': (list(self.jump_velocity)
                                  if self.jump_velocity is not None else None),
                'size': list(self.size), 'track_id': self.track_id}

    @classmethod
    def from_dict(cls, data):
        return cls(kind=data['kind'], position=tuple(data['position']),
                   velocity=tuple(data.get('velocity', (0.0, 0.0))),
                   jump_frame=data.get('jump_frame'),
                   jump_velocity=(tuple(data['jump_velocity'])
                                  if data.get('jump_velocity') is not None else None),
                   size=tuple(data.get('size', (1.6, 1.3))),
                   track_id=data.get('track_id', 'deer0'))


@dataclass(frozen=True)
class EgoMotion:
    """Vehicle motion starting at the world origin, heading along x. A
    ``turn`` follows a circle at constant ``yaw_rate`` (rad/s).
    """

    kind: str = STRAIGHT
    speed: float = 10.0
    yaw_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in (STRAIGHT, TURN):
            raise ValueError('unknown ego motion kind %r' % (self.kind,))
        if self.speed < 0:
            raise ValueError('ego speed must not be negative')
        if self.kind == TURN and (self.yaw_rate == 0 or self.speed == 0):
            raise ValueError('a turn needs a nonzero speed and yaw rate')

    def pose_at(self, t):
        v = self.speed
        if self.kind == STRAIGHT:
            return EgoPose(v * t, 0.0, 0.0, v)
        w = self.yaw_rate
        r = v / w
        return EgoPose(r * math.sin(w * t), r * (1.0 - math.cos(w * t)),
                       wrap_angle(w * t), v)

    def lateral_offset(self, x, y):
        """Signed distance (left positive) of ground points from the ego
        path, which is also the road centerline.
        """
        if self.kind == STRAIGHT:
            return np.asarray(y, dtype=np.float64) * 1.0
        r = self.speed / self.yaw_rate
        distance = np.hypot(x, np.asarray(y, dtype=np.float64) - r)
        return math.copysign(1.0, r) * (abs(r) - distance)

    def to_dict(self):
        return {'kind': self.kind, 'speed': self.speed, 'yaw_rate': self.yaw_rate}

    @classmethod
    def from_dict(cls, data):
        return cls(data.get('kind', STRAIGHT), float(data.get('speed', 0.0)),
                   float(data.get('yaw_rate', 0.0)))


@dataclass(frozen=True)
class Occluder:
    """A patch of tall grass on the ground: deer standing in it lose the
    part of their silhouette below ``height`` meters.
    """

    x_range: tuple
    y_range: tuple
    height: float

    def covers(self, x, y):
        return (self.x_range[0] <= x <= self.x_range[1]
                and self.y_range[0] <= y <= self.y_range[1])

    def to_dict(self):
        return {'x_range': list(self.x_range), 'y_range': list(self.y_range),
                'height': self.height}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(data['x_range']), tuple(data['y_range']), float(data['height']))


@dataclass(frozen=True)
class Scenario:
    name: str
    deer: tuple
    ego: EgoMotion = field(default_factory=EgoMotion)
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    duration: int = 120
    occluders: tuple = ()
    seed: int = 0
    frame_rate: float = 30.0
    road_half_width: float = 3.5
    set_id: str = 'set0'

    def __post_init__(self):
        if self.duration < 2:
            raise ValueError('a scenario needs at least 2 frames')
        ids = [d.track_id for d in self.deer]
        if len(set(ids)) != len(ids):
            raise ValueError('deer track ids must be unique: %s' % ', '.join(ids))

    def pose(self, frame):
        return self.ego.pose_at(frame / self.frame_rate)

    def manifest(self):
        return Manifest(self.set_id, self.name, self.camera.width,
                        self.camera.height, self.frame_rate, self.camera.hfov,
                        self.camera.mount_height)

    def to_dict(self):
        return {
            'name': self.name, 'deer': [d.to_dict() for d in self.deer],
            'ego': self.ego.to_dict(),
            'camera': {'width': self.camera.width, 'height': self.camera.height,
                       'hfov': self.camera.hfov,
                       'mount_height': self.camera.mount_height},
            'duration': self.duration,
            'occluders': [o.to_dict() for o in self.occluders],
            'seed': self.seed, 'frame_rate': self.frame_rate,
            'road_half_width': self.road_half_width, 'set_id': self.set_id,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(name=data['name'],
                   deer=tuple(DeerMotionModel.from_dict(d) for d in data['deer']),
                   ego=EgoMotion.from_dict(data['ego']),
                   camera=CameraIntrinsics(**data['camera']),
                   duration=int(data['duration']),
                   occluders=tuple(Occluder.from_dict(o) for o in data.get('occluders', [])),
                   seed=int(data['seed']), frame_rate=float(data['frame_rate']),
                   road_half_width=float(data.get('road_half_width', 3.5)),
                   set_id=data.get('set_id', 'set0'))


def read_scenario(filename):
    with open(filename, 'r', encoding='utf-8') as f:
        return Scenario.from_dict(json.load(f))


def deer_in_vehicle_frame(scenario, deer, frame, reference=None):
    """Ground position ``(forward, left)`` of a deer relative to the
    vehicle at ``reference`` (default: the same frame).
    """
    pose = scenario.pose(frame if reference is None else reference)
    x, y = deer.position_at(frame, scenario.frame_rate)
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    dx, dy = x - pose.x, y - pose.y
    return c * dx + s * dy, -s * dx + c * dy


def deer_position(deer, frame, frame_rate=30.0):
    return deer.position_at(frame, frame_rate)


def ego_pose(scenario, frame):
    return scenario.pose(frame)


def lateral_offset(scenario, x, y):
    return scenario.ego.lateral_offset(x, y)


def risk_label(scenario, deer, frame):
    """High when, continuing with its current velocity, the deer comes
    within ``RISK_DISTANCE_M`` of the corridor centerline in the next
    ``RISK_LOOKAHEAD_S`` seconds.
    """
    x, y = deer.position_at(frame, scenario.frame_rate)
    vx, vy = deer.velocity_at(frame)
    steps = int(round(RISK_LOOKAHEAD_S * scenario.frame_rate))
    times = np.arange(steps + 1) / scenario.frame_rate
    offset = scenario.ego.lateral_offset(x + vx * times, y + vy * times)
    return HIGH if np.any(np.abs(offset) < RISK_DISTANCE_M) else LOW


def corridor_entry_frame(scenario, deer, half_width=CORRIDOR_HALF_WIDTH_M,
                         start=0, stop=None):
    """First frame in which the deer stands inside the ego corridor ahead of
    the vehicle, or ``None``.
    """
    stop = scenario.duration if stop is None else stop
    for k in range(start, stop):
        forward, left = deer_in_vehicle_frame(scenario, deer, k)
        if forward > 0 and abs(left) <= half_width:
            return k
    return None


def collision_frame(scenario, deer, half_width=CORRIDOR_HALF_WIDTH_M,
                    vehicle_length=4.5, stop=None):
    """First frame in which the deer is inside the vehicle footprint: within
    the corridor, between the front of the vehicle and ``vehicle_length``
    behind it. ``None`` if the vehicle never reaches the deer.
    """
    stop = scenario.duration if stop is None else stop
    for k in range(stop):
        forward, left = deer_in_vehicle_frame(scenario, deer, k)
        if -vehicle_length <= forward <= 0 and abs(left) <= half_width:
            return k
    return None


class Rendering(object):
    """Everything ``render`` produces for one scenario."""

    def __init__(self, scenario, frames, records, poses, flows, warnings):
        self.scenario = scenario
        self.frames = frames
        self.records = records
        self.poses = poses
        self.flows = flows
        self.warnings = warnings

    def images(self):
        """Frames as float32 in [0, 1], the way they load from disk."""
        return [f.astype(np.float32) / 65535.0 for f in self.frames]


class _Renderer(object):
    """Per-scenario state shared by all frames: pixel rays, texture."""

    def __init__(self, scenario, draw=True):
        self.scenario = scenario
        cam = scenario.camera
        self.camera = cam
        self.f = cam.focal
        self.cx, self.cy = cam.center
        if not draw:
            return
        rng = np.random.default_rng(scenario.seed)
        self.texture = rng.uniform(-1.0, 1.0, (TEXTURE_SIZE, TEXTURE_SIZE))

        cols = np.arange(cam.width, dtype=np.float64) + 0.5
        rows = np.arange(cam.height, dtype=np.float64) + 0.5
        self.u, self.v = np.meshgrid(cols, rows)
        below = self.v - self.cy
        self.ground = below > 0
        depth = np.full(self.u.shape, np.inf)
        depth[self.ground] = self.f * cam.mount_height / below[self.ground]
        self.depth = depth
        # ground points, vehicle frame
        self.forward = np.where(self.ground, depth, 0.0)
        self.left = np.where(self.ground, -(self.u - self.cx) * depth / self.f, 0.0)

    def ground_world(self, pose):
        c, s = math.cos(pose.yaw), math.sin(pose.yaw)
        x = pose.x + c * self.forward - s * self.left
        y = pose.y + s * self.forward + c * self.left
        return x, y

    def background(self, pose):
        x, y = self.ground_world(pose)
        noise = ndimage.map_coordinates(
            self.texture, [y / TEXTURE_CELL_M, x / TEXTURE_CELL_M],
            order=1, mode='grid-wrap')
        offset = np.abs(self.scenario.ego.lateral_offset(x, y))
        road = np.clip(self.scenario.road_half_width + 0.5 - offset, 0.0, 1.0)
        near = np.exp(-np.where(self.ground, self.depth, 0.0) / 60.0)
        far = np.exp(-np.where(self.ground, self.depth, 0.0) / 150.0)
        image = GROUND + GROUND_TEXTURE * noise * near - ROAD_DARKENING * road * far
        return np.where(self.ground, image, SKY)

    def silhouette(self, deer, frame):
        """Projected silhouette of a deer: ``(center, scale, depth, cut)``
        where ``scale`` is pixels per meter and ``cut`` the lowest visible
        height in meters relative to the centroid (``None`` if not
        occluded). ``None`` if the deer is not in front of the camera.
        """
        scenario = self.scenario
        pose = scenario.pose(frame)
        x, y = deer.position_at(frame, scenario.frame_rate)
        height = deer.size[1]
        point = to_camera([(x, y, height / 2.0)], pose, self.camera)[0]
        if point[2] < NEAR_M:
            return None
        u, v = project(point, self.camera)
        cut = None
        for occluder in scenario.occluders:
            if occluder.covers(x, y):
                level = -height / 2.0 + occluder.height
                cut = level if cut is None else max(cut, level)
        return (u, v), self.f / point[2], point[2], cut

    def mask(self, deer, view):
        """Rasterized silhouette (0/1) on the full image."""
        (uc, vc), scale, _, cut = view
        w, h = deer.size
        half_w, half_h = w / 2.0 * scale, h / 2.0 * scale
        cam = self.camera
        r0 = max(int(math.floor(vc - half_h)) - 1, 0)
        r1 = min(int(math.ceil(vc + half_h)) + 1, cam.height)
        c0 = max(int(math.floor(uc - half_w)) - 1, 0)
        c1 = min(int(math.ceil(uc + half_w)) + 1, cam.width)
        mask = np.zeros((cam.height, cam.width), np.float32)
        if r0 >= r1 or c0 >= c1:
            return mask
        a = (self.u[r0:r1, c0:c1] - uc) / scale * deer.facing
        b = -(self.v[r0:r1, c0:c1] - vc) / scale
        body = (((a + 0.1 * w) / (0.4 * w)) ** 2
                + ((b + 0.15 * h) / (0.35 * h)) ** 2) <= 1.0
        head = (((a - 0.3 * w) / (0.2 * w)) ** 2
                + ((b - 0.275 * h) / (0.225 * h)) ** 2) <= 1.0
        inside = body | head
        if cut is not None:
            inside &= b >= cut
        mask[r0:r1, c0:c1] = inside
        return mask

    def box(self, deer, view):
        """Tight box of the visible silhouette, in pixels."""
        (uc, vc), scale, _, cut = view
        w, h = deer.size
        bottom = vc + h / 2.0 * scale if cut is None else vc - cut * scale
        return BoundingBox.from_corners(uc - w / 2.0 * scale, vc - h / 2.0 * scale,
                                        uc + w / 2.0 * scale, bottom)

    def views(self, k):
        """Silhouettes of the deer in front of the camera in frame ``k``."""
        views = {}
        for deer in self.scenario.deer:
            view = self.silhouette(deer, k)
            if view is not None:
                views[deer] = view
        return views

    def record(self, k, views):
        """Annotations of frame ``k``; tiny boxes and boxes centered off
        the image are left out.
        """
        scenario = self.scenario
        cam = self.camera
        boxes = []
        for deer, view in sorted(views.items(), key=lambda dv: dv[0].track_id):
            box = self.box(deer, view)
            if box.w < MIN_BOX_PX or box.h < MIN_BOX_PX:
                continue
            if not (0 <= box.cx <= cam.width and 0 <= box.cy <= cam.height):
                continue
            boxes.append(BoxAnnotation(deer.track_id, box.clamp(cam.width, cam.height),
                                       risk_label(scenario, deer, k)))
        return FrameRecord(scenario.name, k, k / scenario.frame_rate, tuple(boxes))

    def frame(self, k):
        image = self.background(self.scenario.pose(k))
        views = self.views(k)
        # paint far deer first
        masks = {}
        for deer, view in sorted(views.items(), key=lambda dv: -dv[1][2]):
            alpha = cv2.GaussianBlur(self.mask(deer, view), (0, 0), 0.8)
            image = image * (1.0 - alpha) + DEER * alpha
            masks[deer.track_id] = alpha
        return image, views, masks

    def flow(self, k, views, masks):
        """Ground truth motion of every pixel from frame ``k`` to ``k + 1``."""
        scenario = self.scenario
        cam = self.camera
        pose, following = scenario.pose(k), scenario.pose(k + 1)
        u = np.zeros(self.u.shape)
        v = np.zeros(self.u.shape)

        x, y = self.ground_world(pose)
        points = np.stack([x[self.ground], y[self.ground],
                           np.zeros(int(self.ground.sum()))], axis=1)
        moved = to_camera(points, following, cam)
        ahead = moved[:, 2] > 0.1
        du = np.zeros(len(moved))
        dv = np.zeros(len(moved))
        du[ahead] = self.cx + self.f * moved[ahead, 0] / moved[ahead, 2] - self.u[self.ground][ahead]
        dv[ahead] = self.cy + self.f * moved[ahead, 1] / moved[ahead, 2] - self.v[self.ground][ahead]
        u[self.ground] = du
        v[self.ground] = dv

        sky = ~self.ground
        dyaw = wrap_angle(following.yaw - pose.yaw)
        if dyaw:
            pts = np.stack([self.u[sky], self.v[sky]], axis=1)
            rotated = rotate_view(pts, dyaw, cam)
            u[sky] = rotated[:, 0] - pts[:, 0]
            v[sky] = rotated[:, 1] - pts[:, 1]

        for deer in sorted(views, key=lambda d: -views[d][2]):
            view = views[deer]
            after = self.silhouette(deer, k + 1)
            if after is None:
                continue
            (uc, vc), scale = view[0], view[1]
            (uc1, vc1), scale1 = after[0], after[1]
            ratio = scale1 / scale
            body = masks[deer.track_id] > 0.5
            u[body] = uc1 - uc + (self.u[body] - uc) * (ratio - 1.0)
            v[body] = vc1 - vc + (self.v[body] - vc) * (ratio - 1.0)
        return FlowField(u.astype(np.float32), v.astype(np.float32))


def _never_visible(scenario, records):
    seen = set(a.track_id for r in records for a in r.boxes)
    warnings = []
    for deer in scenario.deer:
        if deer.track_id not in seen:
            warnings.append('%s is never visible' % deer.track_id)
            log.warning('%s: %s is never visible', scenario.name, deer.track_id)
    return warnings


def annotate(scenario):
    """Annotations and odometry of a scenario, ``(records, poses)``, the
    same ``render`` gives but without drawing a pixel.
    """
    renderer = _Renderer(scenario, draw=False)
    records = [renderer.record(k, renderer.views(k)) for k in range(scenario.duration)]
    return records, [scenario.pose(k) for k in range(scenario.duration)]


def render(scenario):
    """Render a scenario in memory. See ``generate`` for the file form."""
    renderer = _Renderer(scenario)
    frames, records, flows = [], [], []
    previous = None
    for k in range(scenario.duration):
        image, views, masks = renderer.frame(k)
        if previous is not None:
            flows.append(renderer.flow(k - 1, *previous))
        previous = (views, masks)
        frames.append(np.round(np.clip(image, 0.0, 1.0) * 65535.0).astype(np.uint16))
        records.append(renderer.record(k, views))
    poses = [scenario.pose(k) for k in range(scenario.duration)]
    return Rendering(scenario, frames, records, poses, flows,
                     _never_visible(scenario, records))


def generate(scenario, out_dir):
    """Render ``scenario`` and write it to ``out_dir`` in the dataset layout
    (frames, annotations, odometry, manifest, flow and the scenario itself).
    """
    rendering = render(scenario)
    frames_dir = path.join(out_dir, 'frames')
    flow_dir = path.join(out_dir, 'flow')
    for directory in (frames_dir, flow_dir):
        if not path.isdir(directory):
            os.makedirs(directory)
    for k, image in enumerate(rendering.frames):
        cv2.imwrite(path.join(frames_dir, '%06d.png' % k), image)
    for k, flow in enumerate(rendering.flows):
        write_flow(flow, path.join(flow_dir, '%06d.bin' % k))
    write_annotations(rendering.records, path.join(out_dir, 'annotations.jsonl'))
    write_odometry(rendering.poses, path.join(out_dir, 'odometry.csv'))
    write_manifest(scenario.manifest(), path.join(out_dir, 'manifest.json'))
    with open(path.join(out_dir, 'scenario.json'), 'w', encoding='utf-8') as f:
        json.dump(scenario.to_dict(), f, sort_keys=True, indent=2)
        f.write('\n')
    return rendering


# Parameter ranges of the suites; they make no claim about real deer.
# Crossing deer pass the corridor centerline at a fraction of the sequence
# and are still ``crossing_end_forward_m`` ahead when it ends, so their
# image motion stays within the flow search radius. Jumps are timed so the
# vehicle reaches the deer while it stands in the corridor.
SUITE_RANGES = {
    'ego_speed_mps': (10.0, 16.0),
    'deer_forward_m': (25.0, 60.0),
    'stationary_lateral_m': (2.0, 15.0),
    'crossing_speed_mps': (1.5, 4.0),
    'crossing_fraction': (0.5, 0.8),
    'crossing_end_forward_m': (30.0, 45.0),
    'corridor_offset_m': (-0.8, 0.8),
    'jump_lateral_m': (3.0, 6.0),
    'jump_fraction': (0.3, 0.45),
    'jump_speed_mps': (3.0, 5.0),
    'grass_height_fraction': (0.15, 0.3),
    'turn_yaw_rate_rps': (0.05, 0.15),
    'deer_width_m': (1.4, 1.9),
    'deer_height_m': (1.1, 1.5),
}

SUITES = ('stationary', 'crossing', 'jump', 'occluded_jump', 'curve_ego')


def _uniform(rng, name):
    low, high = SUITE_RANGES[name]
    return float(rng.uniform(low, high))


def _deer_size(rng):
    return (_uniform(rng, 'deer_width_m'), _uniform(rng, 'deer_height_m'))


def _scenario(name, index, rng, duration, frame_rate, n_sets):
    length_s = duration / frame_rate
    ego = EgoMotion(STRAIGHT, _uniform(rng, 'ego_speed_mps'))
    side = 1.0 if rng.uniform() < 0.5 else -1.0
    occluders = ()

    if name == 'stationary':
        # stays ahead of the vehicle for the whole sequence
        forward = ego.speed * length_s + _uniform(rng, 'deer_forward_m')
        deer = DeerMotionModel(STATIONARY, (forward, side * _uniform(rng, 'stationary_lateral_m')),
                               size=_deer_size(rng))
    elif name == 'crossing':
        speed = _uniform(rng, 'crossing_speed_mps')
        crossing = _uniform(rng, 'crossing_fraction') * length_s
        offset = _uniform(rng, 'corridor_offset_m')
        forward = ego.speed * length_s + _uniform(rng, 'crossing_end_forward_m')
        deer = DeerMotionModel(CONSTANT_VELOCITY,
                               (forward, side * (speed * crossing + offset)),
                               (0.0, -side * speed), size=_deer_size(rng))
    elif name in ('jump', 'occluded_jump'):
        lateral = _uniform(rng, 'jump_lateral_m')
        jump_frame = int(round(_uniform(rng, 'jump_fraction') * duration))
        speed = _uniform(rng, 'jump_speed_mps')
        offset = _uniform(rng, 'corridor_offset_m')
        arrival = jump_frame / frame_rate + (lateral - offset) / speed
        size = _deer_size(rng)
        forward = ego.speed * arrival
        deer = DeerMotionModel(JUMP, (forward, side * lateral), (0.0, 0.0), jump_frame,
                               (0.0, -side * speed), size=size)
        if name == 'occluded_jump':
            grass = _uniform(rng, 'grass_height_fraction') * size[1]
            occluders = (Occluder((forward - 3.0, forward + 3.0),
                                  (side * lateral - 2.0, side * lateral + 2.0), grass),)
    elif name == 'curve_ego':
        ego = EgoMotion(TURN, ego.speed, _uniform(rng, 'turn_yaw_rate_rps') * side)
        # beside the curved road, where the vehicle will be after the sequence
        pose = ego.pose_at(length_s + float(rng.uniform(1.0, 3.0)))
        lateral = (1.0 if rng.uniform() < 0.5 else -1.0) * _uniform(rng, 'stationary_lateral_m')
        x = pose.x - math.sin(pose.yaw) * lateral
        y = pose.y + math.cos(pose.yaw) * lateral
        if rng.uniform() < 0.5:
            deer = DeerMotionModel(STATIONARY, (x, y), size=_deer_size(rng))
        else:
            speed = -math.copysign(_uniform(rng, 'crossing_speed_mps'), lateral)
            deer = DeerMotionModel(CONSTANT_VELOCITY, (x, y),
                                   (-math.sin(pose.yaw) * speed, math.cos(pose.yaw) * speed),
                                   size=_deer_size(rng))
    else:
        raise ValueError('unknown suite %r, expected one of: %s' % (name, ', '.join(SUITES)))

    return Scenario('%s_%04d' % (name, index), (deer,), ego, duration=duration,
                    occluders=occluders, seed=int(rng.integers(0, 2 ** 31 - 1)),
                    frame_rate=frame_rate, set_id='set%d' % (index % n_sets))


def make_suite(name, count, seed, duration=120, frame_rate=30.0, n_sets=5):
    """``count`` scenarios of the named suite, drawn from ``SUITE_RANGES``.
    The same ``(name, count, seed)`` always gives the same list.
    """
    if name not in SUITES:
        raise ValueError('unknown suite %r, expected one of: %s' % (name, ', '.join(SUITES)))
    if count < 1:
        raise ValueError('count must be at least 1, not %r' % (count,))
    rng = np.random.default_rng([seed, SUITES.index(name)])
    return [_scenario(name, i, rng, duration, frame_rate, n_sets) for i in range(count)]


def write_suite(name, count, seed, out_dir, duration=120, n_sets=5):
    """Render a whole suite below ``out_dir``, one directory per scenario."""
    scenarios = make_suite(name, count, seed, duration=duration, n_sets=n_sets)
    for scenario in scenarios:
        target = path.join(out_dir, scenario.name)
        log.info('Rendering %s (%d frames)', scenario.name, scenario.duration)
        rendering = generate(scenario, target)
        for warning in rendering.warnings:
            log.info('  %s', warning)
    return scenarios
