"""
Domain types and on-disk formats shared by every stage.

A dataset is a directory holding one sub-directory per sequence, laid out
like this:

    <sequence>/manifest.json
    <sequence>/frames/000000.png
    <sequence>/annotations.jsonl
    <sequence>/odometry.csv
    <sequence>/flow/000000.bin       (optional, motion from frame i to i+1)
    <sequence>/scenario.json         (synthetic sequences only)

Annotations are JSON lines, one object per frame:

    {"sequence_id": "crossing_0001", "frame_index": 0, "timestamp_s": 0.0,
     "boxes": [{"track_id": "deer0", "cx": 320.0, "cy": 240.0, "w": 64.0,
                "h": 48.0, "label": "deer", "risk": "high"}]}

Odometry is a CSV file with the header
``frame_index,x_m,y_m,yaw_rad,speed_mps``.
"""
from collections import namedtuple
from dataclasses import dataclass
import csv
import glob
import json
import math
import os
from os import path
import re

import cv2
import numpy as np


__all__ = (
    'BoundingBox', 'NormalizedBox', 'BoxAnnotation', 'FrameRecord',
    'EgoPose', 'WindowConfig', 'Manifest', 'Sequence', 'ObservationWindow',
    'Fold', 'DataError', 'FormatError', 'ConsistencyError',
    'MalformedAnnotationError', 'normalize_box', 'denormalize_box',
    'load_sequence', 'open_sequence', 'find_sequences',
    'make_leave_one_out_folds', 'slide_windows', 'read_annotations',
    'write_annotations', 'read_odometry', 'write_odometry', 'read_manifest',
    'write_manifest', 'wrap_angle',
)


IMAGE_WIDTH = 640
IMAGE_HEIGHT = 480
FRAME_RATE = 30.0
HFOV_DEG = 50.0

HIGH = 'high'
LOW = 'low'
RISK_LEVELS = (HIGH, LOW)

ODOMETRY_HEADER = ['frame_index', 'x_m', 'y_m', 'yaw_rad', 'speed_mps']
FRAME_NAME_RE = re.compile(r'^(\d{6})\.png$')


class DataError(Exception):
    pass


class FormatError(DataError):
    pass


class ConsistencyError(DataError):
    pass


class MalformedAnnotationError(DataError, ValueError):
    pass


def wrap_angle(angle):
    """Wrap an angle in radians to (-pi, pi]."""
    wrapped = math.remainder(angle, 2 * math.pi)
    if wrapped == -math.pi:
        return math.pi
    return wrapped


@dataclass(frozen=True)
class BoundingBox:
    """An axis-aligned box in pixels, given by center and size."""

    cx: float
    cy: float
    w: float
    h: float

    @property
    def left(self):
        return self.cx - self.w / 2.0

    @property
    def right(self):
        return self.cx + self.w / 2.0

    @property
    def top(self):
        return self.cy - self.h / 2.0

    @property
    def bottom(self):
        return self.cy + self.h / 2.0

    @property
    def area(self):
        return self.w * self.h

    @classmethod
    def from_corners(cls, left, top, right, bottom):
        return cls((left + right) / 2.0, (top + bottom) / 2.0,
                   right - left, bottom - top)

    def check(self, width, height):
        """Raise ``MalformedAnnotationError`` unless the box has a positive
        size and its center lies inside a ``width`` x ``height`` image.
        """
        values = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise MalformedAnnotationError('box has non-finite values: %r' % (values,))
        if self.w <= 0 or self.h <= 0:
            raise MalformedAnnotationError('box has no area: %r' % (values,))
        if not (0 <= self.cx <= width and 0 <= self.cy <= height):
            raise MalformedAnnotationError(
                'box center (%g, %g) outside %dx%d image' % (
                    self.cx, self.cy, width, height))
        return self

    def clamp(self, width, height):
        """Return the box cut to the image. Boxes whose center is outside
        the image are rejected rather than clamped.
        """
        self.check(width, height)
        if (self.left >= 0 and self.top >= 0 and self.right <= width
                and self.bottom <= height):
            return self
        return BoundingBox.from_corners(
            max(self.left, 0.0), max(self.top, 0.0),
            min(self.right, float(width)), min(self.bottom, float(height)))


@dataclass(frozen=True)
class NormalizedBox:
    """A box in units of the image size."""

    cx: float
    cy: float
    w: float
    h: float

    def as_tuple(self):
        return (self.cx, self.cy, self.w, self.h)


@dataclass(frozen=True)
class BoxAnnotation:
    track_id: str
    box: BoundingBox
    risk: str = HIGH
    label: str = 'deer'


@dataclass(frozen=True)
class FrameRecord:
    sequence_id: str
    frame_index: int
    timestamp: float
    boxes: tuple = ()

    def find(self, track_id):
        for annotation in self.boxes:
            if annotation.track_id == track_id:
                return annotation
        return None


@dataclass(frozen=True)
class EgoPose:
    """Planar vehicle pose in the world frame (x forward at start, y left)."""

    x: float
    y: float
    yaw: float
    speed: float = 0.0

    def check(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.yaw, self.speed)):
            raise ValueError('pose has non-finite values: %r' % (self,))
        if self.speed < 0:
            raise ValueError('pose has negative speed: %r' % (self,))
        return self


@dataclass(frozen=True)
class WindowConfig:
    tau: int = 60
    horizon: int = 30
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        if self.tau < 2:
            raise ValueError('tau must be at least 2, not %r' % self.tau)
        if self.horizon < 1:
            raise ValueError('horizon must be at least 1, not %r' % self.horizon)
        if not self.frame_rate > 0:
            raise ValueError('frame_rate must be positive, not %r' % self.frame_rate)


@dataclass(frozen=True)
class Manifest:
    set_id: str
    sequence_id: str
    width: int = IMAGE_WIDTH
    height: int = IMAGE_HEIGHT
    frame_rate: float = FRAME_RATE
    hfov: float = HFOV_DEG
    mount_height: float = 0.8

    def to_dict(self):
        return {
            'set_id': self.set_id, 'sequence_id': self.sequence_id,
            'image_width': self.width, 'image_height': self.height,
            'frame_rate': self.frame_rate, 'hfov_deg': self.hfov,
            'mount_height_m': self.mount_height,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(set_id=str(data['set_id']),
                       sequence_id=str(data.get('sequence_id', data['set_id'])),
                       width=int(data['image_width']),
                       height=int(data['image_height']),
                       frame_rate=float(data.get('frame_rate', FRAME_RATE)),
                       hfov=float(data.get('hfov_deg', HFOV_DEG)),
                       mount_height=float(data.get('mount_height_m', 0.8)))
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError('invalid manifest: %s' % e)


Fold = namedtuple('Fold', 'train test')


def normalize_box(box, image_width, image_height):
    """Express ``box`` in units of the image size. Boxes reaching over the
    image border are clamped first.
    """
    if image_width <= 0 or image_height <= 0:
        raise ValueError('image dimensions must be positive, got %rx%r' % (
            image_width, image_height))
    box = box.clamp(image_width, image_height)
    return NormalizedBox(box.cx / image_width, box.cy / image_height,
                         box.w / image_width, box.h / image_height)


def denormalize_box(nbox, image_width, image_height):
    if image_width <= 0 or image_height <= 0:
        raise ValueError('image dimensions must be positive, got %rx%r' % (
            image_width, image_height))
    return BoundingBox(nbox.cx * image_width, nbox.cy * image_height,
                       nbox.w * image_width, nbox.h * image_height)


def _check_contiguous(indices, what):
    """Frame indices must increase by one; name the first gap otherwise."""
    for previous, current in zip(indices, indices[1:]):
        if current == previous:
            raise FormatError('%s: duplicate frame %d' % (what, current))
        if current != previous + 1:
            raise FormatError('%s: missing frame %d' % (what, previous + 1))


def read_annotations(filename, width=IMAGE_WIDTH, height=IMAGE_HEIGHT,
                     frame_rate=FRAME_RATE):
    """Read an annotation file into a list of ``FrameRecord``, sorted by
    frame index.
    """
    records = []
    with open(filename, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                boxes = []
                for item in data.get('boxes', []):
                    risk = item.get('risk', HIGH)
                    if risk not in RISK_LEVELS:
                        raise ValueError('unknown risk level %r' % risk)
                    box = BoundingBox(float(item['cx']), float(item['cy']),
                                      float(item['w']), float(item['h']))
                    boxes.append(BoxAnnotation(
                        str(item['track_id']), box.clamp(width, height),
                        risk, item.get('label', 'deer')))
                record = FrameRecord(str(data['sequence_id']),
                                     int(data['frame_index']),
                                     float(data['timestamp_s']), tuple(boxes))
            except MalformedAnnotationError as e:
                raise MalformedAnnotationError('%s:%d: %s' % (filename, lineno, e))
            except (KeyError, TypeError, ValueError) as e:
                raise FormatError('%s:%d: cannot parse annotation: %s' % (
                    filename, lineno, e))
            records.append(record)

    records.sort(key=lambda r: r.frame_index)
    _check_contiguous([r.frame_index for r in records], filename)
    if records:
        first = records[0]
        for record in records:
            expected = first.timestamp + (record.frame_index - first.frame_index) / frame_rate
            if abs(record.timestamp - expected) > 1e-6:
                raise FormatError('%s: frame %d has timestamp %r, expected %r' % (
                    filename, record.frame_index, record.timestamp, expected))
    return records


def write_annotations(records, filename):
    with open(filename, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps({
                'sequence_id': record.sequence_id,
                'frame_index': record.frame_index,
                'timestamp_s': record.timestamp,
                'boxes': [{
                    'track_id': a.track_id, 'cx': a.box.cx, 'cy': a.box.cy,
                    'w': a.box.w, 'h': a.box.h, 'label': a.label,
                    'risk': a.risk} for a in record.boxes],
            }, sort_keys=True))
            f.write('\n')


def read_odometry(filename):
    """Return a list of ``(frame_index, EgoPose)`` pairs."""
    rows = []
    with open(filename, 'r', newline='') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ODOMETRY_HEADER:
            raise FormatError('%s:1: expected header %s, got %s' % (
                filename, ','.join(ODOMETRY_HEADER), ','.join(header or [])))
        for row in reader:
            if not row:
                continue
            try:
                if len(row) != len(ODOMETRY_HEADER):
                    raise ValueError('expected %d columns, got %d' % (
                        len(ODOMETRY_HEADER), len(row)))
                pose = EgoPose(float(row[1]), float(row[2]), float(row[3]),
                               float(row[4])).check()
                rows.append((int(row[0]), pose))
            except ValueError as e:
                raise FormatError('%s:%d: cannot parse odometry: %s' % (
                    filename, reader.line_num, e))
    rows.sort(key=lambda r: r[0])
    _check_contiguous([r[0] for r in rows], filename)
    return rows


def write_odometry(poses, filename, first_index=0):
    with open(filename, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(ODOMETRY_HEADER)
        for i, pose in enumerate(poses):
            writer.writerow([first_index + i, repr(pose.x), repr(pose.y),
                             repr(pose.yaw), repr(pose.speed)])


def read_manifest(filename):
    try:
        with open(filename, 'r', encoding='utf-8') as f:
            return Manifest.from_dict(json.load(f))
    except ValueError as e:
        raise FormatError('%s: %s' % (filename, e))


def write_manifest(manifest, filename):
    with open(filename, 'w', encoding='utf-8') as f:
        json.dump(manifest.to_dict(), f, sort_keys=True, indent=2)
        f.write('\n')


def list_frames(frames_dir):
    """Return the frame files in ``frames_dir`` ordered by index, making
    sure there are no gaps.
    """
    indexed = []
    for name in os.listdir(frames_dir):
        match = FRAME_NAME_RE.match(name)
        if match:
            indexed.append((int(match.group(1)), path.join(frames_dir, name)))
    indexed.sort()
    _check_contiguous([i for i, _ in indexed], frames_dir)
    return indexed


def load_sequence(frames_dir, annotations_file, odometry_file,
                  width=IMAGE_WIDTH, height=IMAGE_HEIGHT, frame_rate=FRAME_RATE):
    """Load and cross-check the three parts of a sequence.

    Returns ``(frame paths, records, poses)``, all aligned by position.
    """
    frames = list_frames(frames_dir)
    records = read_annotations(annotations_file, width, height, frame_rate)
    odometry = read_odometry(odometry_file)

    counts = (len(frames), len(records), len(odometry))
    if len(set(counts)) != 1:
        raise ConsistencyError(
            'frame/annotation/odometry counts differ: %d frames, %d '
            'annotation records, %d odometry rows' % counts)
    for (fi, _), record, (oi, _) in zip(frames, records, odometry):
        if not fi == record.frame_index == oi:
            raise ConsistencyError(
                'frame indices are not aligned: frame %d, annotation %d, '
                'odometry %d' % (fi, record.frame_index, oi))
    return [p for _, p in frames], records, [pose for _, pose in odometry]


def read_frame(filename):
    """Read an 8 or 16-bit single channel PNG into a float32 array in [0, 1]."""
    image = cv2.imread(filename, cv2.IMREAD_UNCHANGED)
    if image is None:
        raise FormatError('%s: cannot read image' % filename)
    if image.ndim != 2:
        raise FormatError('%s: expected a single channel image' % filename)
    scale = float(np.iinfo(image.dtype).max)
    return image.astype(np.float32) / scale


class Sequence(object):
    """A loaded sequence: manifest, annotation records and odometry, aligned
    by position, with frames read from disk on demand.

    ``frames`` may be ``None`` for sequences that exist only as annotations
    (tests, or a pipeline fed with detections only).
    """

    def __init__(self, manifest, records, poses, frames=None, flow_dir=None,
                 root=None, images=None):
        if len(records) != len(poses):
            raise ConsistencyError('%d records but %d poses' % (
                len(records), len(poses)))
        self.manifest = manifest
        self.records = list(records)
        self.poses = list(poses)
        self.frames = frames
        self.images = images
        self.flow_dir = flow_dir
        self.root = root
        self._positions = dict(
            (r.frame_index, i) for i, r in enumerate(self.records))

    def __len__(self):
        return len(self.records)

    @property
    def sequence_id(self):
        return self.manifest.sequence_id

    @property
    def set_id(self):
        return self.manifest.set_id

    @property
    def frame_indices(self):
        return [r.frame_index for r in self.records]

    def position(self, frame_index):
        return self._positions[frame_index]

    def frame(self, frame_index):
        """The image of the given frame as float32 in [0, 1]."""
        position = self.position(frame_index)
        if self.images is not None:
            return self.images[position]
        if self.frames is None:
            raise DataError('sequence %s has no frames' % self.sequence_id)
        return read_frame(self.frames[position])

    def pose(self, frame_index):
        return self.poses[self.position(frame_index)]

    def record(self, frame_index):
        return self.records[self.position(frame_index)]

    def track_ids(self):
        ids = set()
        for record in self.records:
            ids.update(a.track_id for a in record.boxes)
        return sorted(ids)

    def flow_path(self, frame_index):
        if not self.flow_dir:
            raise DataError('sequence %s has no ground truth flow' % self.sequence_id)
        return path.join(self.flow_dir, '%06d.bin' % frame_index)


def open_sequence(directory):
    manifest = read_manifest(path.join(directory, 'manifest.json'))
    frames, records, poses = load_sequence(
        path.join(directory, 'frames'),
        path.join(directory, 'annotations.jsonl'),
        path.join(directory, 'odometry.csv'),
        manifest.width, manifest.height, manifest.frame_rate)
    flow_dir = path.join(directory, 'flow')
    return Sequence(manifest, records, poses, frames,
                    flow_dir if path.isdir(flow_dir) else None, directory)


def find_sequences(root):
    """All sequence directories below ``root``, sorted by name."""
    if path.isfile(path.join(root, 'manifest.json')):
        return [root]
    found = sorted(path.dirname(p) for p in
                   glob.glob(path.join(root, '*', 'manifest.json')))
    if not found:
        raise DataError('no sequences found in %s' % root)
    return found


def make_leave_one_out_folds(set_ids):
    """One fold per set: that set is tested, all others are trained on."""
    set_ids = list(set_ids)
    if len(set(set_ids)) != len(set_ids):
        raise ValueError('duplicate set identifiers: %s' % ', '.join(
            sorted(set(s for s in set_ids if set_ids.count(s) > 1))))
    if len(set_ids) < 2:
        raise ValueError('need at least two sets for leave-one-out, got %d' % len(set_ids))
    return [Fold(tuple(s for s in set_ids if s != held_out), (held_out,))
            for held_out in set_ids]


class ObservationWindow(object):
    """A view of ``tau`` observed and ``horizon`` future frames of one
    track in a sequence, ending the observation at frame ``t0``.

    The window holds a reference to the sequence; boxes and poses are looked
    up on access. The pixel streams (pooled flow, context frames) are built
    by ``deerwatch.features``.
    """

    __slots__ = ('sequence', 'track_id', 't0', 'config')

    def __init__(self, sequence, track_id, t0, config):
        self.sequence = sequence
        self.track_id = track_id
        self.t0 = t0
        self.config = config

    def __repr__(self):
        return '<ObservationWindow %s/%s t0=%d>' % (
            self.sequence.sequence_id, self.track_id, self.t0)

    @property
    def past_frames(self):
        return list(range(self.t0 - self.config.tau + 1, self.t0 + 1))

    @property
    def future_frames(self):
        return list(range(self.t0 + 1, self.t0 + self.config.horizon + 1))

    def _boxes(self, frames):
        return [self.sequence.record(i).find(self.track_id).box for i in frames]

    @property
    def past_pixel_boxes(self):
        return self._boxes(self.past_frames)

    @property
    def future_pixel_boxes(self):
        return self._boxes(self.future_frames)

    @property
    def past_boxes(self):
        m = self.sequence.manifest
        return [normalize_box(b, m.width, m.height) for b in self.past_pixel_boxes]

    @property
    def future_boxes(self):
        m = self.sequence.manifest
        return [normalize_box(b, m.width, m.height) for b in self.future_pixel_boxes]

    @property
    def ego_history(self):
        return [self.sequence.pose(i) for i in self.past_frames]

    @property
    def risk(self):
        return self.sequence.record(self.t0).find(self.track_id).risk


def slide_windows(sequence, config):
    """Every window of ``sequence`` with a full history and future.

    A track contributes a window at ``t0`` when it is annotated in each
    frame of ``[t0 - tau + 1, t0 + horizon]``.
    """
    span = config.tau + config.horizon
    n = len(sequence)
    if n < span:
        return []

    windows = []
    for track_id in sequence.track_ids():
        present = np.array([r.find(track_id) is not None for r in sequence.records],
                           dtype=np.int64)
        covered = np.concatenate(([0], np.cumsum(present)))
        for start in range(0, n - span + 1):
            if covered[start + span] - covered[start] == span:
                t0 = sequence.records[start + config.tau - 1].frame_index
                windows.append(ObservationWindow(sequence, track_id, t0, config))
    windows.sort(key=lambda w: (w.t0, w.track_id))
    return windows
