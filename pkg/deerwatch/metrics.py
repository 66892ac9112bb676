"""
How good are the forecasts, and how soon would we hit the deer?

ADE and FDE compare box centers in normalized image coordinates. Time to
collision works on the ground plane: forecast boxes are placed on the flat
ground through their bottom edge, and the deer counts as hit once it is
inside the corridor swept by the vehicle (``|lateral| <= half_width``) and
between the vehicle front (where the camera sits) and ``vehicle_length``
behind it.
"""
from dataclasses import dataclass, field
import csv
import math

import numpy as np
import torch

from .core import EgoPose, NormalizedBox, denormalize_box
from .egomotion import compose_pose, rollout
from .trajnet import collate, predict


__all__ = ('ade', 'fde', 'best_sample_eval', 'mean_sample_eval', 'ttc',
           'ttc_from_boxes', 'box_to_ground', 'decide', 'RiskDecision',
           'EvalReport', 'evaluate', 'write_report', 'UnsupportedModeError',
           'REPORT_HEADER')


REPORT_HEADER = ['preset', 'horizon_s', 'ade', 'fde', 'min_ade', 'min_fde', 'n_windows']


class UnsupportedModeError(Exception):
    pass


def _centers(points):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] < 2:
        raise ValueError('expected a sequence of centers, got shape %s' % (points.shape,))
    return points[:, :2]


def _distances(predicted, truth):
    predicted, truth = _centers(predicted), _centers(truth)
    if len(predicted) != len(truth):
        raise ValueError('predicted %d frames but have %d ground truth frames' % (
            len(predicted), len(truth)))
    if not len(predicted):
        raise ValueError('need at least one frame')
    return np.hypot(*(predicted - truth).T)


def ade(predicted, truth):
    """Mean center distance over all frames. Rows may be centers or whole
    boxes; only the first two columns are used.
    """
    return float(_distances(predicted, truth).mean())


def fde(predicted, truth):
    """Center distance at the last frame."""
    return float(_distances(predicted, truth)[-1])


def best_sample_eval(samples, truth):
    """``(min ADE, FDE of that sample)`` over ``samples`` (S, H, >=2)."""
    scores = [(ade(s, truth), fde(s, truth)) for s in samples]
    if not scores:
        raise ValueError('need at least one sample')
    return min(scores, key=lambda score: score[0])


def mean_sample_eval(samples, truth):
    scores = np.array([(ade(s, truth), fde(s, truth)) for s in samples])
    return float(scores[:, 0].mean()), float(scores[:, 1].mean())


def box_to_ground(box, camera):
    """Ground point ``(forward, left)`` in meters below the bottom edge of a
    pixel box, relative to the camera, or ``None`` if the bottom edge is not
    below the horizon.
    """
    cx, cy = camera.center
    below = box.bottom - cy
    if below <= 0:
        return None
    depth = camera.focal * camera.mount_height / below
    return depth, -(box.cx - cx) * depth / camera.focal


def ttc(ego_forecast, deer_positions, half_width=1.5, frame_rate=30.0,
        vehicle_length=4.5):
    """Seconds until the deer is inside the vehicle footprint, or ``None``.

    ``deer_positions`` are the deer's ground positions ``(forward, left)``
    at future frames 1..H, in the vehicle frame at the time of the
    forecast; ``ego_forecast`` the vehicle's own steps over those frames.
    """
    poses = rollout(EgoPose(0.0, 0.0, 0.0), ego_forecast)
    if len(poses) < len(deer_positions):
        raise ValueError('ego forecast covers %d frames, deer forecast %d' % (
            len(poses), len(deer_positions)))
    for k, (position, pose) in enumerate(zip(deer_positions, poses), 1):
        if position is None:
            continue
        dx, dy = position[0] - pose.x, position[1] - pose.y
        c, s = math.cos(pose.yaw), math.sin(pose.yaw)
        forward, left = c * dx + s * dy, -s * dx + c * dy
        if abs(left) <= half_width and -vehicle_length <= forward <= 0:
            return k / frame_rate
    return None


def ttc_from_boxes(boxes, camera, ego_forecast, half_width=1.5, frame_rate=30.0,
                   vehicle_length=4.5):
    """TTC of a forecast given as pixel boxes, each seen from the vehicle at
    its own future frame.

    Once a box reaches the bottom of the image the ground contact is no
    longer visible; the deer then moves on at the ground velocity between
    its last two visible positions, or stays put if it was seen only once.
    """
    if camera is None:
        raise UnsupportedModeError('time to collision needs a calibrated camera')
    poses = rollout(EgoPose(0.0, 0.0, 0.0), ego_forecast)
    positions = []
    last, step, visible = None, (0.0, 0.0), False
    for box, pose in zip(boxes, poses):
        ground = box_to_ground(box, camera) if box.bottom < camera.height else None
        if ground is not None:
            point = compose_pose(pose, (ground[0], ground[1], 0.0))
            if visible:
                step = (point.x - last[0], point.y - last[1])
            last = (point.x, point.y)
        elif last is not None:
            last = (last[0] + step[0], last[1] + step[1])
        visible = ground is not None
        positions.append(last)
    return ttc(ego_forecast, positions, half_width, frame_rate, vehicle_length)


@dataclass(frozen=True)
class RiskDecision:
    ttc: float
    warn: bool
    track_id: str = None
    t0: int = None


def decide(ttc_value, threshold=2.0, track_id=None, t0=None):
    """Warn when a collision is expected within ``threshold`` seconds."""
    return RiskDecision(ttc_value, ttc_value is not None and ttc_value <= threshold,
                        track_id, t0)


def median_ttc(values):
    """Median over samples, counting samples without a collision as never."""
    if not values:
        return None
    value = float(np.median([math.inf if v is None else v for v in values]))
    return None if math.isinf(value) else value


@dataclass
class EvalReport:
    preset: str
    horizon_s: float
    min_ade: list = field(default_factory=list)
    min_fde: list = field(default_factory=list)
    mean_ade: list = field(default_factory=list)
    mean_fde: list = field(default_factory=list)

    @property
    def n_windows(self):
        return len(self.min_ade)

    def add(self, samples, truth):
        best = best_sample_eval(samples, truth)
        mean = mean_sample_eval(samples, truth)
        self.min_ade.append(best[0])
        self.min_fde.append(best[1])
        self.mean_ade.append(mean[0])
        self.mean_fde.append(mean[1])

    def extend(self, other):
        for name in ('min_ade', 'min_fde', 'mean_ade', 'mean_fde'):
            getattr(self, name).extend(getattr(other, name))

    def row(self):
        def avg(values):
            return float(np.mean(values)) if values else float('nan')
        return [self.preset, self.horizon_s, avg(self.mean_ade), avg(self.mean_fde),
                avg(self.min_ade), avg(self.min_fde), self.n_windows]


def evaluate(model, samples, horizon, seed=0, batch_size=32, preset=None):
    """Forecast each sample (``WindowSample`` with ``future``) over
    ``horizon`` frames and collect ADE/FDE.
    """
    config = model.config
    report = EvalReport(preset or config.preset, horizon / config.frame_rate)
    generator = torch.Generator().manual_seed(seed)
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        batch = collate(chunk, config.dtype)
        forecast = predict(model, batch, generator, horizon=horizon)
        for sample, samples_ in zip(chunk, forecast):
            report.add(samples_, sample.future)
    return report


def write_report(reports, filename):
    with open(filename, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(REPORT_HEADER)
        for report in reports:
            row = report.row()
            writer.writerow(row[:2] + ['%.6f' % v for v in row[2:6]] + [row[6]])


def denormalized_boxes(samples, width, height):
    """Normalized forecast samples (S, H, 4) as lists of pixel boxes."""
    return [[denormalize_box(NormalizedBox(*map(float, b)), width, height) for b in s]
            for s in samples]
