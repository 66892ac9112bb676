"""
The tracking loop: detect, track, forecast the risky deer, decide.

Every frame produces events, written as one JSON object per line:

    {"type": "detection", "frame": 12, "box": [cx, cy, w, h],
     "confidence": 1.0, "risk_score": 1.0, "risk": "high"}
    {"type": "track", "frame": 12, "track_id": "track0",
     "status": "new" | "matched" | "closed", "box": [cx, cy, w, h]}
    {"type": "forecast", "frame": 12, "track_id": "track0",
     "samples": [[[cx, cy, w, h], ...], ...]}
    {"type": "decision", "frame": 12, "track_id": "track0",
     "ttc": 1.53 | null, "warn": true}

Boxes of detection and track events are in pixels; forecast samples are
normalized by the image size.
"""
from collections import deque
import json

import numpy as np
import torch

from .config import ConfigError
from .core import HIGH, NormalizedBox, WindowConfig, denormalize_box
from .egomotion import EXTERNAL, predict_future, read_external_forecast
from .features import FeatureExtractor
from .metrics import decide, median_ttc, ttc_from_boxes
from .perception import iou, make_detector
from .synth import CameraIntrinsics
from .trajnet import collate, load_model, predict


__all__ = ('Track', 'Pipeline', 'associate', 'greedy_match',
           'ModelForecaster', 'ExtrapolateForecaster', 'write_events',
           'read_events', 'warning_lead')


class Track(object):
    """A deer followed across frames. Only the latest ``history`` frames,
    boxes and risks are kept; ``None`` keeps them all.
    """

    def __init__(self, track_id, frame_index, detection, history=None):
        self.track_id = track_id
        self.frames = deque([frame_index], maxlen=history)
        self.boxes = deque([detection.box], maxlen=history)
        self.risks = deque([detection.risk], maxlen=history)
        self.age = 1
        self.misses = 0
        self.last_prediction = None

    def __repr__(self):
        return '<Track %s, %d frames>' % (self.track_id, len(self.frames))

    @property
    def box(self):
        return self.boxes[-1]

    @property
    def risk(self):
        return self.risks[-1]

    def update(self, frame_index, detection):
        if frame_index <= self.frames[-1]:
            raise ValueError('track %s already has frame %d' % (
                self.track_id, frame_index))
        self.frames.append(frame_index)
        self.boxes.append(detection.box)
        self.risks.append(detection.risk)
        self.age += 1
        self.misses = 0

    def miss(self):
        self.age += 1
        self.misses += 1

    def contiguous(self):
        """Number of consecutive frames observed up to the latest one."""
        frames = list(self.frames)
        count = 1
        for a, b in zip(frames[-2::-1], frames[::-1]):
            if b - a != 1:
                break
            count += 1
        return count


def greedy_match(overlaps, threshold):
    """Pairs ``(row, column)`` picked by descending value, each row and
    column at most once, values below ``threshold`` never.
    """
    overlaps = np.asarray(overlaps, dtype=np.float64)
    if overlaps.size == 0:
        return []
    order = np.argsort(-overlaps, axis=None, kind='stable')
    rows, columns = set(), set()
    pairs = []
    for flat in order:
        i, j = np.unravel_index(flat, overlaps.shape)
        if overlaps[i, j] < threshold:
            break
        if i in rows or j in columns:
            continue
        rows.add(i)
        columns.add(j)
        pairs.append((int(i), int(j)))
    return pairs


def associate(tracks, detections, iou_threshold=0.3, max_misses=5):
    """Match ``detections`` of one frame to open ``tracks``.

    Returns ``(matched, new, closed)``: ``(track, detection)`` pairs, the
    detections that start new tracks, and the tracks which, missing once
    more, exceed ``max_misses``. Nothing is modified.
    """
    overlaps = [[iou(t.box, d.box) for d in detections] for t in tracks]
    pairs = greedy_match(overlaps, iou_threshold) if tracks and detections else []
    matched = [(tracks[i], detections[j]) for i, j in pairs]
    used_tracks = set(i for i, _ in pairs)
    used_detections = set(j for _, j in pairs)
    new = [d for j, d in enumerate(detections) if j not in used_detections]
    closed = [t for i, t in enumerate(tracks)
              if i not in used_tracks and t.misses + 1 > max_misses]
    return matched, new, closed


class ModelForecaster(object):
    """Forecasts with a trained trajectory network."""

    def __init__(self, model, sequence, flow_source, ego_predictor,
                 external=None, seed=0):
        c = model.config
        self.model = model
        self.window_config = WindowConfig(c.tau, c.horizon, c.frame_rate)
        self.extractor = FeatureExtractor(sequence, c, flow_source, ego_predictor,
                                          external)
        self.generator = torch.Generator().manual_seed(seed)

    def forecast(self, frames, boxes):
        sample = self.extractor.extract(frames, boxes)
        batch = collate([sample], self.model.config.dtype)
        return predict(self.model, batch, self.generator)[0]

    def forget(self, before):
        self.extractor.forget(before)


class ExtrapolateForecaster(object):
    """Moves the last box on at the mean pixel velocity of the observation
    window. A single sample, no network.
    """

    def __init__(self, window_config, width, height):
        self.window_config = window_config
        self.width = width
        self.height = height

    def forecast(self, frames, boxes):
        observed = np.array([(b.cx, b.cy, b.w, b.h) for b in boxes], dtype=np.float64)
        velocity = (observed[-1] - observed[0]) / (len(observed) - 1)
        steps = np.arange(1, self.window_config.horizon + 1)[:, None]
        future = observed[-1] + steps * velocity
        future[:, 2:] = np.maximum(future[:, 2:], 1.0)
        scale = np.array([self.width, self.height, self.width, self.height])
        return (future / scale)[None]

    def forget(self, before):
        pass


def _box_list(box):
    return [round(box.cx, 4), round(box.cy, 4), round(box.w, 4), round(box.h, 4)]


class Pipeline(object):
    """Runs the tracking loop over one sequence.

    ``forecaster`` and ``detector`` are built from ``config`` unless given.
    A ``window_config`` that disagrees with the forecaster is an error, as
    is a forecaster built for another frame rate than the sequence.
    """

    def __init__(self, config, sequence, log, window_config=None,
                 forecaster=None, detector=None):
        self.config = config
        self.sequence = sequence
        self.log = log
        m = sequence.manifest
        self.camera = CameraIntrinsics(m.width, m.height, m.hfov, m.mount_height)

        self.external = None
        if config.ego_predictor == EXTERNAL:
            self.external = read_external_forecast(config.external_forecast)

        if forecaster is None:
            forecaster = self._make_forecaster(window_config)
        if window_config is not None and window_config != forecaster.window_config:
            raise ConfigError(
                'forecaster works on tau=%d, horizon=%d at %g fps, '
                'asked for tau=%d, horizon=%d at %g fps' % (
                    forecaster.window_config.tau, forecaster.window_config.horizon,
                    forecaster.window_config.frame_rate, window_config.tau,
                    window_config.horizon, window_config.frame_rate))
        if forecaster.window_config.frame_rate != m.frame_rate:
            raise ConfigError('forecaster expects %g fps, sequence %s has %g fps' % (
                forecaster.window_config.frame_rate, m.sequence_id, m.frame_rate))
        self.forecaster = forecaster
        self.window_config = forecaster.window_config

        if detector is None:
            detector = make_detector(config.detector, m.width, m.height,
                                     records=sequence.records,
                                     checkpoint=config.detector_ckpt,
                                     risk_threshold=config.risk_threshold)
        self.detector = detector

        self.tracks = []
        self._next_id = 0

    def _make_forecaster(self, window_config):
        c = self.config
        m = self.sequence.manifest
        if c.forecaster == 'extrapolate':
            return ExtrapolateForecaster(window_config or WindowConfig(frame_rate=m.frame_rate),
                                         m.width, m.height)
        model = load_model(c.ckpt)
        return ModelForecaster(model, self.sequence, c.flow_source, c.ego_predictor,
                               self.external, c.seed)

    def _frame(self, frame_index):
        if self.sequence.frames is None and self.sequence.images is None:
            return None
        return self.sequence.frame(frame_index)

    def _open(self, frame_index, detection):
        track = Track('track%d' % self._next_id, frame_index, detection,
                      history=self.window_config.tau)
        self._next_id += 1
        self.tracks.append(track)
        return track

    def _ready(self, track, frame_index):
        if track.frames[-1] != frame_index or track.risk != HIGH:
            return False
        if track.contiguous() < self.window_config.tau:
            return False
        last = track.last_prediction
        return last is None or frame_index - last >= self.config.predict_stride

    def _ego_forecast(self, frames):
        history = [self.sequence.pose(k) for k in frames]
        return predict_future(history, self.window_config.horizon,
                              self.config.ego_predictor, external=self.external,
                              t0=frames[-1])

    def _predict(self, track, frame_index):
        tau = self.window_config.tau
        frames, boxes = list(track.frames)[-tau:], list(track.boxes)[-tau:]
        samples = self.forecaster.forecast(frames, boxes)
        ego = self._ego_forecast(frames)
        m = self.sequence.manifest
        values = []
        for sample in samples:
            pixel = [denormalize_box(NormalizedBox(*map(float, b)), m.width, m.height)
                     for b in sample]
            values.append(ttc_from_boxes(
                pixel, self.camera, ego, self.config.corridor_half_width,
                self.window_config.frame_rate, self.config.vehicle_length))
        decision = decide(median_ttc(values), self.config.ttc_threshold,
                          track.track_id, frame_index)
        track.last_prediction = frame_index
        if decision.warn:
            self.log.info('frame %d: warning for %s, collision in %.2fs',
                          frame_index, track.track_id, decision.ttc)
        forecast = {'type': 'forecast', 'frame': frame_index,
                    'track_id': track.track_id,
                    'samples': np.round(np.asarray(samples, dtype=np.float64), 6).tolist()}
        return [forecast, {'type': 'decision', 'frame': frame_index,
                           'track_id': track.track_id, 'ttc': decision.ttc,
                           'warn': decision.warn}]

    def process(self, frame_index):
        """Run one frame; returns its events."""
        frame = self._frame(frame_index)
        pose = self.sequence.pose(frame_index)
        detections = self.detector.detect(frame, frame_index, pose)
        events = [{'type': 'detection', 'frame': frame_index, 'box': _box_list(d.box),
                   'confidence': d.confidence, 'risk_score': d.risk_score,
                   'risk': d.risk} for d in detections]

        matched, new, closed = associate(self.tracks, detections,
                                         self.config.iou_threshold,
                                         self.config.max_misses)
        for track, detection in matched:
            track.update(frame_index, detection)
            events.append({'type': 'track', 'frame': frame_index,
                           'track_id': track.track_id, 'status': 'matched',
                           'box': _box_list(track.box)})
        matched_tracks = set(id(t) for t, _ in matched)
        for track in self.tracks:
            if id(track) not in matched_tracks:
                track.miss()
        for track in closed:
            self.tracks.remove(track)
            self.log.debug('frame %d: closed %s', frame_index, track.track_id)
            events.append({'type': 'track', 'frame': frame_index,
                           'track_id': track.track_id, 'status': 'closed',
                           'box': _box_list(track.box)})
        for detection in new:
            track = self._open(frame_index, detection)
            self.log.debug('frame %d: new %s', frame_index, track.track_id)
            events.append({'type': 'track', 'frame': frame_index,
                           'track_id': track.track_id, 'status': 'new',
                           'box': _box_list(track.box)})

        for track in self.tracks:
            if self._ready(track, frame_index):
                events.extend(self._predict(track, frame_index))

        self.forecaster.forget(frame_index - self.window_config.tau)
        self.log.debug('frame %d: %d detections, %d tracks', frame_index,
                       len(detections), len(self.tracks))
        return events

    def run(self):
        events = []
        for frame_index in self.sequence.frame_indices:
            events.extend(self.process(frame_index))
        warnings = sum(1 for e in events if e['type'] == 'decision' and e['warn'])
        self.log.info('%s: %d frames, %d tracks, %d warnings', self.sequence.sequence_id,
                      len(self.sequence), self._next_id, warnings)
        return events


def write_events(events, filename):
    with open(filename, 'w') as f:
        for event in events:
            f.write(json.dumps(event, sort_keys=True))
            f.write('\n')


def read_events(filename):
    with open(filename, 'r') as f:
        return [json.loads(line) for line in f if line.strip()]


def warning_lead(events, entry_frame, frame_rate):
    """Seconds between the first warning and ``entry_frame``; ``None`` if
    there was no warning, negative if it came late.
    """
    for event in events:
        if event['type'] == 'decision' and event['warn']:
            return (entry_frame - event['frame']) / float(frame_rate)
    return None
