"""
Turning an observed track into network inputs.
"""
from collections import namedtuple
import logging

import cv2
import numpy as np

from .config import ConfigError
from .core import WindowConfig, normalize_box, slide_windows
from .egomotion import CONSTANT_VELOCITY, normalize_forecast, predict_future
from .flow import (BLOCK_MATCHING, FLOW_SOURCES, GROUND_TRUTH, estimate_flow,
                   gt_flow, roi_pool)


__all__ = ('FeatureExtractor', 'WindowSample', 'window_samples')


log = logging.getLogger(__name__)


WindowSample = namedtuple('WindowSample', 'boxes flow context ego future')


class FeatureExtractor(object):
    """Builds ``WindowSample`` arrays for windows or tracks of one
    sequence. Flow fields and context frames are cached per frame, since
    overlapping windows share most of them.
    """

    def __init__(self, sequence, config, flow_source=GROUND_TRUTH,
                 ego_predictor=CONSTANT_VELOCITY, external=None):
        if flow_source not in FLOW_SOURCES:
            raise ValueError('unknown flow source %r' % (flow_source,))
        self.sequence = sequence
        self.config = config
        self.flow_source = flow_source
        self.ego_predictor = ego_predictor
        self.external = external
        self._flows = {}
        self._contexts = {}

    def flow_field(self, frame_index):
        """Motion from ``frame_index`` to the next frame."""
        if frame_index not in self._flows:
            if self.flow_source == BLOCK_MATCHING:
                self._flows[frame_index] = estimate_flow(
                    self.sequence.frame(frame_index), self.sequence.frame(frame_index + 1))
            else:
                self._flows[frame_index] = gt_flow(self.sequence, frame_index)
        return self._flows[frame_index]

    def context_frame(self, frame_index):
        if frame_index not in self._contexts:
            image = self.sequence.frame(frame_index)
            self._contexts[frame_index] = cv2.resize(
                image, tuple(self.config.context_size), interpolation=cv2.INTER_AREA)
        return self._contexts[frame_index]

    def forget(self, before):
        """Drop cached data of frames before ``before``."""
        for cache in (self._flows, self._contexts):
            for frame_index in [k for k in cache if k < before]:
                del cache[frame_index]

    def extract(self, frames, boxes, future_boxes=None, horizon=None):
        """Inputs for a track seen in ``frames`` (consecutive indices,
        the last one is t0) at pixel ``boxes``.
        """
        c = self.config
        m = self.sequence.manifest
        horizon = horizon or c.horizon
        if len(frames) != c.tau or len(boxes) != c.tau:
            raise ValueError('expected %d observed frames, got %d' % (c.tau, len(frames)))

        normalized = np.array([normalize_box(b, m.width, m.height).as_tuple()
                               for b in boxes], dtype=np.float64)
        flow = None
        if c.use_motion:
            pooled = [roi_pool(self.flow_field(k), box, c.roi_grid).grid
                      for k, box in zip(frames[:-1], boxes[:-1])]
            flow = np.stack(pooled).transpose(0, 3, 1, 2) / c.flow_scale
        context = None
        if c.use_context:
            context = np.stack([self.context_frame(k) for k in frames])[:, None]
        ego = None
        if c.use_ego:
            history = [self.sequence.pose(k) for k in frames]
            forecast = predict_future(history, horizon, self.ego_predictor,
                                      external=self.external, t0=frames[-1])
            ego = normalize_forecast(forecast)
        future = None
        if future_boxes is not None:
            future = np.array([normalize_box(b, m.width, m.height).as_tuple()
                               for b in future_boxes], dtype=np.float64)
        return WindowSample(normalized, flow, context, ego, future)

    def window(self, window, horizon=None):
        """Inputs and ground truth future of an ``ObservationWindow``."""
        return self.extract(window.past_frames, window.past_pixel_boxes,
                            window.future_pixel_boxes, horizon or window.config.horizon)


def window_samples(sequences, config, flow_source=GROUND_TRUTH, horizon=None,
                   ego_predictor=CONSTANT_VELOCITY, external=None):
    """Samples of every window of ``sequences`` with ``config.tau`` observed
    and ``horizon`` (default ``config.horizon``) future frames.

    ``external`` is the forecast table of the external ego predictor,
    keyed by frame index.
    """
    horizon = horizon or config.horizon
    samples = []
    for sequence in sequences:
        if sequence.manifest.frame_rate != config.frame_rate:
            raise ConfigError('model works at %g fps, sequence %s has %g fps' % (
                config.frame_rate, sequence.sequence_id, sequence.manifest.frame_rate))
        windows = slide_windows(sequence, WindowConfig(config.tau, horizon,
                                                       config.frame_rate))
        extractor = FeatureExtractor(sequence, config, flow_source, ego_predictor, external)
        samples.extend(extractor.window(w, horizon) for w in windows)
        log.debug('%s: %d windows', sequence.sequence_id, len(windows))
    return samples
