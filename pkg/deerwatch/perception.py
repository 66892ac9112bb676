"""
Finding deer in a frame and deciding which of them matter.

Two detectors share one interface: ``OracleDetector`` replays the
annotations of a sequence, ``HeatmapDetector`` is a small fully
convolutional network predicting a center heatmap, box sizes and a risk
score (stride 4). Both return ``Detection`` lists sorted by descending
confidence.
"""
from collections import namedtuple
from dataclasses import dataclass, replace
import csv
import logging
import math

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, DETECTOR_KINDS
from .core import BoundingBox, HIGH, LOW
from .trajnet import NumericError


__all__ = ('Detection', 'Detector', 'OracleDetector', 'HeatmapDetector',
           'make_detector', 'classify_risk', 'filter_high_risk', 'iou',
           'average_precision', 'APResult', 'train_detector',
           'evaluate_detector', 'write_ap_report', 'apply_risk_threshold')


log = logging.getLogger(__name__)


RISK_THRESHOLD = 0.5
STRIDE = 4
AP_HEADER = ['sequence_id', 'ap', 'iou_threshold', 'n_gt', 'n_pred']


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float
    risk_score: float
    risk: str

    @classmethod
    def scored(cls, box, confidence, risk_score, threshold=RISK_THRESHOLD):
        return cls(box, float(confidence), float(risk_score),
                   HIGH if risk_score >= threshold else LOW)


def apply_risk_threshold(detections, threshold):
    """Re-partition detections into high and low risk; scores are kept."""
    return [replace(d, risk=HIGH if d.risk_score >= threshold else LOW)
            for d in detections]


def filter_high_risk(detections):
    return [d for d in detections if d.risk == HIGH]


def iou(a, b):
    """Intersection over union of two boxes."""
    width = min(a.right, b.right) - max(a.left, b.left)
    height = min(a.bottom, b.bottom) - max(a.top, b.top)
    if width <= 0 or height <= 0:
        return 0.0
    intersection = width * height
    union = a.area + b.area - intersection
    return min(1.0, intersection / union)


class Detector(object):
    kind = None

    def __init__(self, width, height, risk_threshold=RISK_THRESHOLD):
        self.width = width
        self.height = height
        self.risk_threshold = risk_threshold

    def check_frame(self, frame):
        if frame is not None and tuple(frame.shape) != (self.height, self.width):
            raise ValueError('frame is %s, detector expects %dx%d' % (
                'x'.join(map(str, frame.shape[::-1])), self.width, self.height))

    def detect(self, frame, frame_index=None, ego=None):
        raise NotImplementedError()

    def classify_risk(self, detection, frame, ego, frame_index=None):
        raise NotImplementedError()


class OracleDetector(Detector):
    """Returns the annotated boxes of a frame with confidence 1 and the
    annotated risk.
    """

    kind = 'oracle'

    def __init__(self, records, width, height, risk_threshold=RISK_THRESHOLD):
        Detector.__init__(self, width, height, risk_threshold)
        if records is None:
            raise ConfigError('the oracle detector needs annotations')
        self.records = dict((r.frame_index, r) for r in records)

    def _record(self, frame_index):
        if frame_index not in self.records:
            raise ConfigError('the oracle detector has no annotations for frame %s'
                              % (frame_index,))
        return self.records[frame_index]

    def detect(self, frame, frame_index=None, ego=None):
        self.check_frame(frame)
        detections = []
        for annotation in self._record(frame_index).boxes:
            score = 1.0 if annotation.risk == HIGH else 0.0
            detections.append(Detection.scored(annotation.box, 1.0, score,
                                               self.risk_threshold))
        return detections

    def classify_risk(self, detection, frame, ego, frame_index=None):
        best, score = 0.0, 0.0
        for annotation in self._record(frame_index).boxes:
            overlap = iou(annotation.box, detection.box)
            if overlap > best:
                best = overlap
                score = 1.0 if annotation.risk == HIGH else 0.0
        return score


class HeatmapNet(nn.Module):
    """Backbone at stride 4 with center, size, offset heads and a risk
    classifier on features pooled inside a box.
    """

    def __init__(self, channels=16):
        super().__init__()
        c = channels
        self.backbone = nn.Sequential(
            nn.Conv2d(1, c, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(c, 2 * c, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(2 * c, 2 * c, 3, padding=1), nn.ReLU(),
        )

        def head(outputs):
            return nn.Sequential(nn.Conv2d(2 * c, c, 3, padding=1), nn.ReLU(),
                                 nn.Conv2d(c, outputs, 1))

        self.center = head(1)
        self.size = head(2)
        self.offset = head(2)
        self.risk = nn.Linear(2 * c + 1, 1)
        # start with a low prior on deer being anywhere
        nn.init.constant_(self.center[-1].bias, -2.19)

    def forward(self, images):
        features = self.backbone(images)
        return features, self.center(features), self.size(features), self.offset(features)

    def risk_logit(self, features, box, speed):
        """``features`` of one image ``(C, h, w)``; ``box`` in pixels."""
        _, h, w = features.shape
        x0 = min(max(int(math.floor(box.left / STRIDE)), 0), w - 1)
        x1 = max(min(int(math.ceil(box.right / STRIDE)), w), x0 + 1)
        y0 = min(max(int(math.floor(box.top / STRIDE)), 0), h - 1)
        y1 = max(min(int(math.ceil(box.bottom / STRIDE)), h), y0 + 1)
        pooled = features[:, y0:y1, x0:x1].mean(dim=(1, 2))
        ego = pooled.new_tensor([speed / 20.0])
        return self.risk(torch.cat([pooled, ego]))[0]


class HeatmapDetector(Detector):

    kind = 'heatmap'

    def __init__(self, net, width, height, risk_threshold=RISK_THRESHOLD,
                 score_threshold=0.3, max_detections=10):
        Detector.__init__(self, width, height, risk_threshold)
        self.net = net
        self.score_threshold = score_threshold
        self.max_detections = max_detections

    def _forward(self, frame):
        image = torch.as_tensor(np.asarray(frame, dtype=np.float32))[None, None]
        with torch.no_grad():
            return self.net(image)

    def detect(self, frame, frame_index=None, ego=None):
        self.check_frame(frame)
        features, center, size, offset = self._forward(frame)
        heat = torch.sigmoid(center)
        peaks = heat == F.max_pool2d(heat, 3, stride=1, padding=1)
        scores = (heat * peaks)[0, 0]
        h, w = scores.shape
        top = torch.topk(scores.flatten(), min(self.max_detections, h * w))
        speed = ego.speed if ego is not None else 0.0

        detections = []
        for score, index in zip(top.values.tolist(), top.indices.tolist()):
            if score < self.score_threshold:
                break
            y, x = divmod(index, w)
            cx = (x + float(offset[0, 0, y, x])) * STRIDE
            cy = (y + float(offset[0, 1, y, x])) * STRIDE
            bw = math.exp(float(size[0, 0, y, x])) * STRIDE
            bh = math.exp(float(size[0, 1, y, x])) * STRIDE
            cx = min(max(cx, 0.0), float(self.width))
            cy = min(max(cy, 0.0), float(self.height))
            box = BoundingBox(cx, cy, bw, bh).clamp(self.width, self.height)
            with torch.no_grad():
                risk = torch.sigmoid(self.net.risk_logit(features[0], box, speed)).item()
            detections.append(Detection.scored(box, score, risk, self.risk_threshold))
        detections.sort(key=lambda d: -d.confidence)
        return detections

    def classify_risk(self, detection, frame, ego, frame_index=None):
        features = self._forward(frame)[0]
        speed = ego.speed if ego is not None else 0.0
        with torch.no_grad():
            return torch.sigmoid(
                self.net.risk_logit(features[0], detection.box, speed)).item()

    def config(self):
        return {'kind': 'heatmap', 'channels': self.net.risk.in_features // 2,
                'width': self.width, 'height': self.height, 'precision': 32}

    def save(self, filename):
        save_checkpoint(filename, self.config(), self.net.state_dict())

    @classmethod
    def load(cls, filename, risk_threshold=RISK_THRESHOLD):
        config, tensors = load_checkpoint(filename)
        if config.get('kind') != 'heatmap':
            raise ConfigError('%s is not a detector checkpoint' % filename)
        net = HeatmapNet(config['channels'])
        net.load_state_dict(tensors)
        net.eval()
        return cls(net, config['width'], config['height'], risk_threshold)


def make_detector(kind, width, height, records=None, checkpoint=None,
                  risk_threshold=RISK_THRESHOLD):
    if kind == 'oracle':
        return OracleDetector(records, width, height, risk_threshold)
    if kind == 'heatmap':
        if not checkpoint:
            raise ConfigError('the heatmap detector needs a checkpoint')
        detector = HeatmapDetector.load(checkpoint, risk_threshold)
        if (detector.width, detector.height) != (width, height):
            raise ConfigError('detector was trained on %dx%d frames, data is %dx%d' % (
                detector.width, detector.height, width, height))
        return detector
    raise ConfigError('unknown detector "%s", expected one of: %s' % (
        kind, ', '.join(DETECTOR_KINDS)))


def classify_risk(detection, frame, ego, detector, frame_index=None):
    """Probability that ``detection`` is a high risk deer."""
    return detector.classify_risk(detection, frame, ego, frame_index)


APResult = namedtuple('APResult', 'ap n_gt n_pred warning')


def average_precision(predictions, ground_truth, iou_threshold=0.5):
    """11-point interpolated average precision.

    ``predictions`` and ``ground_truth`` are per-frame lists: detections
    (anything with ``box`` and ``confidence``) and boxes. Predictions are
    taken in order of descending confidence; each one is a true positive if
    its best overlapping ground truth box of the same frame reaches
    ``iou_threshold`` and was not already taken.
    """
    if len(predictions) != len(ground_truth):
        raise ValueError('got predictions for %d frames but ground truth for %d'
                         % (len(predictions), len(ground_truth)))
    ranked = [(d.confidence, frame, d.box)
              for frame, detections in enumerate(predictions) for d in detections]
    ranked.sort(key=lambda item: -item[0])
    n_gt = sum(len(boxes) for boxes in ground_truth)
    n_pred = len(ranked)
    if n_gt == 0:
        return APResult(0.0, 0, n_pred, n_pred > 0)
    if n_pred == 0:
        return APResult(0.0, n_gt, 0, False)

    taken = [[False] * len(boxes) for boxes in ground_truth]
    hits = np.zeros(n_pred)
    for i, (_, frame, box) in enumerate(ranked):
        overlaps = [iou(box, gt) for gt in ground_truth[frame]]
        if not overlaps:
            continue
        best = int(np.argmax(overlaps))
        if overlaps[best] >= iou_threshold and not taken[frame][best]:
            taken[frame][best] = True
            hits[i] = 1.0

    tp = np.cumsum(hits)
    recall = tp / n_gt
    precision = tp / np.arange(1, n_pred + 1)
    ap = 0.0
    for t in np.linspace(0.0, 1.0, 11):
        reached = recall >= t
        ap += precision[reached].max() if reached.any() else 0.0
    return APResult(ap / 11.0, n_gt, n_pred, False)


def _focal_loss(logits, target):
    """Penalty-reduced focal loss over a center heatmap."""
    p = torch.sigmoid(logits).clamp(1e-4, 1 - 1e-4)
    positive = target.eq(1).to(logits.dtype)
    negative = 1.0 - positive
    pos_loss = torch.log(p) * (1 - p) ** 2 * positive
    neg_loss = torch.log(1 - p) * p ** 2 * (1 - target) ** 4 * negative
    n = positive.sum().clamp(min=1.0)
    return -(pos_loss.sum() + neg_loss.sum()) / n


def _targets(record, width, height):
    h, w = height // STRIDE, width // STRIDE
    heat = np.zeros((h, w), np.float32)
    size = np.zeros((2, h, w), np.float32)
    offset = np.zeros((2, h, w), np.float32)
    mask = np.zeros((h, w), np.float32)
    ys, xs = np.mgrid[0:h, 0:w]
    for annotation in record.boxes:
        box = annotation.box
        x, y = box.cx / STRIDE, box.cy / STRIDE
        i, j = min(int(y), h - 1), min(int(x), w - 1)
        sigma = max(max(box.w, box.h) / STRIDE / 6.0, 0.8)
        gaussian = np.exp(-((xs - j) ** 2 + (ys - i) ** 2) / (2 * sigma ** 2))
        heat = np.maximum(heat, gaussian.astype(np.float32))
        heat[i, j] = 1.0
        size[:, i, j] = (math.log(box.w / STRIDE), math.log(box.h / STRIDE))
        offset[:, i, j] = (x - j, y - i)
        mask[i, j] = 1.0
    return heat, size, offset, mask


def train_detector(sequences, epochs=20, seed=0, lr=0.01, momentum=0.9,
                   batch_size=8, frame_stride=4, channels=16, log=log):
    """Train a ``HeatmapDetector`` on every ``frame_stride``-th frame of the
    given sequences. Returns the detector and the per-epoch mean losses.
    """
    if not sequences:
        raise ValueError('no sequences to train the detector on')
    manifest = sequences[0].manifest
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    net = HeatmapNet(channels)
    optimizer = torch.optim.SGD(net.parameters(), lr=lr, momentum=momentum)

    samples = [(s, r.frame_index) for s in sequences
               for r in s.records[::frame_stride]]
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = [samples[i] for i in order[start:start + batch_size]]
            images = torch.as_tensor(np.stack(
                [s.frame(k) for s, k in batch]).astype(np.float32))[:, None]
            targets = [_targets(s.record(k), manifest.width, manifest.height)
                       for s, k in batch]
            heat, size, offset, mask = (torch.as_tensor(np.stack(t)) for t in zip(*targets))

            features, center_out, size_out, offset_out = net(images)
            weight = mask[:, None].clamp(min=0)
            n = mask.sum().clamp(min=1.0)
            loss = (_focal_loss(center_out[:, 0], heat)
                    + 0.1 * ((size_out - size).abs() * weight).sum() / n
                    + ((offset_out - offset).abs() * weight).sum() / n)
            risk_terms = []
            for b, (s, k) in enumerate(batch):
                speed = s.pose(k).speed
                for annotation in s.record(k).boxes:
                    label = 1.0 if annotation.risk == HIGH else 0.0
                    logit = net.risk_logit(features[b], annotation.box, speed)
                    risk_terms.append(F.binary_cross_entropy_with_logits(
                        logit, logit.new_tensor(label)))
            if risk_terms:
                loss = loss + torch.stack(risk_terms).mean()

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        mean = float(np.mean(losses))
        if not math.isfinite(mean):
            raise NumericError('detector training diverged in epoch %d' % epoch)
        history.append(mean)
        log.info('detector epoch %d: mean loss %.6f', epoch, mean)

    net.eval()
    return HeatmapDetector(net, manifest.width, manifest.height), history


def evaluate_detector(detector, sequences, iou_threshold=0.5):
    """AP per sequence plus an ``all`` row over every frame."""
    rows = []
    all_predictions, all_truth = [], []
    for sequence in sequences:
        predictions, truth = [], []
        for record in sequence.records:
            frame = sequence.frame(record.frame_index)
            predictions.append(detector.detect(frame, record.frame_index,
                                               sequence.pose(record.frame_index)))
            truth.append([a.box for a in record.boxes])
        result = average_precision(predictions, truth, iou_threshold)
        rows.append((sequence.sequence_id, result.ap, iou_threshold,
                     result.n_gt, result.n_pred))
        all_predictions.extend(predictions)
        all_truth.extend(truth)
    result = average_precision(all_predictions, all_truth, iou_threshold)
    rows.append(('all', result.ap, iou_threshold, result.n_gt, result.n_pred))
    return rows


def write_ap_report(rows, filename):
    with open(filename, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(AP_HEADER)
        for sequence_id, ap, threshold, n_gt, n_pred in rows:
            writer.writerow([sequence_id, '%.6f' % ap, threshold, n_gt, n_pred])
