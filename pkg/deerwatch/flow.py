"""
Dense motion between two frames, and pooling it inside a box.

Flow files (``flow/%06d.bin``, the motion from frame i to frame i+1) start
with a 16 byte header: the magic ``FLW1``, then width, height and the
channel count (always 2) as little-endian 32-bit unsigned integers. The
payload is little-endian float32, row-major, with u and v interleaved per
pixel.
"""
from dataclasses import dataclass
import math
import struct

import cv2
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import FormatError


__all__ = ('FlowField', 'PooledFlow', 'estimate_flow', 'roi_pool', 'gt_flow',
           'read_flow', 'write_flow', 'endpoint_error', 'warp', 'FLOW_SOURCES')


BLOCK_MATCHING = 'block_matching'
GROUND_TRUTH = 'ground_truth'
FLOW_SOURCES = (BLOCK_MATCHING, GROUND_TRUTH)

MAGIC = b'FLW1'
HEADER = struct.Struct('<4sIII')


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement ``(u, v)`` in pixels, each an ``(H, W)`` array."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ValueError('flow components must be 2D arrays of one shape, '
                             'got %s and %s' % (self.u.shape, self.v.shape))

    @property
    def width(self):
        return self.u.shape[1]

    @property
    def height(self):
        return self.u.shape[0]

    @classmethod
    def zeros(cls, width, height):
        return cls(np.zeros((height, width), np.float32),
                   np.zeros((height, width), np.float32))

    def as_array(self):
        return np.stack([self.u, self.v], axis=-1)


@dataclass(frozen=True, eq=False)
class PooledFlow:
    """Mean flow per cell of a ``G x G`` grid laid over a box, shape
    ``(G, G, 2)``. ``degenerate`` is set when the box was narrower than the
    grid and pixels had to be repeated.
    """

    grid: np.ndarray
    degenerate: bool = False


def _block_sums(values, block, stride):
    rows = sliding_window_view(values, block, axis=1)[:, ::stride].sum(axis=-1)
    return sliding_window_view(rows, block, axis=0)[::stride].sum(axis=-1)


def _candidates(radius):
    """All displacements in the search window, in tie-breaking order:
    smallest magnitude first, then lexicographic in (u, v).
    """
    shifts = [(du, dv) for du in range(-radius, radius + 1)
              for dv in range(-radius, radius + 1)]
    return sorted(shifts, key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]))


def estimate_flow(frame_a, frame_b, block=8, stride=4, radius=8):
    """Block-matching flow from ``frame_a`` to ``frame_b``.

    Each ``block`` x ``block`` block of ``frame_a`` (placed every ``stride``
    pixels) is searched for in ``frame_b`` within ``radius`` pixels by
    smallest sum of absolute differences. The block motions are then
    bilinearly interpolated between block centers to every pixel.
    """
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError('frames must be 2D and of the same size, got %s and %s'
                         % (a.shape, b.shape))
    height, width = a.shape
    if height < block or width < block:
        raise ValueError('frames of %dx%d are smaller than a %d pixel block'
                         % (width, height, block))

    candidates = _candidates(radius)
    padded = np.pad(b, radius, mode='constant', constant_values=np.nan)
    n_rows = len(range(0, height - block + 1, stride))
    n_cols = len(range(0, width - block + 1, stride))
    costs = np.empty((len(candidates), n_rows, n_cols))
    for n, (du, dv) in enumerate(candidates):
        shifted = padded[radius + dv:radius + dv + height,
                         radius + du:radius + du + width]
        diff = np.abs(a - shifted)
        outside = np.isnan(diff)
        diff[outside] = 0.0
        sad = _block_sums(diff, block, stride)
        sad[_block_sums(outside.astype(np.float64), block, stride) > 0] = np.inf
        costs[n] = sad

    best = np.argmin(costs, axis=0)
    shifts = np.array(candidates, dtype=np.float64)
    block_u = shifts[best, 0]
    block_v = shifts[best, 1]

    centers_y = np.arange(n_rows) * stride + (block - 1) / 2.0
    centers_x = np.arange(n_cols) * stride + (block - 1) / 2.0
    return FlowField(_upsample(block_u, centers_y, centers_x, height, width),
                     _upsample(block_v, centers_y, centers_x, height, width))


def _upsample(values, centers_y, centers_x, height, width):
    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)
    across = np.stack([np.interp(cols, centers_x, row) for row in values])
    dense = np.stack([np.interp(rows, centers_y, across[:, j]) for j in range(width)],
                     axis=1)
    return dense.astype(np.float32)


def _splits(start, count, grid):
    """Cut ``count`` pixels starting at ``start`` into ``grid`` runs. Extra
    pixels go to the trailing runs. With fewer pixels than runs, each run is
    the single nearest pixel.
    """
    if count >= grid:
        base, extra = divmod(count, grid)
        sizes = [base] * (grid - extra) + [base + 1] * extra
        bounds = []
        for size in sizes:
            bounds.append((start, start + size))
            start += size
        return bounds, False
    picks = [start + int(math.floor((i + 0.5) * count / grid)) for i in range(grid)]
    return [(p, p + 1) for p in picks], True


def _pixel_span(low, high, limit):
    first = min(max(int(math.floor(low)), 0), limit - 1)
    last = max(min(int(math.ceil(high)), limit), first + 1)
    return first, last - first


def roi_pool(flow, box, grid=8):
    """Average ``flow`` over each cell of a ``grid`` x ``grid`` split of
    ``box`` (pixels).
    """
    box = box.clamp(flow.width, flow.height)
    x0, nx = _pixel_span(box.left, box.right, flow.width)
    y0, ny = _pixel_span(box.top, box.bottom, flow.height)
    row_bounds, rows_degenerate = _splits(y0, ny, grid)
    col_bounds, cols_degenerate = _splits(x0, nx, grid)

    pooled = np.empty((grid, grid, 2), dtype=np.float64)
    for i, (r0, r1) in enumerate(row_bounds):
        for j, (c0, c1) in enumerate(col_bounds):
            pooled[i, j, 0] = flow.u[r0:r1, c0:c1].mean(dtype=np.float64)
            pooled[i, j, 1] = flow.v[r0:r1, c0:c1].mean(dtype=np.float64)
    return PooledFlow(pooled, rows_degenerate or cols_degenerate)


def write_flow(flow, filename):
    data = np.stack([flow.u, flow.v], axis=-1).astype('<f4')
    with open(filename, 'wb') as f:
        f.write(HEADER.pack(MAGIC, flow.width, flow.height, 2))
        f.write(data.tobytes())


def read_flow(filename, width=None, height=None):
    """Read a flow file, checking its size against ``width`` x ``height``
    when given.
    """
    with open(filename, 'rb') as f:
        header = f.read(HEADER.size)
        if len(header) != HEADER.size:
            raise FormatError('%s: truncated flow header' % filename)
        magic, w, h, channels = HEADER.unpack(header)
        if magic != MAGIC:
            raise FormatError('%s: bad magic %r, expected %r' % (filename, magic, MAGIC))
        if channels != 2:
            raise FormatError('%s: expected 2 channels, found %d' % (filename, channels))
        if (width is not None and w != width) or (height is not None and h != height):
            raise FormatError('%s: flow is %dx%d, expected %sx%s' % (
                filename, w, h, width, height))
        payload = f.read()
    if len(payload) != w * h * 2 * 4:
        raise FormatError('%s: expected %d payload bytes, found %d' % (
            filename, w * h * 8, len(payload)))
    data = np.frombuffer(payload, dtype='<f4').reshape(h, w, 2).astype(np.float32)
    return FlowField(np.ascontiguousarray(data[..., 0]),
                     np.ascontiguousarray(data[..., 1]))


def gt_flow(sequence, frame_index):
    """The ground truth flow from ``frame_index`` to the next frame of a
    rendered sequence.
    """
    manifest = sequence.manifest
    return read_flow(sequence.flow_path(frame_index), manifest.width, manifest.height)


def warp(frame, flow):
    """Sample ``frame`` where ``flow`` moves every pixel to. Warping the
    later of two frames with the motion between them gives back the
    earlier one. Pixels moved off the image are NaN.
    """
    frame = np.asarray(frame, dtype=np.float32)
    if frame.shape != flow.u.shape:
        raise ValueError('frame is %s, flow is %s' % (frame.shape, flow.u.shape))
    rows, cols = np.indices(frame.shape, dtype=np.float32)
    map_x = cols + flow.u.astype(np.float32)
    map_y = rows + flow.v.astype(np.float32)
    warped = cv2.remap(frame, map_x, map_y, cv2.INTER_LINEAR,
                       borderMode=cv2.BORDER_REPLICATE)
    outside = ((map_x < 0) | (map_x > flow.width - 1)
               | (map_y < 0) | (map_y > flow.height - 1))
    warped[outside] = np.nan
    return warped


def endpoint_error(a, b, mask=None):
    """Mean Euclidean distance between two flow fields, over ``mask``."""
    error = np.hypot(a.u.astype(np.float64) - b.u, a.v.astype(np.float64) - b.v)
    if mask is not None:
        error = error[mask]
    return float(error.mean()) if error.size else 0.0
