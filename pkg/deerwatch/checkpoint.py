"""
Binary checkpoints for trained models.

Layout (all integers little-endian u32):

    b'TRJ1'
    format version
    length of the config JSON, then the config as UTF-8
    tensor count
    per tensor: name length, name (UTF-8), rank, dims, payload

The canonical payload is little-endian float32 (``<f4``). As an extension,
a config with ``"precision": 64`` stores ``<f8`` payloads instead so a
64-bit model loads back bit for bit; readers that only know the canonical
layout reject such files by their config.
"""
from collections import OrderedDict
import json
import struct

import numpy as np
import torch

from .core import FormatError


__all__ = ('save_checkpoint', 'load_checkpoint', 'FORMAT_VERSION')


MAGIC = b'TRJ1'
FORMAT_VERSION = 1
U32 = struct.Struct('<I')


def _dtype(config):
    return '<f8' if config.get('precision', 32) == 64 else '<f4'


def save_checkpoint(filename, config, tensors):
    """Write ``tensors`` (an ordered mapping of name to tensor) with the
    ``config`` dict.
    """
    dtype = _dtype(config)
    blob = json.dumps(config, sort_keys=True).encode('utf-8')
    with open(filename, 'wb') as f:
        f.write(MAGIC)
        f.write(U32.pack(FORMAT_VERSION))
        f.write(U32.pack(len(blob)))
        f.write(blob)
        f.write(U32.pack(len(tensors)))
        for name, tensor in tensors.items():
            array = tensor.detach().cpu().numpy().astype(dtype)
            encoded = name.encode('utf-8')
            f.write(U32.pack(len(encoded)))
            f.write(encoded)
            f.write(U32.pack(array.ndim))
            for dim in array.shape:
                f.write(U32.pack(dim))
            f.write(array.tobytes())


class _Reader(object):

    def __init__(self, f, filename):
        self.f = f
        self.filename = filename

    def read(self, n):
        data = self.f.read(n)
        if len(data) != n:
            raise FormatError('%s: checkpoint is truncated' % self.filename)
        return data

    def u32(self):
        return U32.unpack(self.read(U32.size))[0]


def load_checkpoint(filename):
    """Return ``(config, tensors)`` as written by ``save_checkpoint``."""
    with open(filename, 'rb') as f:
        reader = _Reader(f, filename)
        magic = reader.read(4)
        if magic != MAGIC:
            raise FormatError('%s: not a checkpoint (magic %r)' % (filename, magic))
        version = reader.u32()
        if version != FORMAT_VERSION:
            raise FormatError('%s: unsupported checkpoint version %d' % (filename, version))
        try:
            config = json.loads(reader.read(reader.u32()).decode('utf-8'))
        except ValueError as e:
            raise FormatError('%s: bad checkpoint config: %s' % (filename, e))
        dtype = np.dtype(_dtype(config))
        tensors = OrderedDict()
        for _ in range(reader.u32()):
            name = reader.read(reader.u32()).decode('utf-8')
            shape = tuple(reader.u32() for _ in range(reader.u32()))
            count = int(np.prod(shape, dtype=np.int64))
            array = np.frombuffer(reader.read(count * dtype.itemsize), dtype=dtype)
            tensors[name] = torch.from_numpy(array.reshape(shape).astype(dtype.newbyteorder('=')))
        if f.read(1):
            raise FormatError('%s: trailing data after the last tensor' % filename)
    return config, tensors
