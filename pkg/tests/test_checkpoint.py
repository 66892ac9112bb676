from collections import OrderedDict
from os import path
import shutil
import struct
import tempfile

import pytest
import torch

from deerwatch.checkpoint import load_checkpoint, save_checkpoint
from deerwatch.core import FormatError


class TestCheckpoint(object):

    def setup_method(self, method):
        self._tmpdir = tempfile.mkdtemp()
        self.filename = path.join(self._tmpdir, 'model.ckpt')

    def teardown_method(self, method):
        shutil.rmtree(self._tmpdir)

    def tensors(self, dtype=torch.float32):
        torch.manual_seed(0)
        return OrderedDict([('encoder.weight', torch.randn(3, 4, dtype=dtype)),
                            ('encoder.bias', torch.randn(3, dtype=dtype)),
                            ('scale', torch.tensor(2.5, dtype=dtype))])

    def test_round_trip(self):
        tensors = self.tensors()
        save_checkpoint(self.filename, {'preset': 'lmcv', 'tau': 60}, tensors)
        config, loaded = load_checkpoint(self.filename)
        assert config == {'preset': 'lmcv', 'tau': 60}
        assert list(loaded) == list(tensors)
        for name in tensors:
            assert loaded[name].shape == tensors[name].shape
            assert torch.equal(loaded[name], tensors[name])

    def test_double_precision(self):
        tensors = self.tensors(torch.float64)
        save_checkpoint(self.filename, {'precision': 64}, tensors)
        _, loaded = load_checkpoint(self.filename)
        assert loaded['encoder.weight'].dtype == torch.float64
        assert torch.equal(loaded['encoder.weight'], tensors['encoder.weight'])

    def test_payload_width(self):
        tensors = OrderedDict([('scale', torch.tensor(2.5, dtype=torch.float64))])
        save_checkpoint(self.filename, {}, tensors)
        with open(self.filename, 'rb') as f:
            assert f.read()[-4:] == struct.pack('<f', 2.5)
        save_checkpoint(self.filename, {'precision': 64}, tensors)
        with open(self.filename, 'rb') as f:
            assert f.read()[-8:] == struct.pack('<d', 2.5)
        assert load_checkpoint(self.filename)[1]['scale'].dtype == torch.float64

    def test_header(self):
        save_checkpoint(self.filename, {}, OrderedDict())
        with open(self.filename, 'rb') as f:
            data = f.read()
        assert data == b'TRJ1' + b'\x01\x00\x00\x00' + b'\x02\x00\x00\x00{}' + bytes(4)

    def write(self, data):
        with open(self.filename, 'wb') as f:
            f.write(data)

    def test_bad_magic(self):
        self.write(b'PK\x03\x04' + bytes(16))
        with pytest.raises(FormatError):
            load_checkpoint(self.filename)

    def test_bad_version(self):
        self.write(b'TRJ1' + b'\x07\x00\x00\x00')
        with pytest.raises(FormatError) as e:
            load_checkpoint(self.filename)
        assert 'version 7' in str(e.value)

    def test_truncated(self):
        save_checkpoint(self.filename, {'preset': 'lmcv'}, self.tensors())
        with open(self.filename, 'rb') as f:
            data = f.read()
        self.write(data[:-5])
        with pytest.raises(FormatError):
            load_checkpoint(self.filename)

    def test_trailing_data(self):
        save_checkpoint(self.filename, {}, self.tensors())
        with open(self.filename, 'ab') as f:
            f.write(b'\x00')
        with pytest.raises(FormatError):
            load_checkpoint(self.filename)
