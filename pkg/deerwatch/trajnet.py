"""
The multi-stream trajectory network.

Three encoders summarize the observation of one deer: an LSTM over the
past boxes (location), a Conv-LSTM over the flow pooled inside the boxes
(motion) and a Conv-LSTM over downsampled frames (context). Their final
states are concatenated and passed through a small MLP. A recurrent
decoder, started from the fused code plus per-sample noise, rolls the box
forward one frame at a time, optionally fed with the predicted ego motion
of each step, and predicts box changes rather than boxes.

Ablations switch streams off: a disabled stream is not encoded and does
not take part in the fusion input.
"""
from collections import namedtuple, OrderedDict
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError


__all__ = ('ModelConfig', 'TrajectoryModel', 'NumericError', 'WindowBatch',
           'PRESETS', 'preset_config', 'small_config', 'variety_loss',
           'collate', 'predict', 'parameter_groups', 'save_model',
           'load_model', 'ConvLSTMCell', 'ConvLSTMEncoder')


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    preset: str = 'lmcv'
    tau: int = 60
    horizon: int = 30
    frame_rate: float = 30.0
    samples: int = 10
    best_of: int = 5
    noise_dim: int = 16
    traj_hidden: int = 128
    traj_layers: int = 2
    convlstm_channels: int = 16
    convlstm_layers: int = 2
    kernel_size: int = 3
    fusion_widths: tuple = (256, 128)
    decoder_hidden: int = 128
    context_size: tuple = (80, 60)
    roi_grid: int = 8
    flow_scale: float = 8.0
    use_motion: bool = True
    use_context: bool = True
    use_ego: bool = True
    precision: int = 32

    def __post_init__(self):
        if not self.samples >= self.best_of >= 1:
            raise ValueError('need samples >= best_of >= 1, got %d and %d' % (
                self.samples, self.best_of))
        if self.tau < 2 or self.horizon < 1:
            raise ValueError('need tau >= 2 and horizon >= 1, got %d and %d' % (
                self.tau, self.horizon))
        if self.precision not in (32, 64):
            raise ValueError('precision must be 32 or 64, not %r' % (self.precision,))
        if len(self.fusion_widths) != 2:
            raise ValueError('fusion takes two layer widths, not %r' % (self.fusion_widths,))

    @property
    def use_location(self):
        return True

    @property
    def dtype(self):
        return torch.float64 if self.precision == 64 else torch.float32

    def to_dict(self):
        data = asdict(self)
        data['fusion_widths'] = list(self.fusion_widths)
        data['context_size'] = list(self.context_size)
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data['fusion_widths'] = tuple(data['fusion_widths'])
        data['context_size'] = tuple(data['context_size'])
        return cls(**data)


# streams besides location: (motion, context, ego)
PRESETS = OrderedDict([
    ('baseline', (False, False, False)),
    ('lcv', (False, True, True)),
    ('lmv', (True, False, True)),
    ('lmc', (True, True, False)),
    ('lmcv', (True, True, True)),
])


def preset_config(name, **overrides):
    if name not in PRESETS:
        raise ValueError('unknown preset %r, expected one of: %s' % (
            name, ', '.join(PRESETS)))
    motion, context, ego = PRESETS[name]
    return ModelConfig(preset=name, use_motion=motion, use_context=context,
                       use_ego=ego, **overrides)


def small_config(preset='lmcv', **overrides):
    """A tiny 64-bit configuration for gradient checks and unit tests."""
    settings = dict(tau=5, horizon=3, samples=2, best_of=1, noise_dim=4,
                    traj_hidden=8, convlstm_channels=4, fusion_widths=(16, 8),
                    decoder_hidden=8, context_size=(16, 12), roi_grid=4,
                    precision=64)
    settings.update(overrides)
    return preset_config(preset, **settings)


WindowBatch = namedtuple('WindowBatch', 'boxes flow context ego future')
WindowBatch.__doc__ = """\
Tensors for ``B`` windows: ``boxes`` (B, tau, 4), ``flow`` (B, tau-1, 2, G,
G), ``context`` (B, tau, 1, h, w), ``ego`` (B, H, 3), ``future`` (B, H, 4).
Streams a model does not use may be ``None``.
"""


def collate(samples, dtype=torch.float32):
    """Stack per-window samples (as built by ``deerwatch.features``) into a
    ``WindowBatch``.
    """
    def stack(field):
        values = [getattr(s, field) for s in samples]
        if any(v is None for v in values):
            return None
        return torch.as_tensor(np.stack(values), dtype=dtype)
    return WindowBatch(*(stack(f) for f in WindowBatch._fields))


class ConvLSTMCell(nn.Module):

    def __init__(self, input_size, hidden_size, kernel_size=3):
        super().__init__()
        self.hidden_size = hidden_size
        self.gates = nn.Conv2d(input_size + hidden_size, 4 * hidden_size,
                               kernel_size, padding=kernel_size // 2)

    def forward(self, input_, prev_state):
        prev_hidden, prev_cell = prev_state
        stacked = torch.cat((input_, prev_hidden), 1)
        in_gate, remember_gate, out_gate, cell_gate = self.gates(stacked).chunk(4, 1)
        cell = (torch.sigmoid(remember_gate) * prev_cell
                + torch.sigmoid(in_gate) * torch.tanh(cell_gate))
        hidden = torch.sigmoid(out_gate) * torch.tanh(cell)
        return hidden, cell


class ConvLSTMEncoder(nn.Module):
    """Stacked Conv-LSTM over ``(B, T, C, H, W)``; returns the spatial mean
    of the last layer's final hidden state, ``(B, channels)``.
    """

    def __init__(self, input_size, channels, layers=2, kernel_size=3):
        super().__init__()
        self.input_size = input_size
        self.channels = channels
        self.cells = nn.ModuleList(
            ConvLSTMCell(input_size if i == 0 else channels, channels, kernel_size)
            for i in range(layers))

    def forward(self, sequence):
        b, t, c, h, w = sequence.shape
        if c != self.input_size:
            raise ValueError('expected %d input channels, got %d' % (self.input_size, c))
        states = [(sequence.new_zeros(b, self.channels, h, w),
                   sequence.new_zeros(b, self.channels, h, w)) for _ in self.cells]
        for step in range(t):
            x = sequence[:, step]
            for i, cell in enumerate(self.cells):
                states[i] = cell(x, states[i])
                x = states[i][0]
        return states[-1][0].mean(dim=(2, 3))


class TrajectoryEncoder(nn.Module):

    def __init__(self, hidden, layers=2):
        super().__init__()
        self.lstm = nn.LSTM(4, hidden, num_layers=layers, batch_first=True)

    def forward(self, boxes):
        _, (hidden, _) = self.lstm(boxes)
        return hidden[-1]


class TrajectoryModel(nn.Module):

    def __init__(self, config):
        super().__init__()
        self.config = config
        c = config
        self.trajectory_encoder = TrajectoryEncoder(c.traj_hidden, c.traj_layers)
        self.motion_encoder = ConvLSTMEncoder(2, c.convlstm_channels,
                                              c.convlstm_layers, c.kernel_size)
        self.context_encoder = ConvLSTMEncoder(1, c.convlstm_channels,
                                               c.convlstm_layers, c.kernel_size)
        self.fusion = nn.Sequential(
            nn.Linear(self.fusion_input_width, c.fusion_widths[0]), nn.ReLU(),
            nn.Linear(c.fusion_widths[0], c.fusion_widths[1]), nn.ReLU())
        self.decoder_init = nn.Linear(c.fusion_widths[1] + c.noise_dim,
                                      2 * c.decoder_hidden)
        self.decoder_cell = nn.LSTMCell(4 + (3 if c.use_ego else 0), c.decoder_hidden)
        self.output_head = nn.Linear(c.decoder_hidden, 4)
        self.to(c.dtype)

    @property
    def fusion_input_width(self):
        c = self.config
        return (c.traj_hidden + (c.convlstm_channels if c.use_motion else 0)
                + (c.convlstm_channels if c.use_context else 0))

    def encode_trajectory(self, boxes):
        c = self.config
        if boxes.dim() != 3 or boxes.shape[1:] != (c.tau, 4):
            raise ValueError('expected past boxes of shape (B, %d, 4), got %s' % (
                c.tau, tuple(boxes.shape)))
        if not torch.isfinite(boxes).all():
            raise ValueError('past boxes contain non-finite values')
        return self.trajectory_encoder(boxes)

    def encode_motion(self, flow):
        c = self.config
        expected = (c.tau - 1, 2, c.roi_grid, c.roi_grid)
        if flow is None or flow.dim() != 5 or tuple(flow.shape[1:]) != expected:
            raise ValueError('expected pooled flow of shape (B, %s), got %s' % (
                ', '.join(map(str, expected)),
                None if flow is None else tuple(flow.shape)))
        return self.motion_encoder(flow)

    def encode_context(self, context):
        c = self.config
        width, height = c.context_size
        expected = (c.tau, 1, height, width)
        if context is None or context.dim() != 5 or tuple(context.shape[1:]) != expected:
            raise ValueError('expected context frames of shape (B, %s), got %s' % (
                ', '.join(map(str, expected)),
                None if context is None else tuple(context.shape)))
        return self.context_encoder(context)

    def fuse(self, trajectory, motion=None, context=None):
        parts = [trajectory]
        if self.config.use_motion:
            parts.append(motion)
        if self.config.use_context:
            parts.append(context)
        return self.fusion(torch.cat(parts, dim=1))

    def encode(self, batch):
        c = self.config
        trajectory = self.encode_trajectory(batch.boxes)
        motion = self.encode_motion(batch.flow) if c.use_motion else None
        context = self.encode_context(batch.context) if c.use_context else None
        return self.fuse(trajectory, motion, context)

    def decode(self, fused, last_box, noise, ego=None, horizon=None):
        """Roll out ``S`` samples per window.

        ``fused`` (B, F), ``last_box`` (B, 4), ``noise`` (B, S, noise_dim),
        ``ego`` (B, H, 3) or ``None``. Returns (B, S, H, 4).
        """
        c = self.config
        horizon = horizon or c.horizon
        b, s, _ = noise.shape
        if c.use_ego:
            if ego is None or ego.shape[0] != b or ego.shape[1] < horizon:
                raise ValueError('expected ego features of shape (%d, %d, 3), got %s' % (
                    b, horizon, None if ego is None else tuple(ego.shape)))
        code = torch.cat([fused[:, None].expand(b, s, fused.shape[1]), noise], dim=2)
        state = torch.tanh(self.decoder_init(code.reshape(b * s, -1)))
        hidden, cell = state.chunk(2, dim=1)
        hidden, cell = hidden.contiguous(), cell.contiguous()

        box = last_box[:, None].expand(b, s, 4).reshape(b * s, 4)
        steps = []
        for k in range(horizon):
            x = box
            if c.use_ego:
                step_ego = ego[:, k][:, None].expand(b, s, 3).reshape(b * s, 3)
                x = torch.cat([box, step_ego], dim=1)
            hidden, cell = self.decoder_cell(x, (hidden, cell))
            box = box + self.output_head(hidden)
            if not torch.isfinite(box).all():
                raise NumericError('decoder produced non-finite values at step %d' % k)
            steps.append(box)
        return torch.stack(steps, dim=1).reshape(b, s, horizon, 4)

    def forward(self, batch, noise, horizon=None):
        fused = self.encode(batch)
        return self.decode(fused, batch.boxes[:, -1], noise,
                           batch.ego if self.config.use_ego else None, horizon)

    def draw_noise(self, batch_size, generator):
        c = self.config
        return torch.randn(batch_size, c.samples, c.noise_dim, generator=generator,
                           dtype=c.dtype)


def variety_loss(forecast, future, best_of):
    """Mean over the batch of the mean squared error of the ``best_of``
    samples closest to ``future``. Only those samples receive gradient.

    ``forecast`` (B, S, H, 4), ``future`` (B, H, 4).
    """
    samples = forecast.shape[1]
    if best_of > samples:
        raise ValueError('cannot pick the best %d of %d samples' % (best_of, samples))
    errors = ((forecast - future[:, None]) ** 2).mean(dim=(2, 3))
    best = torch.topk(errors, best_of, dim=1, largest=False).values
    return best.mean()


def predict(model, batch, generator=None, noise=None, horizon=None):
    """Forecast without building a graph. Returns (B, S, H, 4) as numpy."""
    if noise is None:
        noise = model.draw_noise(batch.boxes.shape[0], generator)
    with torch.no_grad():
        return model(batch, noise, horizon).cpu().numpy()


GROUPS = OrderedDict([
    ('trajectory_encoder', ('trajectory_encoder.',)),
    ('motion_encoder', ('motion_encoder.',)),
    ('context_encoder', ('context_encoder.',)),
    ('fusion', ('fusion.',)),
    ('decoder', ('decoder_init.', 'decoder_cell.')),
    ('output_head', ('output_head.',)),
])


def parameter_groups(model):
    """Named parameters by group: ``{group: [(name, parameter), ...]}``."""
    groups = OrderedDict((g, []) for g in GROUPS)
    for name, parameter in model.named_parameters():
        for group, prefixes in GROUPS.items():
            if name.startswith(prefixes):
                groups[group].append((name, parameter))
                break
        else:
            raise KeyError('parameter %s belongs to no group' % name)
    return groups


def build_model(config, seed=0):
    torch.manual_seed(seed)
    return TrajectoryModel(config)


def save_model(model, filename):
    save_checkpoint(filename, dict(model.config.to_dict(), kind='trajectory'),
                    model.state_dict())


def load_model(filename):
    config, tensors = load_checkpoint(filename)
    if config.pop('kind', None) != 'trajectory':
        raise ConfigError('%s is not a trajectory model checkpoint' % filename)
    model = TrajectoryModel(ModelConfig.from_dict(config))
    model.load_state_dict(tensors)
    model.eval()
    return model
