"""
Training the trajectory network, and checking its gradients.
"""
from collections import namedtuple
import csv
import math

import numpy as np
import torch

from .trajnet import (NumericError, build_model, collate, parameter_groups,
                      small_config, variety_loss, WindowBatch)


__all__ = ('Trainer', 'gradient_check', 'write_loss_history',
           'read_loss_history', 'GradCheckResult', 'group_gradient_norms')


LOSS_HEADER = ['epoch', 'mean_loss']


class Trainer(object):
    """Plain SGD with momentum over windows, reproducible under ``seed``:
    the seed fixes parameter initialization, the shuffling of windows and
    the noise drawn for the samples.
    """

    def __init__(self, config, log, seed=0, lr=0.01, momentum=0.9, batch_size=16):
        self.config = config
        self.log = log
        self.seed = seed
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.model = build_model(config, seed)
        self.optimizer = torch.optim.SGD(self.model.parameters(), lr=lr,
                                         momentum=momentum)
        self.rng = np.random.default_rng(seed)
        self.generator = torch.Generator().manual_seed(seed)
        self.history = []

    def step(self, batch):
        """One optimizer step on ``batch``; returns the loss."""
        self.model.train()
        noise = self.model.draw_noise(batch.boxes.shape[0], self.generator)
        forecast = self.model(batch, noise)
        loss = variety_loss(forecast, batch.future, self.config.best_of)
        if not torch.isfinite(loss):
            raise NumericError('loss is not finite')
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        return loss.item()

    def fit(self, samples, epochs):
        """Train for ``epochs`` over ``samples`` (``WindowSample`` list).
        Returns the mean batch loss of every epoch.
        """
        if not samples:
            raise ValueError('no windows to train on')
        dtype = self.config.dtype
        for epoch in range(epochs):
            order = self.rng.permutation(len(samples))
            losses = []
            for n, start in enumerate(range(0, len(order), self.batch_size)):
                batch = collate([samples[i] for i in order[start:start + self.batch_size]],
                                dtype)
                try:
                    losses.append(self.step(batch))
                except NumericError as e:
                    raise NumericError('epoch %d, step %d: %s' % (epoch, n, e))
            mean = float(np.mean(losses))
            self.history.append(mean)
            self.log.info('epoch %d: mean loss %.6f', epoch, mean)
        self.model.eval()
        return self.history


def write_loss_history(history, filename):
    with open(filename, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(LOSS_HEADER)
        for epoch, loss in enumerate(history):
            writer.writerow([epoch, repr(loss)])


def read_loss_history(filename):
    with open(filename, 'r', newline='') as f:
        rows = list(csv.reader(f))
    return [float(row[1]) for row in rows[1:] if row]


GradCheckResult = namedtuple('GradCheckResult', 'max_error checked')


def _random_batch(config, batch_size, generator):
    c = config
    dtype = c.dtype
    width, height = c.context_size

    def randn(*shape):
        return torch.randn(*shape, generator=generator, dtype=dtype)

    boxes = 0.5 + 0.1 * randn(batch_size, c.tau, 4)
    return WindowBatch(
        boxes=boxes,
        flow=randn(batch_size, c.tau - 1, 2, c.roi_grid, c.roi_grid),
        context=torch.rand(batch_size, c.tau, 1, height, width,
                           generator=generator, dtype=dtype),
        ego=0.5 * randn(batch_size, c.horizon, 3),
        future=boxes[:, -1:].expand(batch_size, c.horizon, 4) + 0.05 * randn(
            batch_size, c.horizon, 4))


def gradient_check(seed=0, n_params=24, epsilon=1e-5, config=None, log=None):
    """Compare the analytic gradient of the variety loss with central
    differences on ``n_params`` parameters spread over every group.

    The relative error of a parameter is ``|a - n| / max(|a|, |n|, 1e-6)``.
    """
    config = config or small_config()
    if config.precision != 64:
        raise ValueError('gradient checks need a 64-bit model')
    model = build_model(config, seed)
    generator = torch.Generator().manual_seed(seed)
    batch = _random_batch(config, 2, generator)
    noise = model.draw_noise(2, generator)

    def loss():
        return variety_loss(model(batch, noise), batch.future, config.best_of)

    model.zero_grad()
    loss().backward()

    groups = [(g, params) for g, params in parameter_groups(model).items() if params]
    per_group = int(math.ceil(n_params / float(len(groups))))
    rng = np.random.default_rng(seed)
    checked = []
    for group, params in groups:
        sizes = np.array([p.numel() for _, p in params])
        for pick in rng.choice(int(sizes.sum()), size=min(per_group, int(sizes.sum())),
                               replace=False):
            which = int(np.searchsorted(np.cumsum(sizes), pick, side='right'))
            name, parameter = params[which]
            index = int(pick - (sizes[:which].sum() if which else 0))
            flat = parameter.data.view(-1)
            analytic = 0.0 if parameter.grad is None else float(parameter.grad.view(-1)[index])
            original = float(flat[index])
            with torch.no_grad():
                flat[index] = original + epsilon
                up = loss().item()
                flat[index] = original - epsilon
                down = loss().item()
                flat[index] = original
            numeric = (up - down) / (2 * epsilon)
            error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            checked.append((group, name, index, analytic, numeric, error))

    max_error = max(item[-1] for item in checked)
    if log is not None:
        log.info('checked %d parameters in %d groups, max relative error %.3g',
                 len(checked), len(groups), max_error)
    return GradCheckResult(max_error, checked)


def group_gradient_norms(model):
    """Largest absolute gradient per parameter group; parameters that took
    no part in the loss count as zero.
    """
    norms = {}
    for group, params in parameter_groups(model).items():
        values = [p.grad.abs().max().item() for _, p in params if p.grad is not None]
        norms[group] = max(values) if values else 0.0
    return norms
