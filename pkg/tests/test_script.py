import argparse
import csv
import logging
from os import path
import shutil
import tempfile

import pytest

from deerwatch.core import DataError
from deerwatch.pipeline import read_events
from deerwatch.script import (
    ArgumentError, AblateCommand, RunCommand, TrainCommand, load_sequences, main,
    parse_args)
from deerwatch.test import write_tiny_dataset
from deerwatch.trajnet import load_model, small_config


def read_csv(filename):
    with open(filename, newline='') as f:
        return list(csv.reader(f))


class BaseTest(object):

    def setup_method(self, method):
        self.log = logging.getLogger('test_script')
        self._tmpdir = tempfile.mkdtemp()

    def teardown_method(self, method):
        shutil.rmtree(self._tmpdir)

    def file(self, name, content=None):
        filename = path.join(self._tmpdir, name)
        if content is not None:
            with open(filename, 'w') as f:
                f.write(content)
        return filename

    def dataset(self, count=2, duration=40):
        root = self.file('data')
        write_tiny_dataset(root, count=count, duration=duration)
        return root


class TestArguments(BaseTest):

    def test_required(self):
        assert main(['train']) == 2
        assert main(['train', '--data', 'x']) == 2
        with pytest.raises(ArgumentError):
            parse_args(['eval', '--data', 'x', '--ckpt', 'y'])

    def test_usage_errors(self):
        assert main([]) == 2
        assert main(['fly']) == 2
        assert main(['eval', '--data', 'x', '--ckpt', 'y', '--report', 'z',
                     '--horizon-s', '3']) == 2

    def test_defaults(self):
        args = parse_args(['train', '--data', 'd', '--out', 'm.ckpt'])
        assert args.command is TrainCommand
        assert (args.preset, args.epochs, args.lr, args.seed) == ('lmcv', 50, 0.01, 0)
        assert args.history is None
        args = parse_args(['ablate', '--data', 'd', '--out', 'r.csv', '--leave-one-out'])
        assert args.leave_one_out is True

    def test_config_file(self):
        filename = self.file('deerwatch.yml', """
        seed: 7
        data: from-config
        train:
          epochs: "3"
          preset: lmv
        """)
        args = parse_args(['-c', filename, 'train', '--out', 'm.ckpt', '--seed', '1'])
        assert args.data == 'from-config'
        assert args.epochs == 3
        assert args.preset == 'lmv'
        # the command line wins
        assert args.seed == 1

    def test_bad_config_file(self):
        filename = self.file('deerwatch.yml', 'train:\n  colour: red\n')
        assert main(['-c', filename, 'train', '--data', 'd', '--out', 'm']) == 2
        filename = self.file('deerwatch.yml', 'train:\n  preset: lmcvx\n')
        assert main(['-c', filename, 'train', '--data', 'd', '--out', 'm']) == 2
        filename = self.file('deerwatch.yml', 'train:\n  epochs: many\n')
        assert main(['-c', filename, 'train', '--data', 'd', '--out', 'm']) == 2


class TestCommands(BaseTest):

    def test_synth(self):
        out = self.file('synth')
        assert main(['-q', 'synth', '--suite', 'crossing', '--count', '2',
                     '--duration', '3', '--out', out]) == 0
        assert path.isfile(path.join(out, 'crossing_0000', 'manifest.json'))
        assert path.isfile(path.join(out, 'crossing_0001', 'flow', '000001.bin'))

    def test_train_and_eval(self):
        data = self.dataset()
        ckpt = self.file('model.ckpt')
        assert main(['-q', 'train', '--data', data, '--size', 'small', '--epochs', '1',
                     '--out', ckpt]) == 0
        assert load_model(ckpt).config.tau == 5
        history = read_csv(self.file('model.loss.csv'))
        assert history[0] == ['epoch', 'mean_loss'] and len(history) == 2

        report = self.file('report.csv')
        assert main(['-q', 'eval', '--data', data, '--ckpt', ckpt, '--horizon-s', '1',
                     '--report', report]) == 0
        rows = read_csv(report)
        assert rows[0] == ['preset', 'horizon_s', 'ade', 'fde', 'min_ade', 'min_fde',
                           'n_windows']
        assert rows[1][0] == 'lmcv'
        assert float(rows[1][1]) == 1.0
        assert rows[1][6] == str(2 * (40 - 5 - 30 + 1))
        assert float(rows[1][4]) <= float(rows[1][2])

    def test_train_is_reproducible(self):
        data = self.dataset()
        histories = []
        for name in ('first.ckpt', 'second.ckpt'):
            assert main(['-q', 'train', '--data', data, '--size', 'small', '--epochs', '2',
                         '--seed', '3', '--out', self.file(name)]) == 0
            with open(self.file(name.replace('.ckpt', '.loss.csv')), 'rb') as f:
                histories.append(f.read())
        assert histories[0] == histories[1]
        assert len(histories[0].splitlines()) == 3

    def test_missing_data(self):
        assert main(['-q', 'train', '--data', self.file('nothing'), '--out',
                     self.file('m.ckpt')]) == 3

    def test_ablate(self):
        data = self.dataset()
        out = self.file('ablation.csv')
        args = argparse.Namespace(data=data, out=out, seed=0, epochs=1, lr=0.01,
                                  flow_source='ground_truth', batch_size=16,
                                  size='small', leave_one_out=False,
                                  ego_predictor='constant_velocity',
                                  external_forecast=None)
        AblateCommand(args, self.log).run()
        rows = read_csv(out)
        assert [r[0] for r in rows[1:]] == ['baseline', 'lcv', 'lmv', 'lmc', 'lmcv']
        # the last set is held out
        assert all(r[6] == str(40 - 5 - 3 + 1) for r in rows[1:])

        args.leave_one_out = True
        AblateCommand(args, self.log).run()
        assert all(r[6] == str(2 * (40 - 5 - 3 + 1)) for r in read_csv(out)[1:])

    def test_external_ego_forecast(self):
        data = self.dataset(count=1)
        with open(path.join(data, 'tiny_0', 'ego.csv'), 'w') as f:
            f.write('frame_index,dx_m,dy_m,dyaw_rad\n')
            for k in range(80):
                f.write('%d,0.0,0.0,0.0\n' % k)
        sequences = load_sequences(data)
        config = small_config('lmcv')

        args = parse_args(['train', '--data', data, '--out', self.file('m.ckpt'),
                           '--ego-predictor', 'external', '--external-forecast', 'ego.csv'])
        samples = TrainCommand(args, self.log).samples(sequences, config)
        assert len(samples) == 40 - 5 - 30 + 1
        assert all(not s.ego.any() for s in samples)

        args = parse_args(['train', '--data', data, '--out', self.file('m.ckpt')])
        samples = TrainCommand(args, self.log).samples(sequences, config)
        assert all((s.ego[:, 0] > 0).all() for s in samples)

        assert main(['-q', 'train', '--data', data, '--size', 'small', '--epochs', '1',
                     '--out', self.file('m.ckpt'), '--ego-predictor', 'external',
                     '--external-forecast', 'ego.csv']) == 0
        assert main(['-q', 'eval', '--data', data, '--ckpt', self.file('m.ckpt'),
                     '--report', self.file('r.csv'), '--ego-predictor', 'external',
                     '--external-forecast', 'ego.csv']) == 0
        # the forecast file is missing
        assert main(['-q', 'eval', '--data', data, '--ckpt', self.file('m.ckpt'),
                     '--report', self.file('r.csv'), '--ego-predictor', 'external',
                     '--external-forecast', 'nothing.csv']) == 3

    def test_external_ego_forecast_needs_a_file(self):
        with pytest.raises(ArgumentError):
            parse_args(['ablate', '--data', 'd', '--out', 'r.csv',
                        '--ego-predictor', 'external'])
        filename = self.file('deerwatch.yml', 'eval:\n  ego_predictor: external\n'
                                              '  external_forecast: ego.csv\n')
        args = parse_args(['-c', filename, 'eval', '--data', 'd', '--ckpt', 'm',
                           '--report', 'r'])
        assert (args.ego_predictor, args.external_forecast) == ('external', 'ego.csv')

    def test_run(self):
        data = self.dataset(duration=30)
        out = self.file('events.jsonl')
        assert main(['-q', 'run', '--data', data, '--forecaster', 'extrapolate',
                     '--out', out]) == 0
        events = read_events(out)
        assert set(e['sequence_id'] for e in events) == {'tiny_0', 'tiny_1'}
        assert {'detection', 'track'} <= set(e['type'] for e in events)

    def test_run_needs_a_model(self):
        assert main(['-q', 'run', '--data', 'd', '--out', 'e.jsonl']) == 2

    def test_run_command(self):
        data = self.dataset(count=1, duration=10)
        args = parse_args(['run', '--data', data, '--forecaster', 'extrapolate',
                           '--out', self.file('events.jsonl')])
        command = RunCommand(args, self.log)
        assert command.pipeline_config().forecaster == 'extrapolate'
        command.run()
        assert read_events(args.out)

        args.data = self.file('missing')
        with pytest.raises(DataError):
            RunCommand(args, self.log).run()

    def test_gradcheck(self, capsys):
        assert main(['-q', 'gradcheck', '--params', '12']) == 0
        assert 'max relative error' in capsys.readouterr().out

    def test_detector(self):
        data = self.dataset(count=1, duration=8)
        ckpt = self.file('detector.ckpt')
        report = self.file('ap.csv')
        assert main(['-q', 'detector', '--data', data, '--epochs', '1', '--out', ckpt,
                     '--report', report]) == 0
        rows = read_csv(report)
        assert rows[0] == ['sequence_id', 'ap', 'iou_threshold', 'n_gt', 'n_pred']
        assert [r[0] for r in rows[1:]] == ['tiny_0', 'all']
