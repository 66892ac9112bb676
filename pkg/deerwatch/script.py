from __future__ import print_function

import argparse
import logging
from os import path
import sys

from . import config as config_module
from .config import ConfigError, DETECTOR_KINDS, FORECASTER_KINDS, PipelineConfig
from .core import DataError, find_sequences, make_leave_one_out_folds, open_sequence
from .egomotion import (
    CONSTANT_VELOCITY, EXTERNAL, PREDICTOR_KINDS, read_external_forecast)
from .features import window_samples
from .flow import FLOW_SOURCES, GROUND_TRUTH
from .metrics import EvalReport, evaluate, write_report
from .perception import evaluate_detector, train_detector, write_ap_report
from .pipeline import Pipeline, warning_lead, write_events
from .synth import SUITES, corridor_entry_frame, read_scenario, write_suite
from .training import Trainer, gradient_check, write_loss_history
from .trajnet import (NumericError, PRESETS, load_model, preset_config,
                      save_model, small_config)


class ArgumentError(Exception):
    pass


# Largest relative error a gradient check may report and still pass.
GRADCHECK_TOLERANCE = 1e-3

MODEL_SIZES = ('full', 'small')


def load_sequences(root):
    return [open_sequence(directory) for directory in find_sequences(root)]


def model_config(preset, size):
    if size == 'small':
        return small_config(preset)
    return preset_config(preset)


def without_disabled_streams(sample, config):
    """Drop the inputs of the streams ``config`` switches off."""
    return sample._replace(flow=sample.flow if config.use_motion else None,
                           context=sample.context if config.use_context else None,
                           ego=sample.ego if config.use_ego else None)


class Command(object):

    help = ''
    description = ''
    # Options that must be given, on the command line or in the config file.
    required = ()
    # Values for options given neither way.
    defaults = {}

    def __init__(self, args, log):
        self.args = args
        self.log = log

    @classmethod
    def setup_arg_parser(cls, parser):
        pass

    @classmethod
    def validate_args(cls, args):
        for name in cls.required:
            if getattr(args, name, None) is None:
                raise ArgumentError('--%s is required' % name.replace('_', '-'))

    def run(self):
        raise NotImplementedError()


class WindowCommand(Command):
    """Base of the commands that turn sequences into observation windows."""

    @classmethod
    def setup_ego_arguments(cls, parser):
        parser.add_argument('--ego-predictor', dest='ego_predictor',
                            choices=PREDICTOR_KINDS,
                            help='default constant_velocity')
        parser.add_argument('--external-forecast', dest='external_forecast',
                            help='ego motion forecast CSV for the external '
                                 'predictor, looked up in each sequence '
                                 'directory first')

    @classmethod
    def validate_args(cls, args):
        super(WindowCommand, cls).validate_args(args)
        if args.ego_predictor == EXTERNAL and not args.external_forecast:
            raise ArgumentError('the external ego predictor needs --external-forecast')

    def external_forecast(self, sequence):
        if self.args.ego_predictor != EXTERNAL:
            return None
        filename = self.args.external_forecast
        if sequence.root and not path.isabs(filename):
            candidate = path.join(sequence.root, filename)
            if path.isfile(candidate):
                filename = candidate
        return read_external_forecast(filename)

    def samples(self, sequences, config, horizon=None):
        a = self.args
        samples = []
        for sequence in sequences:
            samples.extend(window_samples(
                [sequence], config, a.flow_source, horizon=horizon,
                ego_predictor=a.ego_predictor,
                external=self.external_forecast(sequence)))
        return samples


class SynthCommand(Command):

    help = 'render a suite of synthetic scenarios'
    description = 'Render COUNT scenarios of a suite into one directory ' \
                  'each below OUT, with frames, annotations, odometry, ' \
                  'ground truth flow and the scenario description.'
    required = ('suite', 'count', 'out')
    defaults = {'seed': 0, 'duration': 120, 'sets': 5}

    @classmethod
    def setup_arg_parser(cls, parser):
        parser.add_argument('--suite', choices=SUITES, help='scenario family')
        parser.add_argument('--count', type=int, help='number of scenarios')
        parser.add_argument('--seed', type=int, help='random seed (default 0)')
        parser.add_argument('--out', help='output directory')
        parser.add_argument('--duration', type=int,
                            help='frames per scenario (default 120)')
        parser.add_argument('--sets', type=int,
                            help='number of sets to spread the scenarios over (default 5)')

    def run(self):
        a = self.args
        scenarios = write_suite(a.suite, a.count, a.seed, a.out, duration=a.duration,
                                n_sets=a.sets)
        self.log.info('Wrote %d %s scenarios to %s', len(scenarios), a.suite, a.out)


class TrainCommand(WindowCommand):

    help = 'train a trajectory model'
    description = 'Train one preset of the trajectory network on every ' \
                  'window found below DATA and save the checkpoint.'
    required = ('data', 'out')
    defaults = {'preset': 'lmcv', 'epochs': 50, 'lr': 0.01, 'seed': 0,
                'flow_source': GROUND_TRUTH, 'batch_size': 16, 'size': 'full',
                'ego_predictor': CONSTANT_VELOCITY}

    @classmethod
    def setup_arg_parser(cls, parser):
        parser.add_argument('--data', help='dataset directory')
        parser.add_argument('--preset', choices=list(PRESETS),
                            help='which streams to use (default lmcv)')
        parser.add_argument('--epochs', type=int, help='default 50')
        parser.add_argument('--lr', type=float, help='learning rate (default 0.01)')
        parser.add_argument('--seed', type=int, help='random seed (default 0)')
        parser.add_argument('--out', help='checkpoint to write')
        parser.add_argument('--history',
                            help='loss history CSV (default: next to the checkpoint)')
        parser.add_argument('--flow-source', dest='flow_source', choices=FLOW_SOURCES,
                            help='default ground_truth')
        parser.add_argument('--batch-size', dest='batch_size', type=int,
                            help='default 16')
        parser.add_argument('--size', choices=MODEL_SIZES,
                            help='network size (default full)')
        cls.setup_ego_arguments(parser)

    def run(self):
        a = self.args
        config = model_config(a.preset, a.size)
        samples = self.samples(load_sequences(a.data), config)
        if not samples:
            raise DataError('no windows of %d frames in %s' % (
                config.tau + config.horizon, a.data))
        self.log.info('Training %s on %d windows', config.preset, len(samples))
        trainer = Trainer(config, self.log, seed=a.seed, lr=a.lr, batch_size=a.batch_size)
        history = trainer.fit(samples, a.epochs)
        save_model(trainer.model, a.out)
        write_loss_history(history, a.history or path.splitext(a.out)[0] + '.loss.csv')
        self.log.info('Saved %s', a.out)


class EvalCommand(WindowCommand):

    help = 'evaluate a trajectory model'
    description = 'Forecast every window below DATA over the given horizon ' \
                  'and write ADE and FDE to a CSV report.'
    required = ('data', 'ckpt', 'report')
    defaults = {'horizon_s': 1.0, 'flow_source': GROUND_TRUTH, 'seed': 0,
                'ego_predictor': CONSTANT_VELOCITY}

    @classmethod
    def setup_arg_parser(cls, parser):
        parser.add_argument('--data', help='dataset directory')
        parser.add_argument('--ckpt', help='trajectory model checkpoint')
        parser.add_argument('--horizon-s', dest='horizon_s', type=float,
                            choices=(1.0, 2.0, 4.0),
                            help='forecast horizon in seconds (default 1)')
        parser.add_argument('--report', help='CSV report to write')
        parser.add_argument('--flow-source', dest='flow_source', choices=FLOW_SOURCES,
                            help='default ground_truth')
        parser.add_argument('--seed', type=int, help='random seed (default 0)')
        cls.setup_ego_arguments(parser)

    def run(self):
        a = self.args
        model = load_model(a.ckpt)
        config = model.config
        horizon = int(round(a.horizon_s * config.frame_rate))
        samples = self.samples(load_sequences(a.data), config, horizon=horizon)
        if not samples:
            raise DataError('no windows of %d frames in %s' % (
                config.tau + horizon, a.data))
        report = evaluate(model, samples, horizon, seed=a.seed)
        write_report([report], a.report)
        row = report.row()
        self.log.info('%s at %gs over %d windows: ADE %.4f, FDE %.4f, '
                      'min ADE %.4f, min FDE %.4f', row[0], row[1], row[6], *row[2:6])


class AblateCommand(WindowCommand):

    help = 'train and evaluate every preset'
    description = 'Train and evaluate each of the five presets on the same ' \
                  'data and write one report row per preset. By default ' \
                  'the last set is held out for evaluation; with ' \
                  '--leave-one-out every set is held out once.'
    required = ('data', 'out')
    defaults = {'seed': 0, 'epochs': 50, 'lr': 0.01, 'flow_source': GROUND_TRUTH,
                'batch_size': 16, 'size': 'full', 'leave_one_out': False,
                'ego_predictor': CONSTANT_VELOCITY}

    @classmethod
    def setup_arg_parser(cls, parser):
        parser.add_argument('--data', help='dataset directory')
        parser.add_argument('--out', help='CSV report to write')
        parser.add_argument('--seed', type=int, help='random seed (default 0)')
        parser.add_argument('--epochs', type=int, help='default 50')
        parser.add_argument('--lr', type=float, help='learning rate (default 0.01)')
        parser.add_argument('--leave-one-out', dest='leave_one_out',
                            action='store_true', default=None,
                            help='evaluate on each set in turn')
        parser.add_argument('--flow-source', dest='flow_source', choices=FLOW_SOURCES,
                            help='default ground_truth')
        parser.add_argument('--batch-size', dest='batch_size', type=int,
                            help='default 16')
        parser.add_argument('--size', choices=MODEL_SIZES,
                            help='network size (default full)')
        cls.setup_ego_arguments(parser)

    def folds(self, sequences):
        set_ids = sorted(set(s.set_id for s in sequences))
        if len(set_ids) < 2:
            self.log.warning('Only one set (%s), evaluating on the training data',
                             ', '.join(set_ids))
            return [(set_ids, set_ids)]
        if self.args.leave_one_out:
            return [(f.train, f.test) for f in make_leave_one_out_folds(set_ids)]
        return [(set_ids[:-1], set_ids[-1:])]

    def run(self):
        a = self.args
        sequences = load_sequences(a.data)
        full = model_config('lmcv', a.size)
        by_set = {}
        for sequence in sequences:
            by_set.setdefault(sequence.set_id, []).extend(
                self.samples([sequence], full))

        reports = []
        for preset in PRESETS:
            config = model_config(preset, a.size)
            report = EvalReport(preset, config.horizon / config.frame_rate)
            for train_sets, test_sets in self.folds(sequences):
                train = [without_disabled_streams(s, config)
                         for set_id in train_sets for s in by_set.get(set_id, [])]
                test = [without_disabled_streams(s, config)
                        for set_id in test_sets for s in by_set.get(set_id, [])]
                if not train or not test:
                    raise DataError('no windows to train or evaluate on for sets %s' % (
                        ', '.join(test_sets)))
                self.log.info('%s: training on %s, testing on %s', preset,
                              ', '.join(train_sets), ', '.join(test_sets))
                trainer = Trainer(config, self.log, seed=a.seed, lr=a.lr,
                                  batch_size=a.batch_size)
                trainer.fit(train, a.epochs)
                report.extend(evaluate(trainer.model, test, config.horizon, seed=a.seed))
            reports.append(report)
            self.log.info('%s: ADE %.4f, FDE %.4f', preset, *report.row()[2:4])
        write_report(reports, a.out)


class RunCommand(Command):

    help = 'run the detection, tracking and warning loop'
    description = 'Run the full loop over every sequence below DATA and ' \
                  'write the events as JSON lines.'
    required = ('data', 'out')

    @classmethod
    def setup_arg_parser(cls, parser):
        parser.add_argument('--data', help='dataset directory')
        parser.add_argument('--ckpt', help='trajectory model checkpoint')
        parser.add_argument('--ttc-threshold', dest='ttc_threshold', type=float,
                            help='warn below this time to collision (default 2.0s)')
        parser.add_argument('--out', help='events file to write')
        parser.add_argument('--predict-stride', dest='predict_stride', type=int,
                            help='forecast a track every N frames (default 1)')
        parser.add_argument('--detector', choices=DETECTOR_KINDS,
                            help='default oracle')
        parser.add_argument('--detector-ckpt', dest='detector_ckpt',
                            help='checkpoint of the heatmap detector')
        parser.add_argument('--forecaster', choices=FORECASTER_KINDS,
                            help='default model')
        parser.add_argument('--ego-predictor', dest='ego_predictor',
                            choices=PREDICTOR_KINDS,
                            help='default constant_velocity')
        parser.add_argument('--external-forecast', dest='external_forecast',
                            help='ego motion forecast CSV for the external predictor')
        parser.add_argument('--flow-source', dest='flow_source', choices=FLOW_SOURCES,
                            help='default ground_truth')
        parser.add_argument('--iou-threshold', dest='iou_threshold', type=float,
                            help='track association threshold (default 0.3)')
        parser.add_argument('--max-misses', dest='max_misses', type=int,
                            help='frames a track may go undetected (default 5)')
        parser.add_argument('--risk-threshold', dest='risk_threshold', type=float,
                            help='risk score above which a deer is high risk (default 0.5)')
        parser.add_argument('--corridor-half-width', dest='corridor_half_width',
                            type=float, help='meters (default 1.5)')
        parser.add_argument('--vehicle-length', dest='vehicle_length', type=float,
                            help='meters (default 4.5)')
        parser.add_argument('--seed', type=int, help='random seed (default 0)')

    def pipeline_config(self):
        keys = ('ckpt', 'ttc_threshold', 'predict_stride', 'detector', 'detector_ckpt',
                'forecaster', 'ego_predictor', 'external_forecast', 'flow_source',
                'iou_threshold', 'max_misses', 'risk_threshold',
                'corridor_half_width', 'vehicle_length', 'seed')
        initial = dict((k, getattr(self.args, k)) for k in keys
                       if getattr(self.args, k) is not None)
        return PipelineConfig(**initial).validate()

    def report_lead(self, sequence, events, config):
        filename = path.join(sequence.root or '', 'scenario.json')
        if not sequence.root or not path.isfile(filename):
            return
        scenario = read_scenario(filename)
        for deer in scenario.deer:
            entry = corridor_entry_frame(scenario, deer, config.corridor_half_width)
            if entry is None:
                continue
            lead = warning_lead(events, entry, scenario.frame_rate)
            if lead is None:
                self.log.info('%s: %s enters the corridor at frame %d, no warning',
                              sequence.sequence_id, deer.track_id, entry)
            else:
                self.log.info('%s: %s enters the corridor at frame %d, warned %.2fs ahead',
                              sequence.sequence_id, deer.track_id, entry, lead)

    def run(self):
        config = self.pipeline_config()
        events = []
        for sequence in load_sequences(self.args.data):
            pipeline = Pipeline(config, sequence, self.log)
            sequence_events = pipeline.run()
            self.report_lead(sequence, sequence_events, config)
            for event in sequence_events:
                event['sequence_id'] = sequence.sequence_id
            events.extend(sequence_events)
        write_events(events, self.args.out)


class GradcheckCommand(Command):

    help = 'check the gradients of a small trajectory model'
    description = 'Compare analytic and numeric gradients of the training ' \
                  'loss on a small 64-bit model. Fails with exit status 4 ' \
                  'if any relative error reaches %g.' % GRADCHECK_TOLERANCE
    defaults = {'seed': 0, 'params': 24}

    @classmethod
    def setup_arg_parser(cls, parser):
        parser.add_argument('--seed', type=int, help='random seed (default 0)')
        parser.add_argument('--params', type=int,
                            help='parameters to check (default 24)')

    def run(self):
        result = gradient_check(seed=self.args.seed, n_params=self.args.params,
                                log=self.log)
        for group, name, index, analytic, numeric, error in result.checked:
            self.log.debug('%s %s[%d]: analytic %.6g, numeric %.6g, error %.3g',
                           group, name, index, analytic, numeric, error)
        if result.max_error >= GRADCHECK_TOLERANCE:
            raise NumericError('gradient check failed: max relative error %.3g'
                               % result.max_error)
        print('max relative error %.3g' % result.max_error)


class DetectorCommand(Command):

    help = 'train the heatmap detector'
    description = 'Train the deer detector on the frames below DATA, save ' \
                  'it, and optionally write an average precision report.'
    required = ('data', 'out')
    defaults = {'epochs': 20, 'seed': 0, 'lr': 0.01}

    @classmethod
    def setup_arg_parser(cls, parser):
        parser.add_argument('--data', help='dataset directory')
        parser.add_argument('--epochs', type=int, help='default 20')
        parser.add_argument('--seed', type=int, help='random seed (default 0)')
        parser.add_argument('--lr', type=float, help='learning rate (default 0.01)')
        parser.add_argument('--out', help='checkpoint to write')
        parser.add_argument('--report', help='AP report CSV to write')

    def run(self):
        a = self.args
        sequences = load_sequences(a.data)
        detector, _ = train_detector(sequences, epochs=a.epochs, seed=a.seed, lr=a.lr,
                                     log=self.log)
        detector.save(a.out)
        if a.report:
            rows = evaluate_detector(detector, sequences)
            write_ap_report(rows, a.report)
            self.log.info('AP over all frames: %.3f', rows[-1][1])


COMMANDS = {
    'synth': SynthCommand,
    'train': TrainCommand,
    'eval': EvalCommand,
    'ablate': AblateCommand,
    'run': RunCommand,
    'gradcheck': GradcheckCommand,
    'detector': DetectorCommand,
}


def apply_config(args, filename, actions):
    """Fill options not given on the command line from the config file."""
    options = dict((name, set(a)) for name, a in actions.items())
    loaded = config_module.load_config_from_file(filename, options)
    settings = config_module.settings_for(loaded, args.command_name, options)
    for key, value in settings.items():
        if getattr(args, key, None) is not None:
            continue
        action = actions[args.command_name][key]
        if action.type is not None and value is not None:
            try:
                value = action.type(value)
            except (TypeError, ValueError):
                raise ConfigError('invalid value for %s: %r' % (key, value))
        if action.choices is not None and value not in action.choices:
            raise ConfigError('invalid value for %s: %r (choose from %s)' % (
                key, value, ', '.join(map(str, action.choices))))
        setattr(args, key, value)


def parse_args(argv):
    """Parse the command line, merged with the config file if one is given.
    """
    parser = argparse.ArgumentParser(
        description='Deer collision warning: synthetic data, trajectory '
                    'forecasting and the warning loop.')
    group = parser.add_mutually_exclusive_group()
    group.add_argument('-q', action='store_true', dest='quiet', help='be quiet')
    group.add_argument('-v', action='store_true', dest='verbose', help='be verbose')
    parser.add_argument('--config', '-c', help='use the given config file')

    subparsers = parser.add_subparsers(
        title="commands", description="commands may offer additional options",
        dest='command_name')
    subparsers.required = True
    actions = {}
    for cmd_name, cmd_klass in COMMANDS.items():
        subparser = subparsers.add_parser(cmd_name, help=cmd_klass.help,
                                          description=cmd_klass.description,
                                          add_help=False)
        subparser.set_defaults(command=cmd_klass)
        group = subparser.add_argument_group(
            title="optional arguments for this command")
        # We manually add the --help option so that we can have a
        # custom group title, but only show a single group.
        group.add_argument('-h', '--help', action='help',
                           default=argparse.SUPPRESS,
                           help='show this help message and exit')
        cmd_klass.setup_arg_parser(group)
        actions[cmd_name] = dict((a.dest, a) for a in subparser._actions
                                 if a.dest not in ('help', argparse.SUPPRESS))

    args = parser.parse_args(argv)

    if args.config:
        apply_config(args, args.config, actions)
    for key, value in args.command.defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    # The command may want to do some validation regarding its own options.
    args.command.validate_args(args)

    return args


def main(argv):
    try:
        args = parse_args(argv)
    except SystemExit as e:
        # argparse has already printed usage
        return e.code
    except (ArgumentError, ConfigError) as e:
        print("Error: %s" % e)
        return 2

    # Setup logging
    level = logging.WARNING if args.quiet else (
        logging.DEBUG if args.verbose else logging.INFO)
    ch = logging.StreamHandler()
    ch.setFormatter(logging.Formatter("%(message)s"))
    log = logging.getLogger()
    log.setLevel(level)
    log.addHandler(ch)

    command = args.command(args, log)
    try:
        command.run()
    except ConfigError as e:
        log.error('Error: %s', e)
        return 2
    except (DataError, IOError) as e:
        log.error('Error: %s', e)
        return 3
    except NumericError as e:
        log.error('Error: %s', e)
        return 4
    except ValueError as e:
        log.error('Error: %s', e)
        return 2
    return 0


def run():
    sys.exit(main(sys.argv[1:]) or 0)


if __name__ == '__main__':
    run()
