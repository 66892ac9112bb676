"""
Settings read from a config file.

The format is YAML (JSON works too) that looks like this:

    # Global values, valid for all commands unless overridden:
    seed: 0
    data: /data/deer/crossing

    train:
      preset: lmcv
      epochs: 50
      lr: 0.01

    run:
      ckpt: lmcv.ckpt
      detector: oracle
      ego-predictor: constant_velocity
      flow-source: ground_truth
      ttc-threshold: 2.0

Keys are the long command line flags, written with dashes or underscores.
A section named after a command overrides the global values for that
command; flags given on the command line override both.
"""
import yaml

from .egomotion import PREDICTOR_KINDS, CONSTANT_VELOCITY
from .flow import FLOW_SOURCES, GROUND_TRUTH


__all__ = ('PipelineConfig', 'load_config', 'load_config_from_file',
           'settings_for', 'ConfigError', 'DETECTOR_KINDS', 'FORECASTER_KINDS')


DETECTOR_KINDS = ('oracle', 'heatmap')
FORECASTER_KINDS = ('model', 'extrapolate')


class ConfigError(Exception):
    pass


def normalize_key(key):
    return str(key).replace('-', '_')


class PipelineConfig(object):
    """Everything the tracking loop needs to know."""

    def __init__(self, **initial):
        self.detector = initial.get('detector', 'oracle')
        self.detector_ckpt = initial.get('detector_ckpt')
        self.ego_predictor = initial.get('ego_predictor', CONSTANT_VELOCITY)
        self.external_forecast = initial.get('external_forecast')
        self.flow_source = initial.get('flow_source', GROUND_TRUTH)
        self.forecaster = initial.get('forecaster', 'model')
        self.ckpt = initial.get('ckpt')
        self.ttc_threshold = float(initial.get('ttc_threshold', 2.0))
        self.iou_threshold = float(initial.get('iou_threshold', 0.3))
        self.max_misses = int(initial.get('max_misses', 5))
        self.predict_stride = int(initial.get('predict_stride', 1))
        self.corridor_half_width = float(initial.get('corridor_half_width', 1.5))
        self.vehicle_length = float(initial.get('vehicle_length', 4.5))
        self.risk_threshold = float(initial.get('risk_threshold', 0.5))
        self.seed = int(initial.get('seed', 0))

    def validate(self):
        if self.detector not in DETECTOR_KINDS:
            raise ConfigError('unknown detector "%s", expected one of: %s' % (
                self.detector, ', '.join(DETECTOR_KINDS)))
        if self.detector == 'heatmap' and not self.detector_ckpt:
            raise ConfigError('the heatmap detector needs a detector checkpoint')
        if self.ego_predictor not in PREDICTOR_KINDS:
            raise ConfigError('unknown ego predictor "%s", expected one of: %s' % (
                self.ego_predictor, ', '.join(PREDICTOR_KINDS)))
        if self.ego_predictor == 'external' and not self.external_forecast:
            raise ConfigError('the external ego predictor needs a forecast file')
        if self.flow_source not in FLOW_SOURCES:
            raise ConfigError('unknown flow source "%s", expected one of: %s' % (
                self.flow_source, ', '.join(FLOW_SOURCES)))
        if self.forecaster not in FORECASTER_KINDS:
            raise ConfigError('unknown forecaster "%s", expected one of: %s' % (
                self.forecaster, ', '.join(FORECASTER_KINDS)))
        if self.forecaster == 'model' and not self.ckpt:
            raise ConfigError('the model forecaster needs a checkpoint')
        if not 0 < self.iou_threshold < 1:
            raise ConfigError('iou threshold must be in (0, 1)')
        if not 0 <= self.risk_threshold <= 1:
            raise ConfigError('risk threshold must be in [0, 1]')
        if self.max_misses < 0:
            raise ConfigError('max misses must not be negative')
        if self.predict_stride < 1:
            raise ConfigError('predict stride must be at least 1')
        if self.corridor_half_width <= 0 or self.vehicle_length <= 0:
            raise ConfigError('corridor half width and vehicle length must be positive')
        return self


def load_config(text, options):
    """Load the config text and return ``(globals, sections)``.

    ``options`` maps each command name to the set of keys it accepts. Keys
    are normalized to underscores; anything no command knows about is an
    error.
    """
    config = yaml.safe_load(text) or {}
    if not isinstance(config, dict):
        raise ConfigError('config must be a mapping, not %s' % type(config).__name__)
    config = dict((normalize_key(k), v) for k, v in config.items())
    everything = set()
    for keys in options.values():
        everything.update(keys)

    sections = {}
    for command in options:
        section = config.pop(command, None)
        if section is None:
            continue
        if not isinstance(section, dict):
            raise ConfigError('%s: section must be a mapping' % command)
        section = dict((normalize_key(k), v) for k, v in section.items())
        unknown = [k for k in section if k not in options[command]]
        if unknown:
            raise ConfigError('%s has unsupported configuration values: %s' % (
                command, ", ".join(sorted(unknown))))
        sections[command] = section

    unknown = [k for k in config if k not in everything]
    if unknown:
        raise ConfigError('config has unsupported configuration values: %s' % (
            ", ".join(sorted(unknown))))
    return config, sections


def load_config_from_file(filename, options):
    try:
        with open(filename, 'rb') as f:
            return load_config(f.read(), options)
    except (IOError, yaml.YAMLError) as e:
        raise ConfigError('%s: %s' % (filename, e))


def settings_for(config, command, options):
    """Merge the global values and the section of ``command``, keeping only
    keys the command accepts.
    """
    globals_, sections = config
    merged = dict((k, v) for k, v in globals_.items() if k in options[command])
    merged.update(sections.get(command, {}))
    return merged
