from os import path
import shutil
import tempfile

import pytest

from deerwatch.config import (ConfigError, PipelineConfig, load_config,
                              load_config_from_file, settings_for)


OPTIONS = {
    'train': {'data', 'preset', 'epochs', 'seed'},
    'run': {'data', 'ckpt', 'ttc_threshold', 'seed'},
}


def test_empty_config():
    assert load_config('', OPTIONS) == ({}, {})


def test_globals_and_sections():
    globals_, sections = load_config("""
    seed: 3
    data: /data/crossing
    train:
      preset: lmv
      epochs: 5
    run:
      ttc-threshold: 1.5
    """, OPTIONS)
    assert globals_ == {'seed': 3, 'data': '/data/crossing'}
    assert sections == {'train': {'preset': 'lmv', 'epochs': 5},
                        'run': {'ttc_threshold': 1.5}}


def test_settings_for():
    """Sections override the global values; other commands' keys are left
    out.
    """
    config = load_config("""
    seed: 3
    epochs: 10
    run:
      seed: 4
    """, OPTIONS)
    assert settings_for(config, 'run', OPTIONS) == {'seed': 4}
    assert settings_for(config, 'train', OPTIONS) == {'seed': 3, 'epochs': 10}


def test_unknown_keys():
    with pytest.raises(ConfigError) as e:
        load_config("""
        train:
          preset: lmcv
          colour: red
        """, OPTIONS)
    assert 'train has unsupported configuration values: colour' in str(e.value)

    with pytest.raises(ConfigError):
        load_config('speed: 3', OPTIONS)


def test_bad_structure():
    with pytest.raises(ConfigError):
        load_config('- a\n- b\n', OPTIONS)
    with pytest.raises(ConfigError):
        load_config('train: 5', OPTIONS)


def test_json_works_too():
    assert load_config('{"seed": 1, "run": {"ckpt": "a.ckpt"}}', OPTIONS) == (
        {'seed': 1}, {'run': {'ckpt': 'a.ckpt'}})


class TestFiles(object):

    def setup_method(self, method):
        self._tmpdir = tempfile.mkdtemp()

    def teardown_method(self, method):
        shutil.rmtree(self._tmpdir)

    def test_load_from_file(self):
        filename = path.join(self._tmpdir, 'deerwatch.yml')
        with open(filename, 'w') as f:
            f.write('seed: 2\n')
        assert load_config_from_file(filename, OPTIONS) == ({'seed': 2}, {})

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config_from_file(path.join(self._tmpdir, 'nope.yml'), OPTIONS)

    def test_invalid_yaml(self):
        filename = path.join(self._tmpdir, 'deerwatch.yml')
        with open(filename, 'w') as f:
            f.write('seed: [1, 2\n')
        with pytest.raises(ConfigError):
            load_config_from_file(filename, OPTIONS)


def test_pipeline_defaults():
    config = PipelineConfig(ckpt='lmcv.ckpt').validate()
    assert config.detector == 'oracle'
    assert config.ego_predictor == 'constant_velocity'
    assert config.flow_source == 'ground_truth'
    assert config.ttc_threshold == 2.0
    assert config.iou_threshold == 0.3
    assert config.max_misses == 5
    assert config.predict_stride == 1
    assert config.corridor_half_width == 1.5


def test_pipeline_validation():
    invalid = [
        {'ckpt': 'a', 'detector': 'yolo'},
        {'ckpt': 'a', 'detector': 'heatmap'},
        {'ckpt': 'a', 'ego_predictor': 'guess'},
        {'ckpt': 'a', 'ego_predictor': 'external'},
        {'ckpt': 'a', 'flow_source': 'optical'},
        {'forecaster': 'model'},
        {'forecaster': 'oracle'},
        {'ckpt': 'a', 'iou_threshold': 1.0},
        {'ckpt': 'a', 'risk_threshold': 1.5},
        {'ckpt': 'a', 'max_misses': -1},
        {'ckpt': 'a', 'predict_stride': 0},
        {'ckpt': 'a', 'vehicle_length': 0},
    ]
    for initial in invalid:
        with pytest.raises(ConfigError):
            PipelineConfig(**initial).validate()

    PipelineConfig(forecaster='extrapolate').validate()
    PipelineConfig(ckpt='a', detector='heatmap', detector_ckpt='d').validate()
    PipelineConfig(ckpt='a', ego_predictor='external', external_forecast='e.csv').validate()
