"""Test loading and validating configuration files."""
import pytest
import numpy as np
import yaml
from conekit.config import (EXPERIMENTS, default_config, dump_config,
                            from_dict, load_config, to_dict)
from conekit.exceptions import ConfigError


def test_defaults():
    config = default_config()
    assert config.grid.levels == [32, 64, 128]
    assert config.holder.growth_factor == 1.5
    assert config.poisson.ladder == list(range(3, 13))
    assert np.isclose(config.background.sup_s2, np.exp(-2))
    assert config.background.eta_ladder[0] == 1
    assert config.background.eta_ladder[-1] == 2.0 ** -10
    assert config.curvature.shells == [2, 8]
    assert config.harness.experiments == list(EXPERIMENTS)
    assert config.harness.expected_fail == ['negative_control']


def test_from_dict_overrides():
    config = from_dict({'glue': {'eta': 0.5}, 'harness': {'seed': 7},
                        'poisson': None})
    assert config.glue.eta == 0.5
    assert config.glue.nodes == 64
    assert config.harness.seed == 7
    assert from_dict(None).glue.eta == 1.0


@pytest.mark.parametrize('data', [[1, 2], {'plots': {}},
                                  {'glue': {'colour': 1}},
                                  {'glue': 3},
                                  {'poisson': {'n_sigma': [128, 64, 64]}},
                                  {'grid': {'levels': [32, 32]}},
                                  {'grid': {'levels': [32.0, 64.0]}},
                                  {'background': {'k_ladder': []}}])
def test_from_dict_rejects(data):
    with pytest.raises(ConfigError):
        from_dict(data)


def test_dump_and_load(tmp_path):
    config = from_dict({'curvature': {'n_theta': 16}})
    path = str(tmp_path / 'config.yaml')
    dump_config(config, path)
    assert to_dict(load_config(path)) == to_dict(config)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / 'missing.yaml'))
    path = tmp_path / 'bad.yaml'
    path.write_text('glue: [unclosed')
    with pytest.raises(ConfigError):
        load_config(str(path))
    path.write_text(yaml.safe_dump({'glue': {'eta': 2.0}}))
    assert load_config(str(path)).glue.eta == 2.0


def test_ladders_accept_increasing_integers():
    config = from_dict({'poisson': {'n_sigma': [32, 64]},
                        'grid': {'levels': [16]}})
    assert config.poisson.n_sigma == [32, 64]
    assert config.grid.levels == [16]
