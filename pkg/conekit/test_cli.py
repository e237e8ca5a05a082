"""Test the command line interface."""
import json
import os

import pytest
import yaml
from click.testing import CliRunner
from conekit import harness
from conekit.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def _write_config(tmp_path, data):
    path = str(tmp_path / 'config.yaml')
    with open(path, 'w') as f:
        yaml.safe_dump(data, f)
    return path


def test_run(runner, tmp_path):
    path = _write_config(tmp_path, {'harness': {'experiments': ['flattening'],
                                                'expected_fail': []}})
    out = str(tmp_path / 'out')
    result = runner.invoke(main, ['run', '--config', path, '--seed', '5',
                                  '--output', out])
    assert result.exit_code == 0, result.output
    assert 'flattening' in result.output
    with open(os.path.join(out, 'report.json')) as f:
        report = json.load(f)
    assert report['seed'] == 5
    assert report['passed']
    assert os.path.exists(os.path.join(out, 'decay_fits.csv'))


def test_run_failure_exit_code(runner, tmp_path, monkeypatch):
    def failing(ctx, out):
        out.measure('value', 2.0, 1.0)

    monkeypatch.setitem(harness._EXPERIMENTS, 'flattening', failing)
    path = _write_config(tmp_path, {'harness': {'experiments': ['flattening'],
                                                'expected_fail': []}})
    result = runner.invoke(main, ['run', '--config', path, '--output',
                                  str(tmp_path / 'out')])
    assert result.exit_code == 1


@pytest.mark.parametrize('data', [{'harness': {'experiments': []}},
                                  {'harness': {'colour': 'blue'}},
                                  {'plots': {}}])
def test_run_usage_errors(runner, tmp_path, data):
    path = _write_config(tmp_path, data)
    result = runner.invoke(main, ['run', '--config', path, '--output',
                                  str(tmp_path / 'out')])
    assert result.exit_code == 2


def test_check_phi_bound(runner):
    result = runner.invoke(main, ['check', 'phi-bound', '--points', '200'])
    assert result.exit_code == 0, result.output
    scan = json.loads(result.output)
    assert scan['points'] == 200 * 200
    assert scan['max'] <= 4


def test_check_m_eta(runner):
    result = runner.invoke(main, ['check', 'm-eta', '--eta', '0.5'])
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)['eta'] == 0.5
    result = runner.invoke(main, ['check', 'm-eta', '--eta', '-1'])
    assert result.exit_code == 1
    assert 'ParameterError' in result.output


def test_check_expansion(runner):
    result = runner.invoke(main, ['check', 'expansion', '--beta', '0.4'])
    assert result.exit_code == 0, result.output
    out = json.loads(result.output)
    assert out['k'] == 0
    assert out['a0_positive']


def test_check_expansion_conditioning(runner):
    result = runner.invoke(main, ['check', 'expansion', '--geometry',
                                  'line_bundle_p1', '--beta', '0.5'])
    assert result.exit_code == 1
    assert 'ConditioningError' in result.output


def test_background_build(runner, tmp_path):
    out = str(tmp_path / 'bg')
    result = runner.invoke(main, ['background', 'build', '--output', out])
    assert result.exit_code == 0, result.output
    assert 'eta = 0.5' in result.output
    assert os.path.exists(os.path.join(out, 'u.csv'))
    with open(os.path.join(out, 'background.json')) as f:
        assert json.load(f)['passed']


def test_curvature_compute(runner, tmp_path):
    path = _write_config(tmp_path, {'curvature': {'n_rho_per_shell': 4,
                                                  'n_theta': 32}})
    out = str(tmp_path / 'curv')
    result = runner.invoke(main, ['curvature', 'compute', '--config', path,
                                  '--output', out])
    assert result.exit_code == 0, result.output
    for k in [1, 2, 3]:
        assert os.path.exists(os.path.join(out, 'norm_w{}.csv'.format(k)))
    with open(os.path.join(out, 'shells.json')) as f:
        rows = json.load(f)
    assert len(rows) == 3 * 7
