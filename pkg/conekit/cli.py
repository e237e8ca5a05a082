"""Command line interface: `conekit run`, `conekit background`,
`conekit curvature` and `conekit check`.

Exit code 0 means every check that is not an expected failure passed.
"""
import json
import logging
import os

import click
import numpy as np

from conekit.background import (build_background_u, model_geometry,
                                omega0_potential, save_background,
                                volume_expansion_coeffs)
from conekit.cone_charts import ConeParams, charts, pullback
from conekit.config import default_config, load_config
from conekit.curvature import (curvature_holder_report, metric_in_w, riemann,
                               shell_statistics, z_ladder)
from conekit.exceptions import ConekitError, ConfigError
from conekit.glue_max import MollifierSpec, property_suite
from conekit.grid import GridField, write_field
from conekit.harness import emit_plots, rounded, run_suite, write_report
from conekit.weighted_holder import STABLE, phi_bound_scan

logger = logging.getLogger(__name__)

GEOMETRIES = click.Choice(['disc_n1', 'line_bundle_p1'])


def _config(path):
    return default_config() if path is None else load_config(path)


def _echo_json(obj):
    click.echo(json.dumps(rounded(obj), sort_keys=True, indent=1))


def _finish(ctx, passed):
    if not passed:
        ctx.exit(1)


class _Group(click.Group):
    """Maps conekit errors to click errors."""

    def invoke(self, ctx):
        try:
            return super(_Group, self).invoke(ctx)
        except ConfigError as e:
            raise click.UsageError(str(e), ctx)
        except ConekitError as e:
            raise click.ClickException('{}: {}'.format(type(e).__name__, e))


@click.group(cls=_Group)
@click.option('-v', '--verbose', count=True, help='-v for INFO, -vv for DEBUG')
def main(verbose):
    """Numerical checks for conic Kahler metrics."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level,
                        format='%(asctime)s %(name)s %(levelname)s '
                               '%(message)s')


@main.command()
@click.option('--config', 'config_path', type=click.Path(exists=True,
                                                         dir_okay=False),
              help='YAML configuration file')
@click.option('--seed', type=int, default=None, help='override harness.seed')
@click.option('--output', type=click.Path(file_okay=False), default=None,
              help='override harness.output_dir')
@click.pass_context
def run(ctx, config_path, seed, output):
    """Run the verification suite and write its reports."""
    config = _config(config_path)
    report = run_suite(config, seed)
    directory = output or config.harness.output_dir
    path = write_report(report, directory, config.harness.precision)
    emit_plots(report, directory)
    for name, check in report.checks.items():
        click.echo('{:<18} {}'.format(name, check.status))
    click.echo('report: {}'.format(path))
    _finish(ctx, report.passed)


@main.group()
def background():
    """Build and verify the background potential u."""


@background.command('build')
@click.option('--geometry', type=GEOMETRIES, default='disc_n1')
@click.option('--config', 'config_path', type=click.Path(exists=True,
                                                         dir_okay=False))
@click.option('--output', type=click.Path(file_okay=False), required=True)
@click.pass_context
def background_build(ctx, geometry, config_path, output):
    """Glue u and write it with its summary."""
    cfg = _config(config_path).background
    result = build_background_u(model_geometry(geometry, cfg), cfg)
    save_background(result, output)
    click.echo('eta = {}, r = {:.6g}, r_inner = {:.6g}: {}'.format(
        result.eta, result.radii[0], result.radii[1],
        'passed' if result.passed else 'FAILED'))
    _finish(ctx, result.passed)


@background.command('verify')
@click.option('--geometry', type=GEOMETRIES, default='disc_n1')
@click.option('--config', 'config_path', type=click.Path(exists=True,
                                                         dir_okay=False))
@click.pass_context
def background_verify(ctx, geometry, config_path):
    """Print the checks of the glued background."""
    cfg = _config(config_path).background
    result = build_background_u(model_geometry(geometry, cfg), cfg)
    _echo_json(result.to_dict())
    _finish(ctx, result.passed)


@main.group()
def curvature():
    """Curvature of omega_0 in the flattening charts."""


def _background_result(geometry, config):
    cfg = config.background
    return build_background_u(model_geometry(geometry, cfg), cfg)


@curvature.command('compute')
@click.option('--geometry', type=GEOMETRIES, default='disc_n1')
@click.option('--beta', type=float, default=0.75)
@click.option('--config', 'config_path', type=click.Path(exists=True,
                                                         dir_okay=False))
@click.option('--output', type=click.Path(file_okay=False), required=True)
def curvature_compute(geometry, beta, config_path, output):
    """Write |Rm| per chart and the shell statistics."""
    config = _config(config_path)
    result = _background_result(geometry, config)
    grid = z_ladder(result.geom, beta, config.curvature, depth=1)[0]
    potential, flat = omega0_potential(result.geom, result, beta, grid)
    os.makedirs(output, exist_ok=True)
    rows = []
    for chart in charts(beta):
        g = metric_in_w(pullback(potential, chart), flat, config.curvature)
        curv = riemann(g, config.curvature)
        write_field(curv.norm, os.path.join(output,
                                            'norm_w{}.csv'.format(chart.k)))
        rows.extend(shell_statistics(curv, config.curvature.shells))
    path = os.path.join(output, 'shells.json')
    with open(path, 'w') as f:
        json.dump(rounded(rows), f, sort_keys=True, indent=1)
    click.echo('wrote {} charts to {}'.format(len(charts(beta)), output))


@curvature.command('report')
@click.option('--geometry', type=GEOMETRIES, default='disc_n1')
@click.option('--beta', type=float, default=0.75)
@click.option('--alpha', type=float, default=0.3)
@click.option('--config', 'config_path', type=click.Path(exists=True,
                                                         dir_okay=False))
@click.pass_context
def curvature_report(ctx, geometry, beta, alpha, config_path):
    """Holder trends of |Rm(omega_0)| along the refinement ladder."""
    config = _config(config_path)
    result = _background_result(geometry, config)
    levels = z_ladder(result.geom, beta, config.curvature)
    phi = [GridField(np.zeros(g.shape), g, 'z', beta) for g in levels]
    report = curvature_holder_report(phi, result, ConeParams(alpha, beta),
                                     config=config.curvature,
                                     holder=config.holder,
                                     seed=config.harness.seed)
    _echo_json(report.to_dict())
    _finish(ctx, report.verdict == STABLE)


@main.group()
def check():
    """Stand-alone property checks."""


@check.command('phi-bound')
@click.option('--points', type=int, default=1000,
              help='samples per axis')
@click.pass_context
def check_phi_bound(ctx, points):
    """Brute-force maximum of phi(r, t) against 4."""
    scan = phi_bound_scan(points, points)
    _echo_json(scan)
    _finish(ctx, scan['max'] <= 4)


@check.command('m-eta')
@click.option('--eta', type=float, default=None)
@click.option('--config', 'config_path', type=click.Path(exists=True,
                                                         dir_okay=False))
@click.pass_context
def check_m_eta(ctx, eta, config_path):
    """Locality, gradient and convexity properties of M_eta."""
    config = _config(config_path)
    cfg = config.glue
    report = property_suite(MollifierSpec.from_config(cfg, eta), 1000,
                            config.harness.seed, cfg.fd_step, cfg.tolerance)
    _echo_json(report)
    _finish(ctx, report['passed'])


@check.command('expansion')
@click.option('--geometry', type=GEOMETRIES, default='disc_n1')
@click.option('--beta', type=float, default=0.75)
@click.option('--config', 'config_path', type=click.Path(exists=True,
                                                         dir_okay=False))
@click.pass_context
def check_expansion(ctx, geometry, beta, config_path):
    """Volume expansion of omega_0 in powers of |s|^(2 beta)."""
    config = _config(config_path)
    cfg = config.background
    geom = model_geometry(geometry, cfg)
    result = None if beta <= 0.5 else build_background_u(geom, cfg)
    expansion = volume_expansion_coeffs(geom, result, beta, cfg)
    _echo_json(expansion.to_dict())
    _finish(ctx, expansion.a0_positive and expansion.identity['passed'])
