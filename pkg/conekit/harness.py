"""Verification suite: runs the numerical checks in dependency order and
writes deterministic JSON reports and tabular plot data.

Each experiment fills a CheckResult with measurements. A measurement is a
value, the bound it is compared with, the relation and the outcome, so every
number in the report carries its tolerance and its source check.
"""
import json
import logging
import os
import platform
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import scipy
import torch

import conekit
from conekit.background import (build_background_u, ladder_membership,
                                log_volume_ratio, model_geometry,
                                ricci_identity_residual, ricci_potential,
                                volume_expansion_coeffs)
from conekit.cone_charts import (ConeParams, WPoint, charts, covering_check,
                                 flattening_error, psi)
from conekit.cone_poisson import (check_decay, convergence_orders,
                                  discrete_residual, disc_grid,
                                  extract_expansion, manufactured_cases,
                                  solve_case, unfolded_rhs)
from conekit.config import EXPERIMENTS, default_config, to_dict
from conekit.curvature import (curvature_field, curvature_holder_report,
                               gaussian_curvature, metric_in_w, riemann,
                               z_ladder)
from conekit.exceptions import ConekitError, ConfigError
from conekit.glue_max import MollifierSpec, property_suite
from conekit.grid import BoxGrid, GridField, box_grid, polar_grid, sample
from conekit.weighted_holder import (DIVERGING, STABLE, phase_bound_check,
                                     phase_multiply, phi_bound_scan)

logger = logging.getLogger(__name__)

PASSED = 'passed'
FAILED = 'failed'
ERROR = 'error'
EXPECTED_FAIL = 'expected_fail'
UNEXPECTED_PASS = 'unexpected_pass'

REPORT_FILE = 'report.json'
TIMINGS_FILE = 'timings.json'


def _compare(value, bound, relation):
    if relation == '<=':
        return value <= bound
    if relation == '>=':
        return value >= bound
    if relation == '==':
        return value == bound
    raise ConfigError('unknown relation {!r}'.format(relation))


@dataclass
class CheckResult:
    """Measurements and plot data of one experiment.

       Guard measurements must pass even in an expected-fail experiment;
       they pin down how a negative control is supposed to fail.
    """
    name: str
    expected_fail: bool = False
    measurements: List[dict] = field(default_factory=list)
    data: Dict[str, list] = field(default_factory=dict)
    error: Optional[str] = None

    def measure(self, name, value, bound, relation='<=', guard=False):
        if isinstance(value, (np.bool_, np.integer, np.floating)):
            value = value.item()
        passed = bool(_compare(value, bound, relation))
        self.measurements.append({'check': '{}.{}'.format(self.name, name),
                                  'value': value, 'bound': bound,
                                  'relation': relation, 'guard': guard,
                                  'passed': passed})
        if not passed:
            logger.warning('%s.%s: %r not %s %r', self.name, name, value,
                           relation, bound)
        return passed

    def add(self, table, row):
        self.data.setdefault(table, []).append(row)

    @property
    def passed(self):
        return self.error is None and all(m['passed']
                                          for m in self.measurements)

    @property
    def status(self):
        if self.error is not None:
            return ERROR
        if not all(m['passed'] for m in self.measurements if m['guard']):
            return FAILED
        if self.expected_fail:
            return UNEXPECTED_PASS if self.passed else EXPECTED_FAIL
        return PASSED if self.passed else FAILED

    def to_dict(self):
        return {'name': self.name, 'status': self.status,
                'expected_fail': self.expected_fail,
                'measurements': self.measurements, 'data': self.data,
                'error': self.error}


@dataclass
class RunReport:
    seed: int
    config: dict
    environment: dict
    checks: Dict[str, CheckResult] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def failures(self):
        return [name for name, c in self.checks.items()
                if c.status not in (PASSED, EXPECTED_FAIL)]

    @property
    def passed(self):
        return not self.failures

    def to_dict(self):
        return {'seed': self.seed, 'config': self.config,
                'environment': self.environment,
                'checks': {name: c.to_dict()
                           for name, c in self.checks.items()},
                'failures': self.failures, 'passed': self.passed}


def environment():
    """Versions of the interpreter and the numerical stack."""
    return {'conekit': conekit.__version__,
            'python': platform.python_version(),
            'machine': platform.machine(),
            'numpy': np.__version__, 'scipy': scipy.__version__,
            'pandas': pd.__version__, 'torch': torch.__version__}


class _Context(object):
    """Configuration, seed and the backgrounds shared between experiments."""

    def __init__(self, config, seed):
        self.config = config
        self.seed = seed
        self._backgrounds = {}

    def background(self, name):
        if name not in self._backgrounds:
            cfg = self.config.background
            try:
                result = build_background_u(model_geometry(name, cfg), cfg)
            except ConekitError as e:
                result = e
            self._backgrounds[name] = result
        result = self._backgrounds[name]
        if isinstance(result, ConekitError):
            raise result
        return result


def _trend_rows(out, quantity, report):
    for level, (points, estimate) in enumerate(report.refinement_trend):
        out.add('trends', {'quantity': quantity, 'level': level,
                           'points': points, 'estimate': estimate,
                           'verdict': report.verdict})


def _membership_rows(out, quantity, report):
    for k, entries in sorted(report.entries.items()):
        for name, r in sorted(entries.items()):
            _trend_rows(out, '{}.w{}.{}'.format(quantity, k, name), r)


def _decay_rows(out, case, decay):
    estimate = decay['second_derivative']
    out.add('decay', {'case': case, 'radii': decay['radii'],
                      'values': estimate['values'],
                      'slope': estimate['slope']})


def _flattening(ctx, out):
    for beta in (0.25, 0.5, 0.75):
        out.measure('error.beta={}'.format(beta),
                    flattening_error(beta, 1000, seed=ctx.seed), 1e-12)
        out.measure('covering.beta={}'.format(beta),
                    covering_check(beta, seed=ctx.seed), True, '==')


def _phi_bound(ctx, out):
    scan = phi_bound_scan(1000, 1000)
    out.measure('max', scan['max'], 4.0)
    out.measure('max_attained', scan['max'], 3.99, '>=')
    out.measure('points', scan['points'], 10 ** 6, '>=')


def phase_cases():
    """Test functions on a w-plane grid, all vanishing at w = 0."""
    grid = polar_grid(128, 64, 1e-4, 1.0)
    cases = [('modulus_half', lambda w: np.abs(w) ** 0.5, 0.5),
             ('real_part', np.real, 0.9),
             ('modulus_cosine', lambda w: np.abs(w) ** 0.7
              * np.cos(np.angle(w)), 0.5),
             ('imaginary_part', lambda w: np.imag(w)
              * (1 + np.abs(w) ** 2), 0.5),
             ('third_harmonic', lambda w: np.abs(w)
              * np.sin(3 * np.angle(w)), 0.5)]
    return [(name, sample(func, grid, 'w1'), alpha)
            for name, func, alpha in cases]


def _phase_lemma(ctx, out):
    budget = ctx.config.holder.pair_budget
    for name, f, alpha in phase_cases():
        for direction in ('w', 'conj_w'):
            g = phase_multiply(f, direction, alpha, ctx.config.holder)
            check = phase_bound_check(f, g, alpha, budget, ctx.seed)
            label = '{}.{}'.format(name, direction)
            out.measure(label + '.violations', check['violations'], 0, '==')
            out.measure(label + '.pairs', check['pairs'], budget, '>=')


def _poisson(ctx, out):
    cfg = ctx.config.poisson
    for beta in (0.5, 0.75):
        for case in sorted(manufactured_cases(beta)):
            errors = []
            for n_sigma in cfg.n_sigma:
                v, exact = solve_case(case, beta, n_sigma, cfg)
                errors.append(float(np.max(np.abs(v.values - exact.values))))
            orders = convergence_orders(errors, cfg.n_sigma)
            label = '{}.beta={}'.format(case, beta)
            out.measure(label + '.order', min(orders), 1.8, '>=')
            for n_sigma, error in zip(cfg.n_sigma, errors):
                out.add('convergence', {'case': case, 'beta': beta,
                                        'n_sigma': n_sigma, 'error': error})
    beta = 0.75
    v, exact = solve_case('model_potential', beta, cfg.n_sigma[-1], cfg)
    f = exact.with_values(np.ones(exact.values.shape))
    out.measure('model_potential.residual', discrete_residual(v, f, beta),
                1e-3)


def _expansion(ctx, out):
    cfg = ctx.config.poisson
    grid = disc_grid(256, 16, 1e-6)
    for beta in ctx.config.background.beta_ladder:
        for alpha_prime in (0.2, 0.3):
            params = ConeParams(min(alpha_prime + 0.02, 0.99), beta)
            power = 2 * beta + alpha_prime * beta
            V = sample(lambda z: np.abs(z) ** power, grid, beta=beta)
            decay = check_decay(V, params, alpha_prime, cfg)
            label = 'decay.beta={}.alpha_prime={}'.format(beta, alpha_prime)
            out.measure(label, decay['passed'], True, '==')
            _decay_rows(out, label, decay)

    beta, alpha_prime = 0.75, 0.3
    p = 2 * beta * (1 + alpha_prime)
    v = sample(lambda z: np.abs(z) ** (2 * beta) + 0.3 * z + np.abs(z) ** p,
               grid)
    f = sample(lambda z: 1 + (1 + alpha_prime) ** 2
               * np.abs(z) ** (2 * beta * alpha_prime), grid)
    result = extract_expansion(v, unfolded_rhs(f, beta),
                               ConeParams(0.32, beta), alpha_prime, cfg)
    out.measure('a_relative_error', abs(result.a - 1), 0.01)
    out.measure('b_error', abs(result.b - 0.3), 1e-3)
    out.measure('remainder_slope', result.fitted_decay_exponent,
                alpha_prime * beta - cfg.fit_tolerance, '>=')

    beta = 0.4
    v = sample(lambda z: np.abs(z) ** (2 * beta) + 0.3 * z, grid)
    f_tilde = sample(lambda z: beta ** 2 + 0 * np.abs(z), grid)
    for alpha_prime in (0.1, 0.3, 0.45):
        result = extract_expansion(v, f_tilde, ConeParams(0.49, beta),
                                   alpha_prime, cfg)
        out.measure('b_vanishes.alpha_prime={}'.format(alpha_prime),
                    abs(result.b), 0.0, '==')


def _m_eta(ctx, out):
    cfg = ctx.config.glue
    report = property_suite(MollifierSpec.from_config(cfg), 1000, ctx.seed,
                            cfg.fd_step, cfg.tolerance)
    out.measure('locality', report['locality_error'], cfg.tolerance)
    out.measure('gradient_box', report['gradient_box_violations'], 0, '==')
    out.measure('gradient_sum', report['gradient_sum_error'], 1e-8)
    out.measure('finite_difference', report['finite_difference_error'], 1e-6)
    convexity = report['convexity']
    out.measure('convexity', convexity['passed'], True, '==')
    out.measure('envelope', convexity['envelope_violations'], 0, '==')


def _background(ctx, out):
    cfg = ctx.config.background
    for name in ('disc_n1', 'line_bundle_p1'):
        result = ctx.background(name)
        for check, entry in sorted(result.checks.items()):
            out.measure('{}.{}'.format(name, check), entry['passed'], True,
                        '==')
        out.measure(name + '.conic_margin', result.conic_positivity_margin,
                    0.0, '>=')
        out.measure(name + '.vanishing_r2', result.vanishing_fit['r_squared'],
                    cfg.r_squared, '>=')
        out.add('background', {'geometry': name, 'eta': result.eta,
                               'r': result.radii[0],
                               'r_inner': result.radii[1]})


def _volume(ctx, out):
    cfg = ctx.config.background
    for name, beta in (('disc_n1', 0.75), ('line_bundle_p1', 0.6)):
        result = ctx.background(name)
        expansion = volume_expansion_coeffs(result.geom, result, beta, cfg)
        label = '{}.beta={}'.format(name, beta)
        out.measure(label + '.a0_positive', expansion.a0_positive, True, '==')
        out.measure(label + '.identity', expansion.identity['passed'], True,
                    '==')
        out.measure(label + '.expansion_residual',
                    expansion.expansion_residual, 1e-8)
        out.measure(label + '.a0_shell_error',
                    expansion.shell_fit['a0_error'], 1e-5)
    disc = model_geometry('disc_n1', cfg)
    beta = 0.4
    report = ladder_membership(
        lambda g: log_volume_ratio(disc, None, beta, grid=g),
        ConeParams(0.3, beta), rho_min=1e-3, n_rho=32, depth=2,
        config=ctx.config.holder, seed=ctx.seed)
    out.measure('log_ratio_membership', report.verdict, STABLE, '==')
    _membership_rows(out, 'log_ratio', report)
    glued = ctx.background('disc_n1')
    beta = 0.6
    report = ladder_membership(
        lambda g: log_volume_ratio(glued.geom, glued, beta, grid=g),
        ConeParams(0.3, beta), config=ctx.config.holder, seed=ctx.seed)
    out.measure('log_ratio_membership.glued', report.verdict, STABLE, '==')
    _membership_rows(out, 'log_ratio_glued', report)


def _ricci(ctx, out):
    cfg = ctx.config.background
    result = ctx.background('disc_n1')
    geom = result.geom
    for lam in (0.0, 1.0):
        report = ricci_identity_residual(
            geom, result, 0.75, lam, lambda x: -lam * np.exp(2 * x[:, 0]),
            cfg)
        out.measure('identity.lambda={}'.format(lam), report['passed'], True,
                    '==')
    beta = 0.4
    params = ConeParams(0.3, beta)
    c2 = geom.c2

    def f_omega(x):
        return np.exp(beta * (np.log(c2) + 2 * x[:, 0]))

    samplers = {
        'lambda': lambda g: ricci_potential(geom, None, beta, grid=g),
        'omega_class': lambda g: ricci_potential(geom, None, beta,
                                                 'omega_class',
                                                 f_omega=f_omega, grid=g)}
    for mode, sampler in sorted(samplers.items()):
        report = ladder_membership(sampler, params, rho_min=1e-3, n_rho=32,
                                   depth=2, config=ctx.config.holder,
                                   seed=ctx.seed)
        out.measure('membership.' + mode, report.verdict, STABLE, '==')
        _membership_rows(out, 'ricci_' + mode, report)


def model_cone_norm(beta, n=16):
    """max |Rm| of the model cone potential |z|^(2 beta) on a w-chart box."""
    chart = charts(beta)[0]
    center = 0.5 * np.exp(1j * chart.center)
    grid = BoxGrid([np.linspace(center.real - 0.2, center.real + 0.2, n),
                    np.linspace(center.imag - 0.2, center.imag + 0.2, n)])
    w, = grid.coordinates()
    arg = chart.center + np.angle(w * np.exp(-1j * chart.center))
    z = psi(chart, WPoint(w[..., None], arg)).coords[..., -1]
    potential = GridField(np.abs(z) ** (2 * beta), grid, 'w1', beta)
    return float(np.max(riemann(metric_in_w(potential)).norm.values))


def gaussian_oracle(n=33):
    """Errors of Rm and of -(1/g) ddbar log g against the exact curvature
    of |w|^2 + |w|^4.
    """
    grid = box_grid(n, -0.5, 0.5)
    w, = grid.coordinates()
    r2 = np.abs(w) ** 2
    curv = curvature_field(GridField(r2 + r2 ** 2, grid, 'w1'))
    _, slices = grid.trim(4)
    g = (1 + 4 * r2)[slices]
    K = -4 / g ** 3
    oracle = gaussian_curvature(metric_in_w(GridField(r2 + r2 ** 2, grid,
                                                      'w1')))
    return {'rm_error': float(np.max(np.abs(curv.rm[..., 0, 0, 0, 0] / g ** 2
                                            - K))),
            'oracle_error': float(np.max(np.abs(oracle.values - K))),
            'symmetry': curv.symmetry}


def compact_bump(z, center=0.5, radius=0.2, height=1e-4):
    """Smooth bump supported in |z - center| < radius, away from z = 0."""
    t = np.abs(z - center) ** 2 / radius ** 2
    out = np.zeros(np.shape(z))
    inside = t < 1
    out[inside] = height * np.exp(-1 / (1 - t[inside]))
    return out


def _ladder(levels, func, beta):
    return [GridField(func(g.z()), g, 'z', beta) for g in levels]


def _curvature(ctx, out):
    cfg = ctx.config.curvature
    for beta in (0.25, 0.5, 0.75):
        out.measure('model_cone.beta={}'.format(beta), model_cone_norm(beta),
                    1e-8)
    oracle = gaussian_oracle()
    out.measure('oracle.rm', oracle['rm_error'], 1e-8)
    out.measure('oracle.gaussian', oracle['oracle_error'], 1e-3)
    out.measure('oracle.symmetry', oracle['symmetry']['passed'], True, '==')
    result = ctx.background('disc_n1')
    params = ConeParams(0.3, 0.75)
    levels = z_ladder(result.geom, params.beta, cfg)
    report = curvature_holder_report(
        _ladder(levels, lambda z: np.zeros(z.shape), params.beta), result,
        params, config=cfg, holder=ctx.config.holder, seed=ctx.seed)
    out.measure('norm_trend', report.verdict, STABLE, '==')
    out.measure('derivative_trend', report.derivative_verdict, STABLE, '==')
    for k, r in sorted(report.norm.items()):
        _trend_rows(out, 'norm.w{}'.format(k), r)
    for row in report.shells:
        out.add('shells', row)
    bump = curvature_holder_report(
        _ladder(levels, compact_bump, params.beta), result, params,
        config=cfg, holder=ctx.config.holder, seed=ctx.seed)
    out.measure('bump.norm_trend', bump.verdict, STABLE, '==')
    for k, r in sorted(bump.norm.items()):
        _trend_rows(out, 'bump.norm.w{}'.format(k), r)


def _negative_control(ctx, out):
    cfg = ctx.config.curvature
    result = ctx.background('disc_n1')
    params = ConeParams(0.5, 0.75, strict=False)
    levels = z_ladder(result.geom, params.beta, cfg)
    phi = _ladder(levels, lambda z: np.abs(z) ** (2 - 2 * params.beta),
                  params.beta)
    report = curvature_holder_report(phi, result, params, config=cfg,
                                     holder=ctx.config.holder, seed=ctx.seed)
    out.measure('first_derivative_trend', report.first_derivative_verdict,
                STABLE, '==')
    out.measure('diverging', report.first_derivative_verdict, DIVERGING,
                '==', guard=True)
    for k, per_chart in sorted(report.first_derivatives.items()):
        for name, r in sorted(per_chart.items()):
            _trend_rows(out, 'w{}.{}'.format(k, name), r)


_EXPERIMENTS = {'flattening': _flattening,
                'phi_bound': _phi_bound,
                'phase_lemma': _phase_lemma,
                'poisson': _poisson,
                'expansion': _expansion,
                'm_eta': _m_eta,
                'background': _background,
                'volume': _volume,
                'ricci': _ricci,
                'curvature': _curvature,
                'negative_control': _negative_control}


def run_experiment(name, ctx, expected_fail=False):
    """Run one experiment, recording rather than raising module errors."""
    out = CheckResult(name, expected_fail)
    try:
        _EXPERIMENTS[name](ctx, out)
    except (ConekitError, ValueError, ArithmeticError) as e:
        out.error = '{}: {}'.format(type(e).__name__, e)
        logger.error('experiment %s raised %s', name, out.error)
    logger.info('experiment %s: %s', name, out.status)
    return out


def run_suite(config=None, seed=None):
    """Run the selected experiments in dependency order."""
    config = config or default_config()
    harness = config.harness
    seed = harness.seed if seed is None else int(seed)
    names = list(harness.experiments or [])
    if not names:
        raise ConfigError('no experiments selected')
    unknown = sorted(set(names + list(harness.expected_fail))
                     - set(_EXPERIMENTS))
    if unknown:
        raise ConfigError('unknown experiments: {}'.format(', '.join(unknown)))
    np.random.seed(seed)
    torch.manual_seed(seed)
    ctx = _Context(config, seed)
    report = RunReport(seed, to_dict(config), environment())
    for name in [n for n in EXPERIMENTS if n in names]:
        start = time.perf_counter()
        report.checks[name] = run_experiment(name, ctx,
                                             name in harness.expected_fail)
        report.timings[name] = time.perf_counter() - start
    logger.info('suite finished: %d experiments, failures %s',
                len(report.checks), report.failures or 'none')
    return report


def rounded(obj, digits=12):
    """Floats to `digits` significant digits; non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): rounded(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return rounded(obj.tolist(), digits)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [rounded(obj.real, digits), rounded(obj.imag, digits)]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not np.isfinite(x):
            return str(x)
        return float('{:.{}g}'.format(x, digits))
    return obj


def write_report(report, directory, precision=12):
    """Write report.json (deterministic) and timings.json; returns the
    report path.
    """
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, REPORT_FILE)
    with open(path, 'w') as f:
        json.dump(rounded(report.to_dict(), precision), f, sort_keys=True,
                  indent=1)
        f.write('\n')
    with open(os.path.join(directory, TIMINGS_FILE), 'w') as f:
        json.dump(rounded(report.timings, 6), f, sort_keys=True, indent=1)
    logger.info('wrote %s', path)
    return path


def load_report(path):
    if not os.path.isfile(path):
        raise ConfigError('report not found: {}'.format(path))
    with open(path) as f:
        return json.load(f)


def _decay_table(checks):
    rows = []
    for name, check in sorted(checks.items()):
        for entry in check['data'].get('decay', []):
            for rho, value in zip(entry['radii'], entry['values']):
                if value > 0:
                    rows.append({'check': name, 'case': entry['case'],
                                 'log_abs_z': np.log(rho),
                                 'log_lhs': np.log(value),
                                 'fitted_slope': entry['slope']})
    return pd.DataFrame(rows, columns=['check', 'case', 'log_abs_z',
                                       'log_lhs', 'fitted_slope'])


def _table(checks, key, columns):
    rows = [dict(row, check=name) for name, check in sorted(checks.items())
            for row in check['data'].get(key, [])]
    return pd.DataFrame(rows, columns=['check'] + columns)


def emit_plots(report, directory):
    """Write the plot data of a report (a RunReport or the path of a
    report.json) as CSV tables; returns {table: path}.
    """
    if isinstance(report, str):
        report = load_report(report)
    elif isinstance(report, RunReport):
        report = rounded(report.to_dict(), 12)
    checks = report['checks']
    tables = {
        'decay_fits': _decay_table(checks),
        'shell_curvature': _table(checks, 'shells',
                                  ['chart', 'shell', 'w_lo', 'w_hi', 'points',
                                   'norm_max', 'norm_mean']),
        'holder_trends': _table(checks, 'trends',
                                ['quantity', 'level', 'points', 'estimate',
                                 'verdict']),
        'convergence': _table(checks, 'convergence',
                              ['case', 'beta', 'n_sigma', 'error'])}
    os.makedirs(directory, exist_ok=True)
    paths = {}
    for name, table in sorted(tables.items()):
        path = os.path.join(directory, name + '.csv')
        table.to_csv(path, index=False, float_format='%.12g')
        paths[name] = path
    logger.info('wrote %d plot tables to %s', len(paths), directory)
    return paths
