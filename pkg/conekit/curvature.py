"""Curvature of Kahler metrics in the flattening charts.

Metric coefficients are complex Hessians of a local potential sampled on a
w-chart grid,

    g_{m n-bar} = d^2 Phi / dw_m dw-bar_n,

and the curvature tensor is

    Rm_{m n-bar r q-bar} = -d_r dbar_q g_{m n-bar}
                           + g^{s t-bar} d_r g_{m t-bar} dbar_q g_{s n-bar}.

Index conventions: `G[..., m, n]` holds g_{m n-bar} and `H = inv(G)` holds
g^{s t-bar} at `H[..., t, s]`. The pointwise norm is

    |Rm|^2 = g^{m a-bar} g^{b n-bar} g^{r s-bar} g^{t q-bar}
             Rm_{m n-bar r q-bar} conj(Rm_{a b-bar s t-bar}),

which for n = 1 reduces to |K| with K = Rm / g^2 = -(1/g) ddbar log g.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from conekit.background import omega0_potential
from conekit.cone_charts import HermitianMatrixField, charts, pullback
from conekit.config import CurvatureConfig, HolderConfig
from conekit.exceptions import (ConditioningError, PositivityError,
                                StencilError)
from conekit.grid import GridField, polar_ladder
from conekit.stencils import Wirtinger, truncation_estimate
from conekit.weighted_holder import (INCONCLUSIVE, HolderReport,
                                     holder_trend, worst_verdict)

logger = logging.getLogger(__name__)

_EDGE = 2


def _interior_slices(grid, margin):
    _, slices = grid.trim(margin)
    return slices


def _hermitian(m):
    return 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))


def metric_in_w(potential, flat=0.0, config=None):
    """g_{m n-bar} of a w-chart potential by fourth-order differences.

       `flat` adds flat |w_n|^2 to the potential exactly, i.e. flat to
       g_{n n-bar}. Raises PositivityError if g is not positive definite
       away from the stencil margin.
    """
    config = config or CurvatureConfig()
    ops = Wirtinger(potential.grid)
    g = _hermitian(ops.complex_hessian(potential.values))
    if flat:
        g[..., -1, -1] += flat
    metric = HermitianMatrixField(g, potential.grid, potential.chart,
                                  potential.beta)
    eig = metric.eigenvalues()[_interior_slices(potential.grid, _EDGE)]
    margin = float(np.min(eig[..., 0]))
    if not margin > 0:
        idx = np.unravel_index(np.argmin(eig[..., 0]), eig.shape[:-1])
        raise PositivityError('metric in chart {} is not positive definite '
                              '(margin {:.3g})'.format(potential.chart,
                                                       margin),
                              location=[int(i) for i in idx], margin=margin)
    logger.debug('metric in %s: margin %.4g', potential.chart, margin)
    return metric


def _inverse(G, floor):
    eig = np.linalg.eigvalsh(G)
    ratio = eig[..., 0] / eig[..., -1]
    if not np.all(ratio >= floor):
        raise ConditioningError('metric inversion: eigenvalue ratio {:.3g} '
                                'below {:.3g}'.format(float(np.min(ratio)),
                                                      floor))
    return np.linalg.inv(G)


def _derivatives(g):
    """(d_r g, dbar_q g, d_r dbar_q g) stacked as (..., r, m, n),
       (..., q, m, n) and (..., r, q, m, n).
    """
    ops = Wirtinger(g.grid)
    G = g.matrix.astype(np.complex128)
    n = g.n
    dG = np.stack([ops.d(G, r) for r in range(n)], axis=-3)
    dbG = np.stack([ops.dbar(G, q) for q in range(n)], axis=-3)
    ddG = np.stack([np.stack([ops.ddbar(G, r, q) for q in range(n)], axis=-3)
                    for r in range(n)], axis=-4)
    return dG, dbG, ddG


@dataclass
class CurvatureField:
    """Rm_{m n-bar r q-bar} stacked on four trailing axes, its norm, and
    the Kahler symmetry residuals, on the trimmed chart grid.
    """
    rm: np.ndarray
    norm: GridField
    chart: str
    symmetry: Dict[str, float] = field(default_factory=dict)

    @property
    def grid(self):
        return self.norm.grid

    @property
    def n(self):
        return self.rm.shape[-1]


def _symmetry_residuals(rm):
    lead = tuple(range(rm.ndim - 4))
    m, n, r, q = (rm.ndim - 4 + i for i in range(4))
    swap_first = np.transpose(rm, lead + (r, n, m, q))
    swap_bar = np.transpose(rm, lead + (m, q, r, n))
    conj = np.conj(np.transpose(rm, lead + (n, m, q, r)))
    return {'first_pair': float(np.max(np.abs(rm - swap_first))),
            'barred_pair': float(np.max(np.abs(rm - swap_bar))),
            'conjugation': float(np.max(np.abs(rm - conj)))}


def riemann(g, config=None, margin=2 * _EDGE):
    """Curvature tensor and norm of a chart metric, trimmed by `margin`."""
    config = config or CurvatureConfig()
    dG, dbG, ddG = _derivatives(g)
    H = _inverse(g.matrix, config.inversion_floor)
    rm = -np.einsum('...rqmn->...mnrq', ddG) \
        + np.einsum('...ts,...rmt,...qsn->...mnrq', H, dG, dbG)
    grid = g.grid
    if margin:
        grid, slices = grid.trim(margin)
        rm = rm[slices]
        H = H[slices]
    norm2 = np.einsum('...am,...nb,...sr,...qt,...mnrq,...abst->...',
                      H, H, H, H, rm, np.conj(rm), optimize=True)
    norm = np.sqrt(np.maximum(np.real(norm2), 0.0))
    return CurvatureField(rm, GridField(norm, grid, g.chart, g.beta),
                          g.chart, _symmetry_residuals(rm))


def curvature_field(potential, flat=0.0, config=None):
    """Rm of a chart potential, with the symmetry residuals judged against
       the Richardson estimate of the truncation error of Rm.
    """
    config = config or CurvatureConfig()
    curv = riemann(metric_in_w(potential, flat, config), config, 2 * _EDGE)

    def operator(f):
        return riemann(metric_in_w(f, flat, config), config, 0).rm

    estimate = truncation_estimate(operator, potential, 2 * _EDGE)
    scale = max(1.0, float(np.max(np.abs(curv.rm))))
    tolerance = config.symmetry_factor * estimate \
        + config.truncation_floor * scale
    worst = max(curv.symmetry[k] for k in ('first_pair', 'barred_pair',
                                           'conjugation'))
    curv.symmetry.update({'truncation': estimate, 'tolerance': tolerance,
                          'passed': worst <= tolerance})
    return curv


def gaussian_curvature(g, margin=2 * _EDGE):
    """K = -(1/g) ddbar log g for a one-dimensional chart metric."""
    if g.n != 1:
        raise StencilError('Gaussian curvature needs n = 1, got n = {}'
                           .format(g.n))
    ops = Wirtinger(g.grid)
    g11 = np.real(g.matrix[..., 0, 0])
    K = -np.real(ops.ddbar(np.log(g11), 0, 0)) / g11
    field_ = GridField(K, g.grid, g.chart, g.beta)
    return field_.trim(margin) if margin else field_


def metric_derivatives(g, margin=2 * _EDGE):
    """d g_{m n-bar}/dw_r and d^2 g_{m n-bar}/dw_r dw-bar_q as named
       chart fields.
    """
    dG, _, ddG = _derivatives(g)
    grid, slices = g.grid.trim(margin)
    first = {}
    second = {}
    n = g.n
    for m in range(n):
        for nu in range(m, n):
            for r in range(n):
                name = 'g{}{}_w{}'.format(m + 1, nu + 1, r + 1)
                first[name] = GridField(dG[..., r, m, nu][slices], grid,
                                        g.chart, g.beta)
                for q in range(n):
                    name = 'g{}{}_w{}wbar{}'.format(m + 1, nu + 1, r + 1,
                                                    q + 1)
                    second[name] = GridField(ddG[..., r, q, m, nu][slices],
                                             grid, g.chart, g.beta)
    return first, second


def _radial_axis(grid):
    return 0 if grid.kind == 'polar' else grid.n_tangential_axes


def shell_statistics(curv, shells=(2, 8)):
    """max and mean |Rm| on the dyadic shells 2^-j <= |w_n| <= 2^(1-j)."""
    grid = curv.grid
    axis = _radial_axis(grid)
    modulus = np.exp(grid.mesh()[axis])
    norm = curv.norm.values
    rows = []
    for j in range(shells[0], shells[1] + 1):
        lo, hi = 2.0 ** -j, 2.0 ** (1 - j)
        inside = (modulus >= lo) & (modulus <= hi)
        count = int(np.sum(inside))
        rows.append({'chart': curv.chart, 'shell': j, 'w_lo': lo, 'w_hi': hi,
                     'points': count,
                     'norm_max': float(np.max(norm[inside])) if count
                     else float('nan'),
                     'norm_mean': float(np.mean(norm[inside])) if count
                     else float('nan')})
    return rows


@dataclass
class CurvatureReport:
    """Holder trends of |Rm| and of the metric derivatives, per chart."""
    alpha: float
    beta: float
    norm: Dict[int, HolderReport] = field(default_factory=dict)
    first_derivatives: Dict[int, Dict[str, HolderReport]] = \
        field(default_factory=dict)
    second_derivatives: Dict[int, Dict[str, HolderReport]] = \
        field(default_factory=dict)
    shells: List[dict] = field(default_factory=list)
    symmetry: dict = field(default_factory=dict)

    @property
    def verdict(self):
        """Verdict of the |Rm| trend."""
        return worst_verdict([r.verdict for r in self.norm.values()]) \
            if self.norm else INCONCLUSIVE

    @property
    def derivative_verdict(self):
        verdicts = [r.verdict for group in (self.first_derivatives,
                                            self.second_derivatives)
                    for per_chart in group.values()
                    for r in per_chart.values()]
        return worst_verdict(verdicts) if verdicts else INCONCLUSIVE

    @property
    def first_derivative_verdict(self):
        return worst_verdict([r.verdict for per_chart in
                              self.first_derivatives.values()
                              for r in per_chart.values()])

    def to_dict(self):
        def reports(group):
            return {str(k): {name: r.to_dict() for name, r in v.items()}
                    for k, v in group.items()}

        return {'alpha': self.alpha, 'beta': self.beta,
                'norm': {str(k): r.to_dict() for k, r in self.norm.items()},
                'first_derivatives': reports(self.first_derivatives),
                'second_derivatives': reports(self.second_derivatives),
                'shells': self.shells, 'symmetry': self.symmetry,
                'verdict': self.verdict,
                'derivative_verdict': self.derivative_verdict}


def _as_levels(phi):
    return [phi] if isinstance(phi, GridField) else list(phi)


def z_ladder(geom, beta, config=None, depth=3):
    """Polar z-grids whose pulled-back radii |w| = rho^beta cover every
       curvature shell, with rho_min squared from one level to the next.
    """
    config = config or CurvatureConfig()
    if geom.n != 1:
        raise StencilError('z ladders are built for one-dimensional '
                           'geometries; pass product grids explicitly')
    lo, hi = config.shells
    rho_min = 2.0 ** (-(hi + 1) / beta)
    n_rho = config.n_rho_per_shell * (hi - lo + 1)
    return polar_ladder(n_rho, config.n_theta, rho_min, depth)


def curvature_holder_report(phi, background, params, geom=None, config=None,
                            holder=None, seed=0):
    """Holder trends of |Rm(omega_phi)| and of dg/dw, d^2g/dw dw-bar
       along a refinement ladder of z-grids approaching D.

       `phi` is a z-chart field or a ladder of them. The metric is
       omega_0 + i ddbar phi with omega_0 built from `background` (a
       BackgroundResult, or None with `geom` for u = 0).
    """
    config = config or CurvatureConfig()
    holder = holder or HolderConfig()
    if background is not None:
        geom = background.geom
    if geom is None:
        raise StencilError('curvature report needs a background or a '
                           'geometry')
    beta = params.beta
    levels = _as_levels(phi)
    per_chart = {}
    finest = {}
    symmetry = {}
    for level in levels:
        base, flat = omega0_potential(geom, background, beta, level.grid)
        total = base.with_values(base.values + np.real(level.values))
        for chart in charts(beta):
            w_field = pullback(total, chart)
            g = metric_in_w(w_field, flat, config)
            curv = riemann(g, config, 2 * _EDGE)
            first, second = metric_derivatives(g)
            entry = per_chart.setdefault(chart.k, {'norm': [], 'first': {},
                                                   'second': {}})
            entry['norm'].append(curv.norm)
            for name, f in first.items():
                entry['first'].setdefault(name, []).append(f)
            for name, f in second.items():
                entry['second'].setdefault(name, []).append(f)
            finest[chart.k] = curv
            for key, value in curv.symmetry.items():
                symmetry[key] = max(symmetry.get(key, 0.0), value)
    report = CurvatureReport(params.alpha, beta, symmetry=symmetry)
    for k, entry in sorted(per_chart.items()):
        report.norm[k] = holder_trend(entry['norm'], params.alpha,
                                      seed=seed, config=holder)
        report.first_derivatives[k] = {
            name: holder_trend(fs, params.alpha, seed=seed, config=holder)
            for name, fs in sorted(entry['first'].items())}
        report.second_derivatives[k] = {
            name: holder_trend(fs, params.alpha, seed=seed, config=holder)
            for name, fs in sorted(entry['second'].items())}
        report.shells.extend(shell_statistics(finest[k], config.shells))
    logger.info('curvature Holder verdict %s (derivatives %s)',
                report.verdict, report.derivative_verdict)
    return report


def _laplacian(H, hess):
    """g^{m n-bar} d_m dbar_n applied via the stacked complex Hessian."""
    return np.einsum('...nm,...mn->...', H, hess)


def differentiated_ma_residual(phi, background, gamma, delta=None, flat=0.0,
                               config=None, margin=2 * _EDGE):
    """Residual of the w_gamma-differentiated Monge-Ampere equation

           Delta_phi(d_gamma (h + phi)) = d_gamma f + Delta_0(d_gamma h)

       with f = log(omega_phi^n / omega_0^n), or with `delta` its
       dbar_delta derivative

           g_phi^{m n-bar} d_gamma dbar_delta g_phi{m n-bar}
             - g^{i k-bar} g^{h j-bar} dbar_delta g_{h k-bar} d_gamma g_{i j-bar}
           = d_gamma dbar_delta f + (the same for omega_0).

       `phi` and `background` are chart fields on one grid; `flat` adds
       flat |w_n|^2 to the background.
    """
    config = config or CurvatureConfig()
    grid = background.grid
    ops = Wirtinger(grid)
    h = np.real(background.values)
    total = h + np.real(phi.values)
    g0 = metric_in_w(background.with_values(h), flat, config)
    gphi = metric_in_w(background.with_values(total), flat, config)
    H0 = _inverse(g0.matrix, config.inversion_floor)
    Hphi = _inverse(gphi.matrix, config.inversion_floor)
    f = np.linalg.slogdet(gphi.matrix)[1] - np.linalg.slogdet(g0.matrix)[1]
    if delta is None:
        lhs = _laplacian(Hphi, ops.complex_hessian(ops.d(total, gamma)))
        rhs = ops.d(f, gamma) \
            + _laplacian(H0, ops.complex_hessian(ops.d(h, gamma)))
        residual = lhs - rhs
    else:
        def side(g, H, potential):
            hess = ops.complex_hessian(ops.dbar(ops.d(potential, gamma), delta))
            G = g.matrix.astype(np.complex128)
            dG = ops.d(G, gamma)
            dbG = ops.dbar(G, delta)
            return _laplacian(H, hess) \
                - np.einsum('...ki,...jh,...hk,...ij->...', H, H, dbG, dG)

        residual = side(gphi, Hphi, total) - side(g0, H0, h) \
            - ops.ddbar(f, gamma, delta)
    out = GridField(residual, grid, background.chart, background.beta)
    return out.trim(margin) if margin else out


def ma_residual_check(phi, background, gamma, delta=None, flat=0.0,
                      config=None):
    """differentiated_ma_residual against 10x its truncation estimate."""
    config = config or CurvatureConfig()
    residual = differentiated_ma_residual(phi, background, gamma, delta,
                                          flat, config)
    stacked = background.with_values(
        np.stack([np.real(phi.values), np.real(background.values)], -1))

    def operator(f):
        return differentiated_ma_residual(
            f.with_values(f.values[..., 0]), f.with_values(f.values[..., 1]),
            gamma, delta, flat, config, margin=0).values

    estimate = truncation_estimate(operator, stacked, 2 * _EDGE)
    # the coarse margin covers twice as many fine points
    value = float(np.max(np.abs(residual.trim(2 * _EDGE).values)))
    tolerance = config.symmetry_factor * estimate + config.truncation_floor
    return {'gamma': gamma, 'delta': delta, 'residual': value,
            'truncation': estimate, 'tolerance': tolerance,
            'passed': value <= tolerance}
