"""Singular charts psi_k, the model cone metric and the conic Laplacian.

Chart k maps w = (w_1, ..., w_n) to z = (w_1, ..., w_{n-1}, w_n^(1/beta))
on the sector of arg(w_n) centred at k beta pi / (1 + beta) with
half-width beta pi / (1 + beta). The argument of w_n is carried as an
unreduced real number so that the fractional power is single valued.

All second derivatives are Wirtinger derivatives, d2/dz dz-bar =
(d_xx + d_yy) / 4.
"""
import logging
from dataclasses import dataclass

import numpy as np

from conekit.exceptions import ChartError, ParameterError, StencilError
from conekit.grid import GridField, PolarGrid, ProductGrid
from conekit.stencils import Wirtinger

logger = logging.getLogger(__name__)

SECTOR_TOL = 1e-12


def _check_beta(beta):
    if not 0 < beta < 1:
        raise ParameterError('beta must lie in (0, 1), got {}'.format(beta))


@dataclass(frozen=True)
class ConeParams:
    """Holder exponent alpha and cone angle parameter beta (angle 2 pi beta).

       Negative controls that deliberately violate alpha < 1/beta - 1 are
       built with strict=False.
    """
    alpha: float
    beta: float
    strict: bool = True

    def __post_init__(self):
        _check_beta(self.beta)
        if not 0 < self.alpha < 1:
            raise ParameterError('alpha must lie in (0, 1), got {}'
                                 .format(self.alpha))
        if self.strict and not self.alpha < 1 / self.beta - 1:
            raise ParameterError('alpha = {} is not below 1/beta - 1 = {}'
                                 .format(self.alpha, 1 / self.beta - 1))

    @property
    def admissible(self):
        return self.alpha < 1 / self.beta - 1


@dataclass(frozen=True)
class ChartMap:
    """The chart psi_k with its closed sector of arg(w_n)."""
    k: int
    beta: float

    @property
    def center(self):
        return self.k * self.beta * np.pi / (1 + self.beta)

    @property
    def half_width(self):
        return self.beta * np.pi / (1 + self.beta)

    @property
    def sector(self):
        return (self.center - self.half_width, self.center + self.half_width)

    @property
    def branch_offset(self):
        """Lower end of the arg(w_n) determination used by this chart."""
        return self.sector[0]

    @property
    def z_window(self):
        """Interval of unreduced arg(z_n) covered by the chart."""
        lo, hi = self.sector
        return (lo / self.beta, hi / self.beta)

    def contains_arg(self, arg):
        lo, hi = self.sector
        return (arg >= lo - SECTOR_TOL) & (arg <= hi + SECTOR_TOL)


@dataclass
class WPoint:
    """Points in a flattening chart: complex coordinates with the last
    coordinate's argument stored unreduced in `arg`.
    """
    coords: np.ndarray
    arg: np.ndarray


@dataclass
class ZPoint:
    """Points in the singular coordinates z."""
    coords: np.ndarray


class HermitianMatrixField(object):
    """Metric coefficients g_{mu nu-bar} sampled on a grid."""

    def __init__(self, matrix, grid, chart='w1', beta=None):
        self.matrix = np.asarray(matrix)
        self.grid = grid
        self.chart = chart
        self.beta = beta

    @property
    def n(self):
        return self.matrix.shape[-1]

    def hermitian_residual(self):
        m = self.matrix
        return float(np.max(np.abs(m - np.conj(np.swapaxes(m, -1, -2)))))

    def eigenvalues(self):
        m = 0.5 * (self.matrix + np.conj(np.swapaxes(self.matrix, -1, -2)))
        return np.linalg.eigvalsh(m)

    def margin(self):
        """Smallest eigenvalue over the grid."""
        return float(np.min(self.eigenvalues()))

    def validate(self, floor=0.0, tol=1e-8):
        residual = self.hermitian_residual()
        scale = max(1.0, float(np.max(np.abs(self.matrix))))
        if residual > tol * scale:
            raise StencilError('metric is not Hermitian: residual {:.3g}'
                               .format(residual))
        margin = self.margin()
        return {'hermitian_residual': residual, 'margin': margin,
                'uniformly_equivalent': margin > floor}


def chart_index_set(beta):
    """Indices k: positive integers below 2 + 2 beta."""
    _check_beta(beta)
    return set(k for k in range(1, 4) if k < 2 + 2 * beta)


def charts(beta):
    return [ChartMap(k, beta) for k in sorted(chart_index_set(beta))]


def psi(chart, w):
    """Map chart points to z: z_n = |w_n|^(1/beta) exp(i arg / beta)."""
    coords = np.asarray(w.coords, dtype=np.complex128)
    arg = np.asarray(w.arg, dtype=np.float64)
    modulus = np.abs(coords[..., -1])
    if np.any(modulus == 0):
        raise ChartError('w_n = 0 is on the divisor')
    if not np.all(chart.contains_arg(arg)):
        raise ChartError('point outside the sector of chart {}'
                         .format(chart.k))
    if not np.allclose(np.exp(1j * arg), coords[..., -1] / modulus,
                       atol=1e-9):
        raise ChartError('stored argument does not match w_n')
    z = coords.copy()
    z[..., -1] = modulus ** (1 / chart.beta) * np.exp(1j * arg / chart.beta)
    return ZPoint(z)


def psi_inverse(chart, z):
    """Map z to the chart, choosing the argument inside the chart window."""
    coords = np.asarray(z.coords, dtype=np.complex128)
    zn = coords[..., -1]
    if np.any(zn == 0):
        raise ChartError('z_n = 0 is on the divisor')
    lo, hi = chart.z_window
    theta = np.angle(zn)
    theta = theta + 2 * np.pi * np.ceil((lo - SECTOR_TOL - theta)
                                        / (2 * np.pi))
    if np.any(theta > hi + SECTOR_TOL):
        raise ChartError('point outside the window of chart {}'
                         .format(chart.k))
    arg = chart.beta * theta
    w = coords.copy()
    w[..., -1] = np.abs(zn) ** chart.beta * np.exp(1j * arg)
    return WPoint(w, arg)


def locate_chart(z, beta):
    """First chart whose window contains arg(z_n) in [0, 2 pi)."""
    zn = np.asarray(z.coords)[..., -1]
    theta = np.mod(np.angle(zn), 2 * np.pi)
    found = np.zeros(np.shape(theta), dtype=int)
    for chart in reversed(charts(beta)):
        lo, hi = chart.z_window
        inside = np.zeros(np.shape(theta), dtype=bool)
        for shift in (0, 2 * np.pi):
            t = theta + shift
            inside |= (t >= lo - SECTOR_TOL) & (t <= hi + SECTOR_TOL)
        found = np.where(inside, chart.k, found)
    if np.any(found == 0):
        raise ChartError('charts do not cover every point')
    return found


def model_metric(z, beta):
    """diag(1, ..., 1, beta^2 |z_n|^(2 beta - 2))."""
    _check_beta(beta)
    coords = np.asarray(z.coords, dtype=np.complex128)
    modulus = np.abs(coords[..., -1])
    if np.any(modulus == 0):
        raise ChartError('model metric is singular at z_n = 0')
    n = coords.shape[-1]
    g = np.zeros(coords.shape[:-1] + (n, n))
    idx = np.arange(n - 1)
    g[..., idx, idx] = 1.0
    g[..., n - 1, n - 1] = beta ** 2 * modulus ** (2 * beta - 2)
    return g


def pullback_metric(chart, w):
    """psi_k^* of the model metric: J^H g J with dz_n/dw_n = z_n/(beta w_n)."""
    z = psi(chart, w)
    g = model_metric(z, chart.beta)
    jac = z.coords[..., -1] / (chart.beta * np.asarray(w.coords)[..., -1])
    out = g.astype(np.complex128)
    out[..., -1, -1] = g[..., -1, -1] * np.abs(jac) ** 2
    return out


def conic_laplacian_apply(v, beta):
    """Delta_beta v on a z-chart polar or product grid."""
    _check_beta(beta)
    grid = v.grid
    if grid.kind not in ('polar', 'product'):
        raise StencilError('conic Laplacian needs a polar transverse axis')
    transverse = grid if grid.kind == 'polar' else grid.transverse
    if transverse.shape[0] < 6 or transverse.shape[1] < 5:
        raise StencilError('grid {} is too coarse for the stencil'
                           .format(transverse.shape))
    if np.min(transverse.rho) <= 0:
        raise StencilError('grid touches z_n = 0')
    ops = Wirtinger(grid)
    n = ops.n
    out = np.zeros(v.values.shape, dtype=np.result_type(v.values, float))
    for mu in range(n - 1):
        out = out + ops.ddbar(v.values, mu, mu)
    rho = np.exp(grid.mesh()[ops.polar_axes[0]])
    out = out + ops.ddbar(v.values, n - 1, n - 1) * rho ** (2 - 2 * beta) \
        / beta ** 2
    if not np.iscomplexobj(v.values):
        out = np.real(out)
    return GridField(out, grid, v.chart, beta)


def _pullback_grid(transverse, chart):
    """Angle columns of a periodic polar grid lying in the chart window,
    re-indexed to w coordinates.
    """
    if not transverse.periodic[1]:
        raise StencilError('pullback needs a periodic angle axis')
    lo, hi = chart.z_window
    cols = []
    angles = []
    for shift in (0, 2 * np.pi):
        t = transverse.theta + shift
        inside = (t >= lo - 1e-9) & (t <= hi + 1e-9)
        cols.extend(np.nonzero(inside)[0].tolist())
        angles.extend(t[inside].tolist())
    order = np.argsort(angles)
    cols = np.asarray(cols)[order]
    angles = np.asarray(angles)[order]
    if len(cols) < 5:
        raise StencilError('chart {} window holds only {} angles'
                           .format(chart.k, len(cols)))
    grid = PolarGrid(chart.beta * transverse.s, chart.beta * angles,
                     periodic=False)
    return grid, cols


def pullback(field_, chart):
    """psi_k^* of a z-chart field by exact re-indexing of the polar grid.

       A sample at (rho, theta) in z sits at (rho^beta, beta theta) in w,
       so log-polar grids map onto log-polar grids without interpolation.
    """
    grid = field_.grid
    transverse = grid if grid.kind == 'polar' else grid.transverse
    w_grid, cols = _pullback_grid(transverse, chart)
    values = np.take(field_.values, cols, axis=len(grid.shape) - 1)
    if grid.kind == 'product':
        w_grid = ProductGrid(grid.tangential, w_grid)
    return GridField(values, w_grid, 'w{}'.format(chart.k), chart.beta)


def covering_check(beta, n_samples=1000, seed=0):
    """Fraction of random angles covered by at least one chart (should be 1)."""
    rng = np.random.default_rng(seed)
    theta = np.concatenate([rng.uniform(0, 2 * np.pi, n_samples),
                            [0.0, np.pi, 2 * np.pi - 1e-15]])
    z = ZPoint(np.exp(1j * theta)[:, None])
    try:
        locate_chart(z, beta)
    except ChartError:
        return False
    return True


def random_sector_points(chart, n_points, n=1, seed=0, r_min=1e-3, r_max=1.0):
    """Random chart points, used by the flattening self-check."""
    rng = np.random.default_rng(seed)
    lo, hi = chart.sector
    arg = rng.uniform(lo, hi, n_points)
    modulus = np.exp(rng.uniform(np.log(r_min), np.log(r_max), n_points))
    coords = (rng.normal(size=(n_points, n))
              + 1j * rng.normal(size=(n_points, n)))
    coords[:, -1] = modulus * np.exp(1j * arg)
    return WPoint(coords, arg)


def flattening_error(beta, n_points=1000, n=1, seed=0):
    """Max |psi_k^* omega_beta - I| over random points of every chart."""
    worst = 0.0
    for chart in charts(beta):
        w = random_sector_points(chart, n_points, n, seed + chart.k)
        g = pullback_metric(chart, w)
        worst = max(worst, float(np.max(np.abs(g - np.eye(n)))))
    logger.debug('flattening error at beta=%s: %.3g', beta, worst)
    return worst
