"""Structured grids, sampled fields and their on-disk format.

Transverse coordinates live on log-polar grids: radii are uniform in
s = log(rho) and angles are uniform, either periodic or a closed sector.
Tangential coordinates live on uniform Cartesian boxes whose real axes are
paired (x1, y1, x2, y2, ...) into complex coordinates.
"""
import json
import logging
import os

import numpy as np
import pandas as pd

from conekit.exceptions import StencilError

logger = logging.getLogger(__name__)


def _uniform_spacing(axis, name):
    """Return the spacing of a uniform axis."""
    if len(axis) < 2:
        return 0.0
    steps = np.diff(axis)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise StencilError('axis {} is not uniformly spaced'.format(name))
    return float(steps[0])


class Grid(object):
    """A tensor-product grid of uniform axes."""
    kind = 'grid'

    def __init__(self, axes, periodic):
        self.axes = [np.asarray(a, dtype=np.float64) for a in axes]
        self.periodic = [bool(p) for p in periodic]
        self.shape = tuple(len(a) for a in self.axes)
        self.spacing = []
        for i, (a, p) in enumerate(zip(self.axes, self.periodic)):
            if p:
                self.spacing.append(2 * np.pi / len(a))
            else:
                self.spacing.append(_uniform_spacing(a, i))

    @property
    def size(self):
        return int(np.prod(self.shape))

    def mesh(self):
        """Broadcast axes to full arrays (ij indexing)."""
        return np.meshgrid(*self.axes, indexing='ij')

    def trim(self, margin):
        """Drop `margin` points from both ends of every bounded axis."""
        if margin == 0:
            return self, tuple(slice(None) for _ in self.axes)
        axes = []
        slices = []
        for a, p in zip(self.axes, self.periodic):
            if p:
                axes.append(a)
                slices.append(slice(None))
            else:
                if len(a) <= 2 * margin:
                    raise StencilError('axis of length {} cannot be trimmed '
                                       'by {}'.format(len(a), margin))
                axes.append(a[margin:-margin])
                slices.append(slice(margin, -margin))
        return self._rebuild(axes), tuple(slices)

    def subsample(self, step=2):
        """Every `step`-th point along each axis (periodic axes included)."""
        axes = [a[::step] for a in self.axes]
        return self._rebuild(axes), tuple(slice(None, None, step)
                                          for _ in self.axes)

    def _rebuild(self, axes):
        return Grid(axes, self.periodic)

    def header(self):
        return {'kind': self.kind, 'shape': list(self.shape),
                'periodic': self.periodic,
                'axes': [[float(a[0]), float(a[-1]), len(a)]
                         for a in self.axes]}


class PolarGrid(Grid):
    """Log-polar grid in one complex coordinate.

       Axis 0 is s = log(rho), axis 1 is the angle. A periodic angle axis
       samples [0, 2 pi) without the endpoint; a sector samples a closed
       interval.
    """
    kind = 'polar'

    def __init__(self, s, theta, periodic=True):
        super(PolarGrid, self).__init__([s, theta], [False, periodic])

    @property
    def s(self):
        return self.axes[0]

    @property
    def rho(self):
        return np.exp(self.axes[0])

    @property
    def theta(self):
        return self.axes[1]

    @property
    def ds(self):
        return self.spacing[0]

    @property
    def dtheta(self):
        return self.spacing[1]

    def z(self):
        """Complex sample positions, shape (n_rho, n_theta)."""
        s, t = self.mesh()
        return np.exp(s) * np.exp(1j * t)

    def coordinates(self):
        return [self.z()]

    def real_points(self):
        z = self.z().ravel()
        return np.stack([z.real, z.imag], axis=1)

    def _rebuild(self, axes):
        return PolarGrid(axes[0], axes[1], self.periodic[1])


class BoxGrid(Grid):
    """Uniform Cartesian grid; consecutive axis pairs form complex
    coordinates.
    """
    kind = 'box'

    def __init__(self, axes):
        super(BoxGrid, self).__init__(axes, [False] * len(axes))

    @property
    def n_complex(self):
        return len(self.axes) // 2

    def coordinates(self):
        m = self.mesh()
        if len(m) % 2:
            return m
        return [m[2 * i] + 1j * m[2 * i + 1] for i in range(len(m) // 2)]

    def real_points(self):
        return np.stack([a.ravel() for a in self.mesh()], axis=1)

    def _rebuild(self, axes):
        return BoxGrid(axes)


class ProductGrid(Grid):
    """Tangential box times a transverse log-polar grid."""
    kind = 'product'

    def __init__(self, tangential, transverse):
        self.tangential = tangential
        self.transverse = transverse
        super(ProductGrid, self).__init__(
            tangential.axes + transverse.axes,
            tangential.periodic + transverse.periodic)

    @property
    def n_tangential_axes(self):
        return len(self.tangential.axes)

    def coordinates(self):
        m = self.mesh()
        k = self.n_tangential_axes
        coords = [m[2 * i] + 1j * m[2 * i + 1] for i in range(k // 2)]
        coords.append(np.exp(m[k]) * np.exp(1j * m[k + 1]))
        return coords

    def real_points(self):
        m = self.mesh()
        k = self.n_tangential_axes
        z = np.exp(m[k]) * np.exp(1j * m[k + 1])
        cols = [a.ravel() for a in m[:k]] + [z.real.ravel(), z.imag.ravel()]
        return np.stack(cols, axis=1)

    def _rebuild(self, axes):
        k = self.n_tangential_axes
        return ProductGrid(BoxGrid(axes[:k]),
                           PolarGrid(axes[k], axes[k + 1],
                                     self.transverse.periodic[1]))


class RadialGrid(Grid):
    """Log-radius axes x_i = log|w_i|, one per complex coordinate.

       Used for torus-invariant profiles, which are functions of the
       moduli only.
    """
    kind = 'radial'

    def __init__(self, axes):
        super(RadialGrid, self).__init__(axes, [False] * len(axes))

    def moduli(self):
        return [np.exp(m) for m in self.mesh()]

    def coordinates(self):
        return self.moduli()

    def real_points(self):
        return np.stack([m.ravel() for m in self.moduli()], axis=1)

    def _rebuild(self, axes):
        return RadialGrid(axes)


def polar_grid(n_rho, n_theta, rho_min=1e-4, rho_max=1.0, sector=None):
    """Log-polar grid; `sector` is a closed angle interval or None for the
    full periodic circle.
    """
    if n_rho < 2 or n_theta < 1:
        raise StencilError('polar grid needs n_rho >= 2 and n_theta >= 1')
    s = np.linspace(np.log(rho_min), np.log(rho_max), n_rho)
    if sector is None:
        theta = np.linspace(0, 2 * np.pi, n_theta, endpoint=False)
        return PolarGrid(s, theta, periodic=True)
    theta = np.linspace(sector[0], sector[1], n_theta)
    return PolarGrid(s, theta, periodic=False)


def box_grid(n, lo=-1.0, hi=1.0, n_axes=2):
    """Square Cartesian box with `n` points per axis."""
    return BoxGrid([np.linspace(lo, hi, n) for _ in range(n_axes)])


def polar_ladder(n_rho, n_theta, rho_min, depth=3, rho_max=1.0,
                 refine_theta=False):
    """Refinement ladder approaching the divisor.

       Each level doubles the number of radii and doubles the log-radius
       range, so the radial step stays fixed while rho_min is squared
       (relative to rho_max).
    """
    grids = []
    log_range = np.log(rho_max) - np.log(rho_min)
    for level in range(depth):
        scale = 2 ** level
        lo = np.exp(np.log(rho_max) - log_range * scale)
        nt = n_theta * scale if refine_theta else n_theta
        grids.append(polar_grid(n_rho * scale, nt, lo, rho_max))
    return grids


class GridField(object):
    """Samples of a scalar or matrix-valued function on a grid.

       `chart` is 'z' for the singular coordinates or 'w<k>' for the k-th
       flattening chart.
    """

    def __init__(self, values, grid, chart='z', beta=None):
        values = np.asarray(values)
        if values.shape[:len(grid.shape)] != grid.shape:
            raise StencilError('values of shape {} do not match grid {}'
                               .format(values.shape, grid.shape))
        self.values = values
        self.grid = grid
        self.chart = chart
        self.beta = beta

    @property
    def value_shape(self):
        return self.values.shape[len(self.grid.shape):]

    def with_values(self, values, chart=None, grid=None):
        return GridField(values, self.grid if grid is None else grid,
                         self.chart if chart is None else chart, self.beta)

    def trim(self, margin):
        grid, slices = self.grid.trim(margin)
        return GridField(self.values[slices], grid, self.chart, self.beta)

    def subsample(self, step=2):
        grid, slices = self.grid.subsample(step)
        return GridField(self.values[slices], grid, self.chart, self.beta)

    def flat_values(self):
        return self.values.reshape((self.grid.size,) + self.value_shape)


def sample(func, grid, chart='z', beta=None):
    """Evaluate `func` on the complex coordinates of `grid`."""
    return GridField(func(*grid.coordinates()), grid, chart, beta)


def _grid_from_header(header):
    axes = []
    for (lo, hi, n), p in zip(header['axes'], header['periodic']):
        if p and n > 1:
            axes.append(np.linspace(lo, lo + (hi - lo) * n / (n - 1), n,
                                    endpoint=False))
        else:
            axes.append(np.linspace(lo, hi, n))
    kind = header['kind']
    if kind == 'polar':
        return PolarGrid(axes[0], axes[1], header['periodic'][1])
    if kind == 'box':
        return BoxGrid(axes)
    if kind == 'radial':
        return RadialGrid(axes)
    if kind == 'product':
        k = len(axes) - 2
        return ProductGrid(BoxGrid(axes[:k]),
                           PolarGrid(axes[k], axes[k + 1],
                                     header['periodic'][-1]))
    return Grid(axes, header['periodic'])


def write_field(field_, path):
    """Write a field as a CSV (header lines + row-major samples) and an
    exact .npy sidecar.
    """
    header = field_.grid.header()
    header.update({'chart': field_.chart, 'beta': field_.beta,
                   'value_shape': list(field_.value_shape)})
    flat = field_.values.reshape(-1)
    table = pd.DataFrame({'re': np.real(flat), 'im': np.imag(flat)})
    with open(path, 'w') as f:
        for key in sorted(header):
            f.write('# {}: {}\n'.format(key, json.dumps(header[key])))
        table.to_csv(f, index=False, float_format='%.17g')
    np.save(os.path.splitext(path)[0] + '.npy', field_.values)
    logger.debug('wrote field %s', path)


def read_field(path):
    """Read a field written by `write_field`."""
    header = {}
    with open(path) as f:
        for line in f:
            if not line.startswith('# '):
                break
            key, value = line[2:].split(':', 1)
            header[key.strip()] = json.loads(value)
    grid = _grid_from_header(header)
    sidecar = os.path.splitext(path)[0] + '.npy'
    if os.path.exists(sidecar):
        values = np.load(sidecar)
    else:
        table = pd.read_csv(path, comment='#')
        values = table['re'].values + 1j * table['im'].values
        if not np.any(table['im'].values):
            values = values.real
        values = values.reshape(grid.shape + tuple(header['value_shape']))
    return GridField(values, grid, header['chart'], header['beta'])
