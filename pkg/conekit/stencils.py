"""Fourth-order finite-difference stencils applied with torch convolutions.

Centered kernels are applied with `torch.nn.functional.conv1d`; bounded
axes get one-sided fourth-order rows at the two outermost points on each
side, periodic axes are padded circularly. Complex samples are split into
real and imaginary channels.
"""
import logging

import numpy as np
import torch

from conekit.exceptions import StencilError

logger = logging.getLogger(__name__)

# one-sided rows at the first two points of a bounded axis
_D1_EDGE = np.array([[-25, 48, -36, 16, -3, 0],
                     [-3, -10, 18, -6, 1, 0]]) / 12
_D2_EDGE = np.array([[45, -154, 214, -156, 61, -10],
                     [10, -15, -4, 14, -6, 1]]) / 12


class Stencil(object):
    """Centered fourth-order first and second derivative kernels."""

    def __init__(self):
        d1_coeff = np.array([0, 2 / 3, -1 / 12])
        d2_coeff = np.array([-5 / 2, 4 / 3, -1 / 12])
        self.kernel_d1 = torch.tensor(np.hstack([-d1_coeff[::-1],
                                                 d1_coeff[1:]]),
                                      dtype=torch.float64).reshape(1, 1, 5)
        self.kernel_d2 = torch.tensor(np.hstack([d2_coeff[::-1],
                                                 d2_coeff[1:]]),
                                      dtype=torch.float64).reshape(1, 1, 5)
        kernel2d = torch.zeros(5, 5, dtype=torch.float64)
        kernel2d[2, :] = self.kernel_d2.reshape(5)
        kernel2d[:, 2] += self.kernel_d2.reshape(5)
        self.kernel_laplacian = kernel2d.reshape(1, 1, 5, 5)
        self.edge = {1: torch.tensor(_D1_EDGE, dtype=torch.float64),
                     2: torch.tensor(_D2_EDGE, dtype=torch.float64)}

    def apply(self, values, h, axis, order, periodic=False):
        """Derivative of `order` (1 or 2) along `axis` with spacing `h`."""
        values = np.asarray(values)
        if np.iscomplexobj(values):
            return (self.apply(values.real, h, axis, order, periodic)
                    + 1j * self.apply(values.imag, h, axis, order, periodic))
        n = values.shape[axis]
        if n < 6:
            raise StencilError('axis of length {} is too short for the '
                               'fourth-order stencil'.format(n))
        moved = np.moveaxis(values, axis, -1)
        lead = moved.shape[:-1]
        x = torch.from_numpy(np.ascontiguousarray(
            moved.reshape(-1, 1, n), dtype=np.float64))
        # shift each line by its first sample; derivatives ignore constants
        x = x - x[:, :, :1]
        kernel = self.kernel_d1 if order == 1 else self.kernel_d2
        if periodic:
            padded = torch.nn.functional.pad(x, (2, 2), mode='circular')
            out = torch.nn.functional.conv1d(padded, kernel)
        else:
            inner = torch.nn.functional.conv1d(x, kernel)
            edge = self.edge[order]
            head = torch.einsum('ij,bj->bi', edge, x[:, 0, :6])
            sign = -1.0 if order == 1 else 1.0
            tail = sign * torch.einsum('ij,bj->bi', edge,
                                       torch.flip(x[:, 0, -6:], [1]))
            out = torch.cat([head.unsqueeze(1), inner,
                             torch.flip(tail, [1]).unsqueeze(1)], dim=2)
        out = out.numpy().reshape(lead + (n,)) / h ** order
        return np.moveaxis(out, -1, axis)

    def laplacian_odd(self, values, h):
        """Centered 2D Laplacian over the last two axes with odd reflection
        about walls one step outside the grid (homogeneous Dirichlet).
        """
        values = np.asarray(values)
        if np.iscomplexobj(values):
            return (self.laplacian_odd(values.real, h)
                    + 1j * self.laplacian_odd(values.imag, h))
        lead = values.shape[:-2]
        nx, ny = values.shape[-2:]
        x = torch.from_numpy(np.ascontiguousarray(
            values.reshape(-1, 1, nx, ny), dtype=np.float64))
        x = _odd_pad(x, 2)
        x = _odd_pad(x, 3)
        out = torch.nn.functional.conv2d(x, self.kernel_laplacian)
        return out.numpy().reshape(lead + (nx, ny)) / h ** 2


def _odd_pad(x, dim):
    """Pad two points by odd reflection about a zero wall outside each end."""
    n = x.shape[dim]
    zero = torch.zeros_like(x.narrow(dim, 0, 1))
    first = x.narrow(dim, 0, 1)
    last = x.narrow(dim, n - 1, 1)
    return torch.cat([-first, zero, x, zero, -last], dim=dim)


_STENCIL = Stencil()


def diff(values, h, axis, order=1, periodic=False):
    """Module-level shortcut for `Stencil.apply`."""
    return _STENCIL.apply(values, h, axis, order, periodic)


def laplacian_odd(values, h):
    return _STENCIL.laplacian_odd(values, h)


class Wirtinger(object):
    """Complex derivatives d/dw_mu and d/dw-bar_mu on a grid.

       Values may carry trailing dimensions beyond the grid shape. On a
       BoxGrid every operator is a composition of commuting first-derivative
       stencils. The transverse coordinate of a polar or product grid uses
       the log-polar forms
           d/dw  = exp(-i t)/(2 rho) (d_s - i d_t)
           d/dw-bar = exp(i t)/(2 rho) (d_s + i d_t)
           d2/dw dw-bar = rho^-2 (d_ss + d_tt) / 4.
    """

    def __init__(self, grid):
        self.grid = grid
        kind = grid.kind
        if kind == 'polar':
            self.n = 1
            self.polar_axes = (0, 1)
            self.box_axes = []
        elif kind == 'product':
            k = grid.n_tangential_axes
            self.n = k // 2 + 1
            self.polar_axes = (k, k + 1)
            self.box_axes = [(2 * i, 2 * i + 1) for i in range(k // 2)]
        elif kind == 'box':
            if len(grid.axes) % 2:
                raise StencilError('box grid needs paired real axes')
            self.n = len(grid.axes) // 2
            self.polar_axes = None
            self.box_axes = [(2 * i, 2 * i + 1) for i in range(self.n)]
        else:
            raise StencilError('no complex structure on a {} grid'
                               .format(kind))
        if self.polar_axes is not None:
            mesh = grid.mesh()
            self._rho = np.exp(mesh[self.polar_axes[0]])
            self._phase = np.exp(1j * mesh[self.polar_axes[1]])

    def _is_polar(self, mu):
        return self.polar_axes is not None and mu == self.n - 1

    def _d(self, values, axis):
        return diff(values, self.grid.spacing[axis], axis, 1,
                    self.grid.periodic[axis])

    def _d2(self, values, axis):
        return diff(values, self.grid.spacing[axis], axis, 2,
                    self.grid.periodic[axis])

    def _bcast(self, arr, values):
        extra = np.ndim(values) - arr.ndim
        return arr.reshape(arr.shape + (1,) * extra)

    def d(self, values, mu):
        if self._is_polar(mu):
            a_s, a_t = self.polar_axes
            factor = self._bcast(np.conj(self._phase) / (2 * self._rho),
                                 values)
            return factor * (self._d(values, a_s) - 1j * self._d(values, a_t))
        ax, ay = self.box_axes[mu]
        return 0.5 * (self._d(values, ax) - 1j * self._d(values, ay))

    def dbar(self, values, mu):
        if self._is_polar(mu):
            a_s, a_t = self.polar_axes
            factor = self._bcast(self._phase / (2 * self._rho), values)
            return factor * (self._d(values, a_s) + 1j * self._d(values, a_t))
        ax, ay = self.box_axes[mu]
        return 0.5 * (self._d(values, ax) + 1j * self._d(values, ay))

    def ddbar(self, values, mu, nu):
        """d2/dw_mu dw-bar_nu."""
        if mu == nu and self._is_polar(mu):
            a_s, a_t = self.polar_axes
            factor = self._bcast(0.25 / self._rho ** 2, values)
            return factor * (self._d2(values, a_s) + self._d2(values, a_t))
        return self.d(self.dbar(values, nu), mu)

    def dd(self, values, mu, nu):
        """d2/dw_mu dw_nu."""
        return self.d(self.d(values, nu), mu)

    def complex_hessian(self, values):
        """Matrix of d2/dw_mu dw-bar_nu, stacked on two trailing axes."""
        rows = []
        for mu in range(self.n):
            rows.append(np.stack([self.ddbar(values, mu, nu)
                                  for nu in range(self.n)], axis=-1))
        return np.stack(rows, axis=-2)


def truncation_estimate(operator, field_, margin=2):
    """Richardson estimate of the error of a fourth-order operator.

       `operator` maps a GridField to an array on the same grid. The result
       is max |op_h - op_2h| / 15 over coarse points at least `margin`
       points from bounded edges.
    """
    fine = operator(field_)
    coarse_field = field_.subsample(2)
    coarse = operator(coarse_field)
    _, slices = field_.grid.subsample(2)
    fine_on_coarse = fine[slices]
    _, inner = coarse_field.grid.trim(margin)
    gap = np.abs(fine_on_coarse[inner] - coarse[inner])
    return float(np.max(gap)) / 15 if gap.size else 0.0


def extrapolate_to_axis(values, axis=0, phase_tol=1e-6):
    """Extrapolate samples on geometric radii to radius zero.

       Uses the three innermost samples along `axis` and fits
       f = f(0) + C R^gamma with gamma estimated from the ratio of
       successive differences. Returns (limit, correction, ok) where
       `correction` is |f(0) - f_innermost| and `ok` flags a well-posed
       extrapolation at every ray: a real ratio above one, up to a relative
       imaginary part of `phase_tol`.
    """
    values = np.moveaxis(np.asarray(values), axis, 0)
    f0, f1, f2 = values[0], values[1], values[2]
    d1 = f1 - f0
    d2 = f2 - f1
    scale = np.maximum(np.abs(f0), np.abs(f2))
    flat = np.abs(d1) <= 1e-14 * np.maximum(scale, 1e-300)
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = np.where(flat, 2.0, d2 / np.where(flat, 1.0, d1))
    real_ratio = np.real(ratio)
    well_posed = (np.abs(np.imag(ratio)) <= phase_tol * np.abs(ratio)) \
        & (real_ratio > 1 + 1e-12)
    ok = flat | well_posed
    correction = np.where(flat | ~well_posed, 0.0,
                          d1 / np.where(well_posed, real_ratio - 1, 1.0))
    limit = f0 - correction
    return limit, np.abs(correction), bool(np.all(ok))
