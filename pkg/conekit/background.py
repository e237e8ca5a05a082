"""Background potentials that degenerate along a smooth divisor D.

The built-in geometries are torus invariant, so every potential is a
function of the log-moduli x_i = log|w_i| and its complex Hessian is the
real x-Hessian conjugated by diag(1 / (2 w_i)). Determinant ratios and
generalized eigenvalues do not see that congruence, so positivity and
volume checks below all work with x-Hessians.

The glued potential is

    u = M_eta(u~, q),   u~ = exp(-1/|s|^2) - v,   q = 1/eta^2 + eta log|s|^2

which equals u~ near D and q away from it. Translation invariance of
M_eta gives P + u = M_eta(psi_D + exp(-1/|s|^2), q + P) for the potential
P = psi_D + v of omega, and that form is used for the glued Hessian.
"""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import torch

from conekit.config import BackgroundConfig
from conekit.exceptions import (ConditioningError, GluingError,
                                ParameterError, PositivityError,
                                StencilError)
from conekit.glue_max import MollifierSpec, m_eta_jet
from conekit.grid import GridField, RadialGrid, polar_ladder, write_field
from conekit.stencils import diff, extrapolate_to_axis, truncation_estimate
from conekit.weighted_holder import dw_membership

logger = logging.getLogger(__name__)

_EDGE = 2
# shells used for power matching when u = 0
_SHELL_MAX = 1e-3


def jets(func, points):
    """Value, gradient and Hessian of a torch expression at (N, n)
       log-moduli points, by automatic differentiation.
    """
    x = torch.tensor(np.asarray(points, dtype=np.float64), requires_grad=True)
    value = func(x)
    grad, = torch.autograd.grad(value.sum(), x, create_graph=True)
    n = x.shape[1]
    if grad.requires_grad:
        rows = []
        for i in range(n):
            row, = torch.autograd.grad(grad[:, i].sum(), x,
                                       retain_graph=True, allow_unused=True)
            rows.append(torch.zeros_like(x) if row is None else row)
        hess = torch.stack(rows, dim=1).detach().numpy()
    else:
        hess = np.zeros((x.shape[0], n, n))
    return value.detach().numpy(), grad.detach().numpy(), hess


class ModelGeometry(object):
    """A torus-invariant neighbourhood of D, cut to |s|^2 <= sup_s2.

       s is rescaled by c so that the sup of |s|^2 over the domain is
       sup_s2 < 1.
    """
    name = None
    n = None

    def __init__(self, sup_s2=np.exp(-2.0), flush_h=1 / 745.0):
        if not 0 < sup_s2 < 1:
            raise ParameterError('sup |s|^2 must lie in (0, 1), got {}'
                                 .format(sup_s2))
        self.sup_s2 = float(sup_s2)
        self.c2 = float(sup_s2)
        self.flush_h = float(flush_h)

    def log_norm2(self, x):
        raise NotImplementedError

    def potential(self, x):
        raise NotImplementedError

    def divisor_potential(self, x):
        """The part of the potential pulled back from D."""
        raise NotImplementedError

    def v(self, x):
        """Potential of omega relative to the pullback of omega|_D."""
        raise NotImplementedError

    def log_fiber_weight(self, points):
        """log|s|^2 - log c^2 - 2 x_n as a numpy array."""
        raise NotImplementedError

    def curvature(self, points):
        """x-frame matrices of the Chern curvature Theta of h."""
        raise NotImplementedError

    def conic_model_hessian(self, points, beta):
        """x-frame matrices of the model cone metric of angle 2 pi beta."""
        raise NotImplementedError

    def axes(self, config):
        raise NotImplementedError

    def _fiber_axis(self, config):
        lo = 0.5 * np.log(config.s2_min / self.c2)
        return np.linspace(lo, 0.0, config.n_radial)

    def grid(self, config=None):
        return RadialGrid(self.axes(config or BackgroundConfig()))

    def in_domain(self, log_s2):
        return log_s2 <= np.log(self.sup_s2) + 1e-12

    def summary(self):
        return {'name': self.name, 'n': self.n, 'c2': self.c2,
                'sup_s2': self.sup_s2}


class DiscModel(ModelGeometry):
    """D = {0} in the unit disc, omega = i dz ^ dz-bar, h flat."""
    name = 'disc_n1'
    n = 1

    def log_norm2(self, x):
        return np.log(self.c2) + 2 * x[:, 0]

    def potential(self, x):
        return torch.exp(2 * x[:, 0])

    def divisor_potential(self, x):
        return 0 * x[:, 0]

    def v(self, x):
        return torch.exp(2 * x[:, 0])

    def log_fiber_weight(self, points):
        return np.zeros(len(points))

    def curvature(self, points):
        return np.zeros((len(points), 1, 1))

    def conic_model_hessian(self, points, beta):
        out = 4 * beta ** 2 * np.exp(2 * beta * points[:, 0])
        return out[:, None, None]

    def axes(self, config):
        return [self._fiber_axis(config)]


class LineBundleModel(ModelGeometry):
    """Zero section of O(-k_b) over P^1 in the chart (xi, zeta).

       |s|^2 = c^2 |zeta|^2 (1 + |xi|^2)^k_b and omega has potential
       log(1 + |xi|^2) + |zeta|^2 (1 + |xi|^2)^k_b.
    """
    name = 'line_bundle_p1'
    n = 2

    def __init__(self, k_bundle=1, sup_s2=np.exp(-2.0), flush_h=1 / 745.0):
        if k_bundle not in (1, 2):
            raise ParameterError('k_bundle must be 1 or 2, got {}'
                                 .format(k_bundle))
        super(LineBundleModel, self).__init__(sup_s2, flush_h)
        self.k_bundle = int(k_bundle)

    def log_norm2(self, x):
        return np.log(self.c2) + 2 * x[:, 1] \
            + self.k_bundle * torch.log1p(torch.exp(2 * x[:, 0]))

    def potential(self, x):
        return self.divisor_potential(x) + self.v(x)

    def divisor_potential(self, x):
        return torch.log1p(torch.exp(2 * x[:, 0]))

    def v(self, x):
        return torch.exp(2 * x[:, 1]) \
            * (1 + torch.exp(2 * x[:, 0])) ** self.k_bundle

    def log_fiber_weight(self, points):
        return self.k_bundle * np.log1p(np.exp(2 * points[:, 0]))

    def curvature(self, points):
        a = np.exp(2 * points[:, 0])
        out = np.zeros((len(points), 2, 2))
        out[:, 0, 0] = -4 * self.k_bundle * a / (1 + a) ** 2
        return out

    def conic_model_hessian(self, points, beta):
        a = np.exp(2 * points[:, 0])
        out = np.zeros((len(points), 2, 2))
        out[:, 0, 0] = 4 * a / (1 + a) ** 2
        out[:, 1, 1] = 4 * beta ** 2 * np.exp(2 * beta * points[:, 1])
        return out

    def axes(self, config):
        base = np.linspace(np.log(0.25), np.log(2.0), config.n_base)
        return [base, self._fiber_axis(config)]

    def summary(self):
        out = super(LineBundleModel, self).summary()
        out['k_bundle'] = self.k_bundle
        return out


def model_geometry(name, config=None):
    """Built-in geometry by name."""
    config = config or BackgroundConfig()
    if name == DiscModel.name:
        return DiscModel(config.sup_s2, config.flush_h)
    if name == LineBundleModel.name:
        return LineBundleModel(config.k_bundle, config.sup_s2,
                               config.flush_h)
    raise ParameterError('unknown geometry {!r}'.format(name))


def log_moduli(grid):
    """(N, n) log-moduli of the points of a radial grid. Polar and product
       grids give one point per angle line, i.e. the angle axis is dropped.
    """
    if grid.kind == 'radial':
        cols = grid.mesh()
    elif grid.kind == 'polar':
        cols = [grid.s]
    elif grid.kind == 'product':
        k = grid.n_tangential_axes
        m = np.meshgrid(*(grid.tangential.axes + [grid.transverse.s]),
                        indexing='ij')
        mod2 = [m[2 * i] ** 2 + m[2 * i + 1] ** 2 for i in range(k // 2)]
        if any(np.any(r == 0) for r in mod2):
            raise StencilError('tangential grid meets a coordinate axis')
        cols = [0.5 * np.log(r) for r in mod2] + [m[k]]
    else:
        raise StencilError('no log-moduli on a {} grid'.format(grid.kind))
    return np.stack([c.ravel() for c in cols], axis=1)


def _outer(g):
    return g[:, :, None] * g[:, None, :]


@dataclass
class ProfileJets:
    """Exact jets of the model profiles at log-moduli points.

       m_hat is |s|^4 (Hess g + grad g grad g^T) for g = -1/|s|^2, so the
       Hessian of exp(g) is exp(g) |s|^-4 m_hat.
    """
    points: np.ndarray
    log_s2: np.ndarray
    d_log_s2: np.ndarray
    h_log_s2: np.ndarray
    hess_p: np.ndarray
    hess_psi: np.ndarray
    v: np.ndarray
    d_v: np.ndarray
    hess_v: np.ndarray
    e: np.ndarray
    m_hat: np.ndarray

    @property
    def s2(self):
        return np.exp(self.log_s2)

    @property
    def n(self):
        return self.points.shape[1]


def profile_jets(geom, points):
    points = np.asarray(points, dtype=np.float64)
    log_s2, d_log, h_log = jets(geom.log_norm2, points)
    _, _, hess_p = jets(geom.potential, points)
    _, _, hess_psi = jets(geom.divisor_potential, points)
    v, d_v, hess_v = jets(geom.v, points)
    s2 = np.exp(log_s2)
    inv = np.exp(-log_s2)
    # exp(-1/h) is flushed to zero below the double-precision floor
    live = s2 > geom.flush_h
    e = np.where(live, np.exp(-np.where(live, inv, 0.0)), 0.0)
    m_hat = h_log * s2[:, None, None] \
        + _outer(d_log) * (1 - s2)[:, None, None]
    return ProfileJets(points, log_s2, d_log, h_log, hess_p, hess_psi, v,
                       d_v, hess_v, e, m_hat)


@dataclass
class GluedJets:
    profile: ProfileJets
    u: np.ndarray
    u_tilde: np.ndarray
    q: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    h: np.ndarray
    hess_ut: np.ndarray
    hess_q: np.ndarray
    hess_phi: np.ndarray

    @property
    def pure_inner(self):
        """Points where u = u~ with vanishing M_eta corrections."""
        return (self.g2 == 0) & (self.h == 0)

    @property
    def hess_u(self):
        return self.hess_phi - self.profile.hess_p


class GluedPotential(object):
    """u = M_eta(u~, q) with its exact jets at arbitrary points."""

    def __init__(self, geom, eta, spec=None):
        if not eta > 0:
            raise ParameterError('eta must be positive, got {}'.format(eta))
        self.geom = geom
        self.eta = float(eta)
        self.spec = spec or MollifierSpec(eta=eta)

    def evaluate(self, points):
        pj = profile_jets(self.geom, points)
        eta = self.eta
        s2 = pj.s2
        inv = np.where(pj.e > 0, 1 / s2, 0.0)
        u_tilde = pj.e - pj.v
        q = 1 / eta ** 2 + eta * pj.log_s2
        u, (g1, g2), h = m_eta_jet(u_tilde, q, self.spec)
        e_hess = (pj.e * inv ** 2)[:, None, None] * pj.m_hat
        grad_ut = (pj.e * inv)[:, None] * pj.d_log_s2 - pj.d_v
        hess_ut = e_hess - pj.hess_v
        hess_q = eta * pj.h_log_s2
        d = grad_ut - eta * pj.d_log_s2
        # chain rule through M_eta on the non-cancelling form
        hess_a = pj.hess_psi + e_hess
        hess_b = hess_q + pj.hess_p
        hess_phi = g1[:, None, None] * hess_a + g2[:, None, None] * hess_b \
            + h[:, None, None] * _outer(d)
        return GluedJets(pj, u, u_tilde, q, g1, g2, h, hess_ut, hess_q,
                         hess_phi)


def _schur_logdet(H):
    """log det of stacked 1x1 or 2x2 symmetric matrices; nan where not
       positive definite.
    """
    if H.shape[-1] > 2:
        raise StencilError('log-determinants are implemented for n <= 2')
    with np.errstate(divide='ignore', invalid='ignore'):
        if H.shape[-1] == 1:
            a = H[..., 0, 0]
            return np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), np.nan)
        h22 = H[..., 1, 1]
        safe = np.where(h22 > 0, h22, 1.0)
        schur = H[..., 0, 0] - H[..., 0, 1] ** 2 / safe
        ok = (h22 > 0) & (schur > 0)
        return np.where(ok, np.log(safe) + np.log(np.where(ok, schur, 1.0)),
                        np.nan)


def _inner_logdet(pj):
    """log det of Hess(psi_D + exp(-1/|s|^2)) in log form, valid where
       exp(-1/|s|^2) underflows. psi_D does not depend on the fiber.
    """
    log_e = -np.exp(-pj.log_s2) - 2 * pj.log_s2
    mh = pj.m_hat
    with np.errstate(divide='ignore', invalid='ignore'):
        if pj.n == 1:
            p = pj.hess_psi[:, 0, 0]
            log_p = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), -np.inf)
            m = mh[:, 0, 0]
            log_m = np.where(m > 0, np.log(np.where(m > 0, m, 1.0)), np.nan)
            return np.logaddexp(log_p, log_e + log_m)
        m22 = mh[:, 1, 1]
        safe = np.where(m22 > 0, m22, 1.0)
        rest = pj.hess_psi[:, 0, 0] \
            + np.exp(log_e) * (mh[:, 0, 0] - mh[:, 0, 1] ** 2 / safe)
        ok = (m22 > 0) & (rest > 0)
        return np.where(ok, log_e + np.log(safe)
                        + np.log(np.where(ok, rest, 1.0)), np.nan)


def _phi_logdet(gj):
    """log det of the glued x-Hessian. Where a tiny M_eta weight underflows
       the lower bound Hess(P + u) >= dM/dt1 Hess(psi_D + exp(-1/|s|^2))
       is used instead.
    """
    inner = _inner_logdet(gj.profile)
    outer = _schur_logdet(gj.hess_phi)
    with np.errstate(divide='ignore'):
        bound = gj.profile.n * np.log(gj.g1) + inner
    return np.where(gj.pure_inner, inner,
                    np.where(np.isfinite(outer), outer, bound))


def _generalized_band(H, G, log_det_h=None):
    """(log smallest, largest) generalized eigenvalue of H against the
       positive definite G, for n <= 2.
    """
    if log_det_h is None:
        log_det_h = _schur_logdet(H)
    if H.shape[-1] == 1:
        log_lo = log_det_h - np.log(G[..., 0, 0])
        return log_lo, H[..., 0, 0] / G[..., 0, 0]
    det_g = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] ** 2
    t = H[..., 0, 0] * G[..., 1, 1] + H[..., 1, 1] * G[..., 0, 0] \
        - 2 * H[..., 0, 1] * G[..., 0, 1]
    det_h = np.exp(log_det_h)
    root = np.sqrt(np.maximum(t ** 2 - 4 * det_g * det_h, 0.0))
    with np.errstate(divide='ignore', invalid='ignore'):
        log_lo = np.log(2.0) + log_det_h - np.log(t + root)
    return log_lo, (t + root) / (2 * det_g)


def _fd_hessian(values, grid):
    """Fourth-order x-Hessian of samples on a radial grid."""
    n = len(grid.axes)
    out = np.empty(values.shape + (n, n))
    for i in range(n):
        for j in range(i, n):
            if i == j:
                d = diff(values, grid.spacing[i], i, 2)
            else:
                d = diff(diff(values, grid.spacing[i], i, 1),
                         grid.spacing[j], j, 1)
            out[..., i, j] = d
            out[..., j, i] = d
    return out


def _interior(grid):
    mask = np.zeros(grid.shape, dtype=bool)
    mask[tuple(slice(_EDGE, -_EDGE) for _ in grid.shape)] = True
    return mask


def _fd_check(values, expected, grid, config, mask=None):
    """Finite-difference x-Hessian of `values` against `expected` on the
       interior, judged against the truncation estimate.
    """
    fd = _fd_hessian(values, grid)
    region = _interior(grid)
    if mask is not None:
        region &= mask
    gap = np.abs(fd - expected)[region]
    residual = float(np.max(gap)) if gap.size else 0.0
    estimate = truncation_estimate(lambda f: _fd_hessian(f.values, f.grid),
                                   GridField(values, grid), _EDGE)
    scale = max(1.0, float(np.max(np.abs(expected[region])))
                if gap.size else 1.0)
    tolerance = config.truncation_factor * estimate \
        + config.truncation_floor * scale
    return {'residual': residual, 'truncation': estimate,
            'tolerance': tolerance, 'passed': residual <= tolerance}


def tilde_u(geom, config=None):
    """u~ = exp(-1/|s|^2) - v on the geometry grid."""
    grid = geom.grid(config)
    pj = profile_jets(geom, log_moduli(grid))
    return GridField((pj.e - pj.v).reshape(grid.shape), grid)


def q_function(geom, eta, config=None):
    """q = 1/eta^2 + eta log|s|^2 on the geometry grid."""
    if not eta > 0:
        raise ParameterError('eta must be positive, got {}'.format(eta))
    grid = geom.grid(config)
    log_s2, _, _ = jets(geom.log_norm2, log_moduli(grid))
    return GridField((1 / eta ** 2 + eta * log_s2).reshape(grid.shape), grid)


def q_curvature_residual(geom, eta, config=None):
    """Check i ddbar q = -eta Theta away from D by finite differences."""
    config = config or BackgroundConfig()
    q = q_function(geom, eta, config)
    points = log_moduli(q.grid)
    expected = -eta * geom.curvature(points)
    return _fd_check(q.values, expected.reshape(q.grid.shape + (geom.n,) * 2),
                     q.grid, config)


def lelong_residual(geom, config=None):
    """Check Theta + i ddbar log|s|^2 = 0 away from D."""
    config = config or BackgroundConfig()
    grid = geom.grid(config)
    points = log_moduli(grid)
    log_s2, _, _ = jets(geom.log_norm2, points)
    expected = -geom.curvature(points)
    return _fd_check(log_s2.reshape(grid.shape),
                     expected.reshape(grid.shape + (geom.n,) * 2), grid,
                     config)


def omega_check(geom, config=None):
    """omega is positive definite on the domain."""
    grid = geom.grid(config)
    pj = profile_jets(geom, log_moduli(grid))
    log_det = _schur_logdet(pj.hess_p)[geom.in_domain(pj.log_s2)]
    return {'min_log_det': float(np.min(log_det)),
            'passed': bool(np.all(np.isfinite(log_det)))}


def _first_true(ok):
    idx = np.nonzero(ok)[0]
    return int(idx[0]) if idx.size else None


def choose_gluing_parameters(geom, ut=None, candidate_etas=None,
                             config=None):
    """Scan eta downward and return (eta, r, r') with

           q > u~ + eta + 1/eta   on every shell |s|^2 >= r,
           u~ > q + eta + 1/eta   on every shell |s|^2 <= r',

       r' < r, and omega + i ddbar q > 0 on {|s|^2 >= r'}.
    """
    config = config or BackgroundConfig()
    etas = sorted(config.eta_ladder if candidate_etas is None
                  else candidate_etas, reverse=True)
    if not etas:
        raise ParameterError('empty eta ladder')
    grid = geom.grid(config)
    pj = profile_jets(geom, log_moduli(grid))
    if ut is None:
        ut_values = pj.e - pj.v
    else:
        ut_values = np.asarray(ut.values).ravel()
    domain = geom.in_domain(pj.log_s2)
    order = np.argsort(pj.s2[domain], kind='stable')
    s2 = pj.s2[domain][order]
    log_s2 = pj.log_s2[domain][order]
    ut_sorted = ut_values[domain][order]
    hess_p = pj.hess_p[domain][order]
    h_log = pj.h_log_s2[domain][order]
    diagnostics = {}
    for eta in etas:
        q = 1 / eta ** 2 + eta * log_s2
        gap = eta + 1 / eta
        outer_ok = q - ut_sorted > gap
        inner_ok = ut_sorted - q > gap
        # smallest r with every shell above it separated, largest r' below
        suffix = np.logical_and.accumulate(outer_ok[::-1])[::-1]
        prefix = np.logical_and.accumulate(inner_ok)
        i_outer = _first_true(suffix)
        n_inner = int(np.sum(prefix))
        entry = {'outer_shells': int(np.sum(suffix)), 'inner_shells': n_inner,
                 'max_outer_gap': float(np.max(q - ut_sorted)),
                 'max_inner_gap': float(np.max(ut_sorted - q))}
        diagnostics[eta] = entry
        if i_outer is None or n_inner == 0:
            continue
        r = float(s2[i_outer])
        r_inner = float(s2[n_inner - 1])
        if not (np.all(outer_ok[s2 >= r]) and np.all(inner_ok[s2 <= r_inner])
                and r_inner < r):
            entry['reason'] = 'radii do not separate'
            continue
        above = s2 >= r_inner
        log_det = _schur_logdet(hess_p[above] + eta * h_log[above])
        if not np.all(np.isfinite(log_det)):
            entry['reason'] = 'omega + i ddbar q is not positive'
            continue
        logger.info('gluing at eta = %g with r = %.3e, r\' = %.3e', eta, r,
                    r_inner)
        return eta, r, r_inner
    raise GluingError('no admissible eta in {}'.format(etas), diagnostics)


@dataclass
class BackgroundResult:
    """The glued potential u and the evidence for its three properties."""
    u: GridField
    eta: float
    radii: Tuple[float, float]
    log_positivity_margin: float
    conic_positivity_margin: float
    vanishing_fit: dict
    checks: dict = field(default_factory=dict)
    potential: Optional[GluedPotential] = None

    @property
    def geom(self):
        return self.potential.geom

    @property
    def positivity_margin(self):
        return float(np.exp(self.log_positivity_margin))

    @property
    def passed(self):
        return all(c['passed'] for c in self.checks.values())

    def to_dict(self):
        return {'geometry': self.geom.summary(), 'eta': self.eta,
                'r': self.radii[0], 'r_inner': self.radii[1],
                'positivity_margin': self.positivity_margin,
                'log_positivity_margin': self.log_positivity_margin,
                'conic_positivity_margin': self.conic_positivity_margin,
                'vanishing_fit': self.vanishing_fit,
                'checks': self.checks, 'passed': self.passed}


def _decay_fit(inv_s2, y):
    """Least-squares y = c0 + c1 / |s|^2 with its R^2."""
    if y.size < 3:
        raise ConditioningError('need at least three inner shells, got {}'
                                .format(y.size))
    scale = float(np.max(inv_s2))
    X = np.stack([np.ones_like(inv_s2), inv_s2 / scale], axis=1)
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < 2:
        raise ConditioningError('decay fit is rank deficient')
    pred = X @ coef
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1 - float(np.sum((y - pred) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return {'intercept': float(coef[0]), 'slope': float(coef[1] / scale),
            'r_squared': r2}


def _vanishing(pj, log_vol, inner, config):
    """Fit the log volume ratio against 1/|s|^2 inside r' and test the
       decay of |s|^-2k times the ratio.
    """
    inv = np.exp(-pj.log_s2[inner])
    y = log_vol[inner]
    fit = _decay_fit(inv, y)
    fit['passed'] = bool(np.all(np.isfinite(y)) and fit['slope'] < 0
                         and fit['r_squared'] >= config.r_squared)
    ladder = {}
    s2 = pj.s2[inner]
    for k in config.k_ladder:
        yk = y - k * pj.log_s2[inner]
        fit_k = _decay_fit(inv, yk)
        innermost = float(yk[np.argmin(s2)])
        edge = float(yk[np.argmax(s2)])
        fit_k.update({'log_innermost': innermost, 'log_edge': edge,
                      'passed': bool(np.all(np.isfinite(yk))
                                     and fit_k['slope'] < 0
                                     and fit_k['r_squared'] >= config.r_squared
                                     and innermost < edge)})
        ladder[int(k)] = fit_k
    fit['ladder'] = ladder
    fit['passed'] = fit['passed'] and all(v['passed'] for v in ladder.values())
    return fit


def _constant_on_divisor(grid, u, config):
    """Extrapolate u along the fiber axis to D and measure its variance."""
    axis = len(grid.shape) - 1
    limit, correction, ok = extrapolate_to_axis(u, axis)
    limit = np.atleast_1d(np.real(limit))
    variance = float(np.var(limit))
    return {'variance': variance, 'mean': float(np.mean(limit)),
            'correction': float(np.max(correction)), 'well_posed': ok,
            'passed': bool(ok and variance <= config.variance_tolerance)}


def _psh_chain(grid, gj, annulus, config):
    """Finite-difference Hessian of u against the lower bound
       dM/dt1 Hess u~ + dM/dt2 Hess q in the semidefinite order.
    """
    n = gj.profile.n
    u = gj.u.reshape(grid.shape)
    lower = gj.g1[:, None, None] * gj.hess_ut \
        + gj.g2[:, None, None] * gj.hess_q
    lower = lower.reshape(grid.shape + (n, n))
    gap = _fd_hessian(u, grid) - lower
    if n == 1:
        eig = gap[..., 0, 0]
    else:
        eig = np.linalg.eigvalsh(gap)[..., 0]
    region = annulus.reshape(grid.shape) & _interior(grid)
    worst = float(np.min(eig[region])) if np.any(region) else 0.0
    estimate = truncation_estimate(lambda f: _fd_hessian(f.values, f.grid),
                                   GridField(u, grid), _EDGE)
    scale = max(1.0, float(np.max(np.abs(lower[region])))
                if np.any(region) else 1.0)
    tolerance = config.truncation_factor * estimate \
        + config.truncation_floor * scale
    return {'min_eigenvalue': worst, 'tolerance': tolerance,
            'points': int(np.sum(region)), 'passed': worst >= -tolerance}


def conic_positivity(potential, beta, config=None, points=None):
    """Band of omega + i ddbar(u + |s|^2beta) against the model cone metric,
       with the uniform bound beta |s|^2beta <= (-e log sup|s|^2)^-1.
    """
    if not 0 < beta < 1:
        raise ParameterError('beta must lie in (0, 1), got {}'.format(beta))
    config = config or BackgroundConfig()
    geom = potential.geom
    if points is None:
        points = log_moduli(geom.grid(config))
    gj = potential.evaluate(points)
    pj = gj.profile
    domain = geom.in_domain(pj.log_s2)
    y_hat = beta ** 2 * _outer(pj.d_log_s2) + beta * pj.h_log_s2
    H = gj.hess_phi + np.exp(beta * pj.log_s2)[:, None, None] * y_hat
    G = geom.conic_model_hessian(pj.points, beta)
    log_lo, hi = _generalized_band(H[domain], G[domain])
    lhs = beta * geom.sup_s2 ** beta
    rhs = 1 / (-np.e * np.log(geom.sup_s2))
    finite = bool(np.all(np.isfinite(log_lo)) and np.all(np.isfinite(hi)))
    log_margin = float(np.min(log_lo)) if finite else float('nan')
    return {'beta': beta, 'log_margin': log_margin,
            'margin': float(np.exp(log_margin)) if finite else 0.0,
            'upper': float(np.max(hi)) if finite else float('inf'),
            'bound': lhs, 'bound_limit': rhs,
            'passed': bool(finite and lhs <= rhs)}


def build_background_u(geom, config=None, candidate_etas=None):
    """Glue u~ to q and verify that u is constant along D, that
       (omega + i ddbar u)^n vanishes to infinite order there, and that
       omega + i ddbar(u + |s|^2beta) is a conic metric for every beta in
       the ladder.
    """
    config = config or BackgroundConfig()
    eta, r, r_inner = choose_gluing_parameters(geom, None, candidate_etas,
                                               config)
    potential = GluedPotential(geom, eta)
    grid = geom.grid(config)
    gj = potential.evaluate(log_moduli(grid))
    pj = gj.profile
    s2 = pj.s2
    domain = geom.in_domain(pj.log_s2)
    inner = domain & (s2 <= r_inner)
    outer = domain & (s2 >= r)
    annulus = domain & (s2 >= r_inner) & (s2 <= r)

    checks = {}
    inner_gap = float(np.max(np.abs(gj.u - gj.u_tilde)[inner]))
    outer_gap = float(np.max(np.abs(gj.u - gj.q)[outer]))
    checks['exactness'] = {
        'inner': inner_gap, 'outer': outer_gap,
        'passed': max(inner_gap, outer_gap) <= config.gluing_tolerance}

    log_det = _phi_logdet(gj)
    bad = domain & ~np.isfinite(log_det)
    if np.any(bad):
        where = pj.points[np.argmax(bad)]
        raise PositivityError('omega + i ddbar u is not positive definite at '
                              'log-moduli {}'.format(where.tolist()),
                              location=where.tolist())
    log_lo, _ = _generalized_band(gj.hess_phi, pj.hess_p, log_det)
    log_margin = float(np.min(log_lo[domain & (s2 >= r_inner)]))
    log_vol = log_det - _schur_logdet(pj.hess_p)

    vanishing = _vanishing(pj, log_vol, inner, config)
    checks['vanishing'] = {'passed': vanishing['passed']}
    checks['constant_on_divisor'] = _constant_on_divisor(
        grid, gj.u.reshape(grid.shape), config)
    checks['psh_chain'] = _psh_chain(grid, gj, annulus, config)
    checks['q_curvature'] = q_curvature_residual(geom, eta, config)
    checks['lelong'] = lelong_residual(geom, config)
    checks['omega'] = omega_check(geom, config)
    conic = {str(beta): conic_positivity(potential, beta, config)
             for beta in config.beta_ladder}
    checks['conic'] = {'betas': conic,
                       'passed': all(c['passed'] for c in conic.values())}
    conic_margin = min(c['margin'] for c in conic.values()) if conic \
        else float('nan')

    result = BackgroundResult(GridField(gj.u.reshape(grid.shape), grid),
                              eta, (r, r_inner), log_margin, conic_margin,
                              vanishing, checks, potential)
    failed = [name for name, c in checks.items() if not c['passed']]
    if failed:
        logger.warning('background %s: failed checks %s', geom.name, failed)
    else:
        logger.info('background %s verified at eta = %g', geom.name, eta)
    return result


def save_background(result, directory):
    """Write u as a field file and the result summary as JSON."""
    os.makedirs(directory, exist_ok=True)
    write_field(result.u, os.path.join(directory, 'u.csv'))
    with open(os.path.join(directory, 'background.json'), 'w') as f:
        json.dump(result.to_dict(), f, sort_keys=True, indent=1)


@dataclass
class VolumeExpansion:
    """S^(1-beta) omega_0^n / omega^n = sum_j a_j S^(j beta) + S^(k+1-beta) F
       with S = |s|^2.
    """
    beta: float
    k: float
    a: List[GridField]
    F: GridField
    a0_formula: GridField
    shell_fit: dict
    identity: dict
    expansion_residual: float

    @property
    def a0_positive(self):
        return bool(np.all(self.a0_formula.values > 0))

    def to_dict(self):
        return {'beta': self.beta, 'k': self.k,
                'a0_min': float(np.min(self.a[0].values)),
                'a0_formula_min': float(np.min(self.a0_formula.values)),
                'a0_positive': self.a0_positive, 'shell_fit': self.shell_fit,
                'identity': self.identity,
                'expansion_residual': self.expansion_residual}


def _mixed(A, B):
    """det(A + B) - det A - det B for 2x2 stacks."""
    return A[..., 0, 0] * B[..., 1, 1] + A[..., 1, 1] * B[..., 0, 0] \
        - 2 * A[..., 0, 1] * B[..., 0, 1]


def _det2(A):
    return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] ** 2


def _volume_terms(geom, potential, beta, points):
    """Pointwise pieces of the volume expansion; u = 0 when `potential` is
       None.
    """
    if potential is None:
        pj = profile_jets(geom, points)
        W = pj.hess_p
        log_det_w = _schur_logdet(W)
        u = np.zeros(len(pj.log_s2))
        k = 0.0
    else:
        gj = potential.evaluate(points)
        pj = gj.profile
        W = gj.hess_phi
        log_det_w = _phi_logdet(gj)
        u = gj.u
        k = max(2 * beta - 1, 0.0)
    s2 = pj.s2
    outer = _outer(pj.d_log_s2)
    y_hat = beta ** 2 * outer + beta * pj.h_log_s2
    e_hat = beta ** 2 * outer
    log_det_omega = _schur_logdet(pj.hess_p)
    det_omega = np.exp(log_det_omega)
    if pj.n == 1:
        a = [s2 * y_hat[:, 0, 0] / pj.hess_p[:, 0, 0]]
        a0_formula = s2 * e_hat[:, 0, 0] / pj.hess_p[:, 0, 0]
    else:
        a = [s2 * _mixed(W, y_hat) / det_omega,
             s2 * _det2(y_hat) / det_omega]
        a0_formula = s2 * _mixed(W, e_hat) / det_omega
    log_rem = (1 - beta) * pj.log_s2 + log_det_w - log_det_omega
    series = sum(aj * s2 ** (j * beta) for j, aj in enumerate(a))
    with np.errstate(divide='ignore', invalid='ignore'):
        total = series + np.exp(log_rem)
        log_ratio = np.log(np.where(total > 0, total, np.nan))
    s2_beta = np.exp(beta * pj.log_s2)
    g0 = W + s2_beta[:, None, None] * y_hat
    log_det_g0 = _schur_logdet(g0)
    direct = (1 - beta) * pj.log_s2 + log_det_g0 - log_det_omega
    return {'profile': pj, 'a': a, 'a0_formula': a0_formula, 'k': k,
            'F': np.exp(log_det_w - log_det_omega - k * pj.log_s2),
            'log_ratio': log_ratio, 'direct': direct, 'g0': g0,
            'log_det_g0': log_det_g0, 'u': u, 's2_beta': s2_beta}


def _check_ratio(terms, domain):
    bad = domain & ~np.isfinite(terms['log_ratio'])
    if np.any(bad):
        where = terms['profile'].points[np.argmax(bad)]
        raise PositivityError('volume ratio is not positive at log-moduli {}'
                              .format(where.tolist()),
                              location=where.tolist())


def _background_for(beta, result):
    if beta <= 0.5:
        return None
    if result is None:
        raise ParameterError('beta = {} > 1/2 needs the glued background'
                             .format(beta))
    return result.potential


def _shell_fit(terms, beta, groups, shells, glued, cap):
    """Match S^(1 - beta) omega_0^n / omega^n to powers of S on the shells
       next to D and compare with the closed-form a_j there.
    """
    pj = terms['profile']
    exponents = [0.0, 1.0]
    if pj.n == 2:
        exponents += [beta, 1 + beta]
    if not glued:
        exponents.append(1 - beta)
    y_all = np.exp(terms['direct'])
    worst = {'a0_error': 0.0, 'a1_error': 0.0 if pj.n == 2 else None,
             'condition': 0.0}
    for g in np.unique(groups[shells]):
        sel = shells & (groups == g)
        s2 = pj.s2[sel]
        if s2.size < 2 * len(exponents):
            raise ConditioningError('only {} shells for {} powers'
                                    .format(s2.size, len(exponents)))
        X = np.stack([s2 ** e for e in exponents], axis=1)
        norms = np.linalg.norm(X, axis=0)
        Xn = X / norms
        cond = float(np.linalg.cond(Xn))
        if not cond <= cap:
            raise ConditioningError('shell matching condition number {:.3g} '
                                    'exceeds {:.3g} at beta = {}'
                                    .format(cond, cap, beta))
        coef = np.linalg.lstsq(Xn, y_all[sel], rcond=None)[0] / norms
        i0 = np.argmin(s2)
        a0 = terms['a'][0][sel][i0]
        worst['a0_error'] = max(worst['a0_error'],
                                abs(coef[0] - a0) / abs(a0))
        if pj.n == 2:
            a1 = terms['a'][1][sel][i0]
            worst['a1_error'] = max(worst['a1_error'],
                                    abs(coef[2] - a1) / abs(a1))
        worst['condition'] = max(worst['condition'], cond)
    worst['exponents'] = exponents
    worst['shells'] = int(np.sum(shells))
    return worst


def sbeta_identity(geom, beta, config=None):
    """Finite-difference check of

           i ddbar |s|^2beta = -beta |s|^2beta Theta
                               + beta^2 |s|^(2beta-4) i d|s|^2 ^ dbar|s|^2.
    """
    config = config or BackgroundConfig()
    grid = geom.grid(config)
    points = log_moduli(grid)
    log_s2, d_log, _ = jets(geom.log_norm2, points)
    sb = np.exp(beta * log_s2)
    expected = sb[:, None, None] * (-beta * geom.curvature(points)
                                    + beta ** 2 * _outer(d_log))
    n = geom.n
    out = _fd_check(sb.reshape(grid.shape),
                    expected.reshape(grid.shape + (n, n)), grid, config,
                    geom.in_domain(log_s2).reshape(grid.shape))
    out['points'] = int(np.sum(_interior(grid)
                               & geom.in_domain(log_s2).reshape(grid.shape)))
    return out


def volume_expansion_coeffs(geom, result, beta, config=None):
    """Split the volume of omega_0 = omega + i ddbar(u + |s|^2beta) into the
       powers |s|^(2 j beta) and the remainder F.

       For beta <= 1/2 the background is u = 0, k = 0 and F = 1.
    """
    if not 0 < beta < 1:
        raise ParameterError('beta must lie in (0, 1), got {}'.format(beta))
    config = config or BackgroundConfig()
    potential = _background_for(beta, result)
    grid = geom.grid(config)
    terms = _volume_terms(geom, potential, beta, log_moduli(grid))
    pj = terms['profile']
    domain = geom.in_domain(pj.log_s2)
    _check_ratio(terms, domain)
    if potential is None:
        shells = domain & (pj.s2 <= _SHELL_MAX)
    else:
        shells = domain & (pj.s2 <= result.radii[1])
    groups = np.zeros(pj.s2.shape, dtype=int) if geom.n == 1 \
        else np.repeat(np.arange(grid.shape[0]), grid.shape[1])
    shell_fit = _shell_fit(terms, beta, groups, shells, potential is not None,
                           config.condition_cap)
    residual = float(np.max(np.abs(terms['direct'] - terms['log_ratio'])
                            [domain]))
    def on_grid(arr):
        return GridField(arr.reshape(grid.shape), grid, beta=beta)

    out = VolumeExpansion(beta, terms['k'], [on_grid(a) for a in terms['a']],
                          on_grid(terms['F']), on_grid(terms['a0_formula']),
                          shell_fit, sbeta_identity(geom, beta, config),
                          residual)
    logger.info('volume expansion at beta = %.3f: a0 in [%.4g, %.4g], shell '
                'condition %.3g', beta, float(np.min(out.a[0].values)),
                float(np.max(out.a[0].values)), shell_fit['condition'])
    return out


def log_volume_ratio(geom, result, beta, grid=None, config=None):
    """log(|s|^(2 - 2 beta) omega_0^n / omega^n) on a radial or polar grid."""
    if not 0 < beta < 1:
        raise ParameterError('beta must lie in (0, 1), got {}'.format(beta))
    grid = grid or geom.grid(config)
    terms = _volume_terms(geom, _background_for(beta, result), beta,
                          log_moduli(grid))
    _check_ratio(terms, np.ones(terms['log_ratio'].shape, dtype=bool))
    return _on_grid(terms['log_ratio'], grid, beta)


def _on_grid(values, grid, beta):
    if grid.kind in ('polar', 'product'):
        values = np.repeat(values.reshape(grid.shape[:-1] + (1,)),
                           grid.shape[-1], axis=-1)
    return GridField(values.reshape(grid.shape), grid, beta=beta)


def omega0_potential(geom, result, beta, grid):
    """Local potential of omega_0 = omega + i ddbar(u + |s|^2beta) on a
       polar or product z-grid, split as (remainder, c^2beta).

       The potential is remainder + c^2beta |z_n|^2beta, and the second
       term pulls back to c^2beta |w_n|^2 in every chart. `result` may be
       None, which takes u = 0.
    """
    if not 0 < beta < 1:
        raise ParameterError('beta must lie in (0, 1), got {}'.format(beta))
    if grid.kind not in ('polar', 'product'):
        raise StencilError('omega_0 is sampled on polar or product grids')
    points = log_moduli(grid)
    p, _, _ = jets(geom.potential, points)
    if result is None:
        u = np.zeros(len(points))
    else:
        u = result.potential.evaluate(points).u
    flat = geom.c2 ** beta
    weight = geom.log_fiber_weight(points)
    # |s|^2beta - c^2beta |z_n|^2beta, exactly zero where the weight is
    extra = flat * np.exp(2 * beta * points[:, -1]) * np.expm1(beta * weight)
    return _on_grid(p + u + extra, grid, beta), flat


def ricci_potential(geom, result, beta, mode='lambda', lam=0.0, f0=None,
                    f_omega=None, grid=None, config=None):
    """F^lambda = f0 - lambda (u + |s|^2beta) - log ratio, or
       F^Omega = f^Omega - log ratio, where f0 and f^Omega map (N, n)
       log-moduli to values.
    """
    if not 0 < beta < 1:
        raise ParameterError('beta must lie in (0, 1), got {}'.format(beta))
    grid = grid or geom.grid(config)
    points = log_moduli(grid)
    terms = _volume_terms(geom, _background_for(beta, result), beta, points)
    _check_ratio(terms, np.ones(terms['log_ratio'].shape, dtype=bool))
    if mode == 'omega_class':
        if f_omega is None:
            raise ParameterError('omega_class mode needs f_omega')
        values = f_omega(points) - terms['log_ratio']
    elif mode == 'lambda':
        base = np.zeros(len(points)) if f0 is None else f0(points)
        values = base - lam * (terms['u'] + terms['s2_beta']) \
            - terms['log_ratio']
    else:
        raise ParameterError('unknown Ricci potential mode {!r}'.format(mode))
    return _on_grid(values, grid, beta)


def ricci_identity_residual(geom, result, beta, lam=0.0, f0=None,
                            config=None):
    """Residual of Ric(omega_0) - lambda omega_0 - i ddbar F^lambda = 0 off D,
       with Ric(omega_0) = -i ddbar log det g_0 by finite differences.
    """
    config = config or BackgroundConfig()
    grid = geom.grid(config)
    points = log_moduli(grid)
    terms = _volume_terms(geom, _background_for(beta, result), beta, points)
    F = ricci_potential(geom, result, beta, 'lambda', lam, f0, grid=grid)
    n = geom.n
    q = (-terms['log_det_g0']).reshape(grid.shape) - F.values
    expected = lam * terms['g0'].reshape(grid.shape + (n, n))
    domain = geom.in_domain(terms['profile'].log_s2).reshape(grid.shape)
    return _fd_check(q, expected, grid, config, domain)


def ladder_membership(sampler, params, rho_min=1e-4, n_rho=64, n_theta=16,
                      depth=3, config=None, seed=0):
    """dw_membership of `sampler(grid)` along a polar refinement ladder."""
    levels = [sampler(g) for g in polar_ladder(n_rho, n_theta, rho_min,
                                               depth)]
    return dw_membership(levels, params, config, seed)
