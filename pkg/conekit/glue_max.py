"""Regularized maximum M_eta of two real variables.

    M_eta(t1, t2) = integral of max(t1 + h1, t2 + h2) p1(h1) p2(h2)
    p1(h1) = eta theta(eta h1),  p2(h2) = theta(h2 / eta) / eta

theta is an even bump supported in [-1, 1] with unit mass. The h1 integral
is done in closed form through the distribution function Phi and first
moment Psi of theta; the h2 integral uses Gauss-Legendre nodes.
M_eta(t) = t1 when t1 >= t2 + eta + 1/eta and M_eta(t) = t2 when
t2 >= t1 + eta + 1/eta. Since only the law of h1 - h2 matters, M_eta is
symmetric in (t1, t2) and M_eta = M_1/eta.
"""
import logging

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from conekit.config import GlueConfig
from conekit.exceptions import ParameterError, QuadratureError

logger = logging.getLogger(__name__)


def bump(x):
    """exp(-1/(1 - x^2)) on (-1, 1), zero outside."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape)
    inside = np.abs(x) < 1
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


class MollifierSpec(object):
    """The bump theta, its tabulated Phi and Psi, and the outer nodes."""

    def __init__(self, eta=1.0, nodes=64, profile=None, table_panels=2048,
                 chunk=256):
        if not eta > 0:
            raise ParameterError('eta must be positive, got {}'.format(eta))
        if nodes < 2:
            raise ParameterError('need at least two quadrature nodes')
        self.eta = float(eta)
        self.nodes = int(nodes)
        self.chunk = int(chunk)
        self.profile = bump if profile is None else profile
        self._tabulate(table_panels)
        x, w = np.polynomial.legendre.leggauss(self.nodes)
        x = 0.5 * (x - x[::-1])
        w = 0.5 * (w + w[::-1])
        weights = w * self.profile(x)
        self.outer_nodes = x
        self.outer_weights = weights / np.sum(weights)

    @classmethod
    def from_config(cls, config=None, eta=None):
        config = config or GlueConfig()
        return cls(config.eta if eta is None else eta, config.nodes,
                   chunk=config.chunk)

    def _tabulate(self, panels):
        edges = np.linspace(-1, 1, panels + 1)
        g, gw = np.polynomial.legendre.leggauss(8)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        y = mid[:, None] + half[:, None] * g[None, :]
        theta = self.profile(y)
        mass = np.sum(half[:, None] * gw * theta, axis=1)
        moment = np.sum(half[:, None] * gw * y * theta, axis=1)
        self.mass = float(np.sum(mass))
        if not self.mass > 0:
            raise ParameterError('profile has no mass on [-1, 1]')
        if not np.allclose(self.profile(edges), self.profile(-edges),
                           atol=1e-14 * np.max(self.profile(edges)) + 1e-300):
            raise ParameterError('profile must be even')
        phi = np.concatenate([[0.0], np.cumsum(mass)]) / self.mass
        phi[-1] = 1.0
        psi = np.concatenate([[0.0], np.cumsum(moment)]) / self.mass
        psi = 0.5 * (psi + psi[::-1])
        psi[0] = psi[-1] = 0.0
        density = self.profile(edges) / self.mass
        self._phi = CubicHermiteSpline(edges, phi, density)
        self._psi = CubicHermiteSpline(edges, psi, edges * density)

    def density(self, x):
        """Normalized theta."""
        return self.profile(x) / self.mass

    def cdf(self, x):
        """Phi(x) = integral of theta over [-1, x]."""
        x = np.asarray(x, dtype=np.float64)
        out = self._phi(np.clip(x, -1, 1))
        out = np.where(x <= -1, 0.0, np.where(x >= 1, 1.0, out))
        return np.clip(out, 0.0, 1.0)

    def first_moment(self, x):
        """Psi(x) = integral of y theta(y) over [-1, x]."""
        x = np.asarray(x, dtype=np.float64)
        out = self._psi(np.clip(x, -1, 1))
        return np.where(np.abs(x) >= 1, 0.0, out)

    @property
    def locality_gap(self):
        return self.eta + 1 / self.eta

    def summary(self):
        x = self.outer_nodes
        return {'eta': self.eta, 'nodes': self.nodes, 'mass': self.mass,
                'first_moment': float(np.sum(self.outer_weights * x))}


def _evaluate(t1, t2, spec):
    """Value, d/dt2 and second derivative on flat arrays of one chunk."""
    # only the law of h1 - h2 enters, so M_eta = M_1/eta; integrate the
    # narrower mollifier numerically
    eta = min(spec.eta, 1 / spec.eta)
    d = t2 - t1
    c = d[:, None] + eta * spec.outer_nodes[None, :]
    x = eta * c
    phi = spec.cdf(x)
    psi = spec.first_moment(x)
    w = spec.outer_weights[None, :]
    above = d >= 0
    # M = t1 + E[c Phi - Psi/eta] = t2 - E[c (1 - Phi) + Psi/eta]
    from_t1 = t1 + np.sum(w * (c * phi - psi / eta), axis=1)
    from_t2 = t2 - np.sum(w * (c * (1 - phi) + psi / eta), axis=1)
    value = np.where(above, from_t2, from_t1)
    grad2 = np.sum(w * phi, axis=1)
    hess = np.sum(w * eta * spec.density(x), axis=1)
    return value, grad2, hess


def m_eta_jet(t1, t2, spec=None):
    """(M, (dM/dt1, dM/dt2), d2M/dt2^2) for broadcastable arrays.

       The Hessian is [[h, -h], [-h, h]] with h the last returned value.
    """
    spec = spec or MollifierSpec()
    t1, t2 = np.broadcast_arrays(np.asarray(t1, dtype=np.float64),
                                 np.asarray(t2, dtype=np.float64))
    shape = t1.shape
    a = t1.ravel()
    b = t2.ravel()
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise QuadratureError('M_eta needs finite arguments')
    value = np.empty(a.shape)
    grad2 = np.empty(a.shape)
    hess = np.empty(a.shape)
    for start in range(0, a.size, spec.chunk):
        sl = slice(start, start + spec.chunk)
        value[sl], grad2[sl], hess[sl] = _evaluate(a[sl], b[sl], spec)
    if not np.all(np.isfinite(value)):
        raise QuadratureError('non-finite M_eta value')
    grad1 = 1.0 - grad2
    return (value.reshape(shape), (grad1.reshape(shape), grad2.reshape(shape)),
            hess.reshape(shape))


def _scalar(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def m_eta(t1, t2, spec=None):
    value, _, _ = m_eta_jet(t1, t2, spec)
    return _scalar(value)


def m_eta_grad(t1, t2, spec=None):
    _, (g1, g2), _ = m_eta_jet(t1, t2, spec)
    return _scalar(g1), _scalar(g2)


def m_eta_hessian(t1, t2, spec=None):
    """2x2 Hessian matrices stacked on two trailing axes."""
    _, _, h = m_eta_jet(t1, t2, spec)
    h = np.asarray(h)
    return np.stack([np.stack([h, -h], -1), np.stack([-h, h], -1)], -2)


def convexity_check(spec=None, sample_budget=10000, seed=0, tolerance=1e-10):
    """Sample random triples (u, v, lambda) and test convexity and the
    envelope max(t) <= M(t) <= max(t) + eta + 1/eta.
    """
    spec = spec or MollifierSpec()
    rng = np.random.default_rng(seed)
    scale = 3 * spec.locality_gap
    u = rng.uniform(-scale, scale, (sample_budget, 2))
    v = rng.uniform(-scale, scale, (sample_budget, 2))
    lam = rng.uniform(0, 1, sample_budget)
    mix = lam[:, None] * u + (1 - lam[:, None]) * v
    mu = m_eta(u[:, 0], u[:, 1], spec)
    mv = m_eta(v[:, 0], v[:, 1], spec)
    mm = m_eta(mix[:, 0], mix[:, 1], spec)
    slack = tolerance * (1 + np.abs(mu) + np.abs(mv))
    gap = mm - (lam * mu + (1 - lam) * mv)
    top = np.max(u, axis=1)
    below = mu < top - tolerance * (1 + np.abs(top))
    above = mu > top + spec.locality_gap + tolerance * (1 + np.abs(top))
    report = {'samples': int(sample_budget),
              'convexity_violations': int(np.sum(gap > slack)),
              'worst_convexity_gap': float(np.max(gap)),
              'below_max_violations': int(np.sum(below)),
              'envelope_violations': int(np.sum(above))}
    report['passed'] = (report['convexity_violations'] == 0
                        and report['below_max_violations'] == 0
                        and report['envelope_violations'] == 0)
    logger.info('convexity check over %d triples: %s', sample_budget,
                'passed' if report['passed'] else 'FAILED')
    return report


def property_suite(spec=None, n_points=1000, seed=0, fd_step=1e-4,
                   tolerance=1e-10):
    """Locality, gradient box, finite-difference gradient, a 10x-node
    quadrature oracle, swap symmetry and convexity in one report.
    """
    spec = spec or MollifierSpec()
    rng = np.random.default_rng(seed)
    gap = spec.locality_gap
    t2 = rng.uniform(-5, 5, n_points)
    extra = rng.uniform(0, 3, n_points)
    t1 = t2 + gap + extra
    locality = max(float(np.max(np.abs(m_eta(t1, t2, spec) - t1))),
                   float(np.max(np.abs(m_eta(t2, t1, spec) - t1))))
    lg1, lg2 = m_eta_grad(t1, t2, spec)
    locality_grad = float(np.max(np.abs(lg1 - 1) + np.abs(lg2)))

    a = rng.uniform(-2 * gap, 2 * gap, n_points)
    b = rng.uniform(-2 * gap, 2 * gap, n_points)
    g1, g2 = m_eta_grad(a, b, spec)
    box = int(np.sum((g1 < -tolerance) | (g1 > 1 + tolerance)
                     | (g2 < -tolerance) | (g2 > 1 + tolerance)))
    sum_error = float(np.max(np.abs(g1 + g2 - 1)))
    fd1 = (m_eta(a + fd_step, b, spec) - m_eta(a - fd_step, b, spec)) \
        / (2 * fd_step)
    fd2 = (m_eta(a, b + fd_step, spec) - m_eta(a, b - fd_step, spec)) \
        / (2 * fd_step)
    fd_error = float(max(np.max(np.abs(fd1 - g1)), np.max(np.abs(fd2 - g2))))

    fine = MollifierSpec(spec.eta, 10 * spec.nodes, spec.profile,
                         chunk=spec.chunk)
    oracle = float(np.max(np.abs(m_eta(a, b, spec) - m_eta(a, b, fine))))
    swap = float(np.max(np.abs(m_eta(a, b, spec) - m_eta(b, a, spec))))
    origin = m_eta(0.0, 0.0, spec)

    report = {'eta': spec.eta, 'points': int(n_points),
              'locality_error': locality,
              'locality_gradient_error': locality_grad,
              'gradient_box_violations': box,
              'gradient_sum_error': sum_error,
              'finite_difference_error': fd_error,
              'oracle_difference': oracle,
              'swap_difference': swap,
              'value_at_origin': origin,
              'convexity': convexity_check(spec, 10 * n_points, seed + 1,
                                           tolerance)}
    report['passed'] = (locality <= tolerance and box == 0
                        and sum_error <= 1e-8 and fd_error <= 1e-6
                        and 0 < origin <= 1
                        and report['convexity']['passed'])
    return report
