"""Poisson equation Delta_beta v = f on the punctured unit disc.

With sigma = beta log(rho) the equation multiplied by 4 rho^(2 beta) reads

    v_sigma,sigma + beta^-2 v_theta,theta = 4 exp(2 sigma) f

so each angular Fourier mode m solves

    v_m'' - mu^2 v_m = 4 exp(2 sigma) f_m,   mu = |m| / beta

on sigma in [beta log(rho_min), 0]. Radial profiles use second-order
differences and a banded solve. At the outer circle the data are
Dirichlet; at the inner circle the bounded branch exp(mu sigma) is
selected by the Robin condition v' - mu v = g0 / (lambda + mu), where the
source behaves like g0 exp(lambda sigma).

On a product grid the tangential variables enter through
R^2 (v_xx + v_yy) with R = exp(sigma); that term is handled by a damped
defect correction preconditioned with a sine transform.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.fft import dstn, idstn
from scipy.linalg import solve_banded
from scipy.optimize import minimize_scalar

from conekit.cone_charts import (ConeParams, charts, conic_laplacian_apply,
                                 pullback)
from conekit.config import PoissonConfig
from conekit.exceptions import (ConditioningError, DichotomyError,
                                ParameterError, SolverError, StencilError)
from conekit.grid import BoxGrid, GridField, ProductGrid, polar_grid, sample
from conekit.stencils import Wirtinger, extrapolate_to_axis, laplacian_odd
from conekit.weighted_holder import holder_seminorm

logger = logging.getLogger(__name__)

# range of the local source exponent used by the inner Robin condition
_LAMBDA_RANGE = (0.05, 50.0)
_LAMBDA_FALLBACK = 2.0
# stencil rows skipped next to the inner circle
_EDGE_ROWS = 2
# solver output mixes nearby powers along a ray
_DERIVATIVE_PHASE_TOL = 1e-2


@dataclass
class RadialModeSolution:
    """Radial profile of one angular Fourier mode, boundary row included."""
    m: int
    sigma: np.ndarray
    profile: np.ndarray
    boundary: complex
    residual: float


@dataclass
class ExpansionResult:
    """v = a |z|^(2 beta) + b z + V near z = 0."""
    a: complex
    b: complex
    V: GridField
    fitted_decay_exponent: float
    fitted_constant: float
    b_branch: bool = False
    alpha_prime: float = 0.0
    beta: float = 0.5

    @property
    def threshold_exponent(self):
        """2 / (2 - 2 beta - alpha' beta)."""
        return 2 / (2 - 2 * self.beta - self.alpha_prime * self.beta)

    def to_dict(self):
        return {'a': _jsonable(self.a), 'b': _jsonable(self.b),
                'b_branch': self.b_branch,
                'fitted_decay_exponent': self.fitted_decay_exponent,
                'fitted_constant': self.fitted_constant,
                'threshold_exponent': self.threshold_exponent}


def _jsonable(x):
    x = complex(x)
    if abs(x.imag) <= 1e-14 * max(1.0, abs(x)):
        return x.real
    return [x.real, x.imag]


def disc_grid(n_sigma, n_theta=16, rho_min=1e-6):
    """Periodic log-polar grid on rho_min <= |z| <= 1."""
    return polar_grid(n_sigma, n_theta, rho_min, 1.0)


def tangential_box(n):
    """Interior nodes of [0, 1]^2 with walls one step outside."""
    x = np.arange(1, n + 1) / (n + 1)
    return BoxGrid([x, x])


def _transverse(grid):
    if grid.kind == 'polar':
        return grid
    if grid.kind == 'product':
        return grid.transverse
    raise StencilError('Poisson solves need a polar transverse axis, got {}'
                       .format(grid.kind))


def _check_disc(grid):
    transverse = _transverse(grid)
    if not transverse.periodic[1]:
        raise StencilError('the angle axis must be periodic')
    if abs(transverse.s[-1]) > 1e-12:
        raise StencilError('the outer radius must be 1, got {}'
                           .format(np.exp(transverse.s[-1])))
    if transverse.shape[0] < 8:
        raise StencilError('need at least 8 radii, got {}'
                           .format(transverse.shape[0]))
    return transverse


def _check_growth(values, ds, max_growth, radial_axis=0):
    """Reject sources growing like rho^-max_growth or faster at the inner
    circle.
    """
    moved = np.moveaxis(np.abs(values), radial_axis, 0)
    inner = np.max(moved[0])
    nxt = np.max(moved[1])
    if inner == 0 or nxt == 0:
        return
    exponent = np.log(nxt / inner) / ds
    if exponent <= -max_growth:
        raise SolverError('source grows like rho^{:.3f} near z = 0'
                          .format(exponent))


def _boundary_values(boundary, shape):
    values = boundary.values if isinstance(boundary, GridField) \
        else np.asarray(boundary)
    values = np.asarray(values)
    if values.size != int(np.prod(shape)):
        raise StencilError('boundary data of shape {} do not fit {}'
                           .format(values.shape, shape))
    return values.reshape(shape)


def _source_exponent(g, h):
    """Local exponent lambda of g ~ g0 exp(lambda sigma) at the inner rows."""
    g0 = np.abs(g[0])
    g1 = np.abs(g[1])
    with np.errstate(divide='ignore', invalid='ignore'):
        lam = np.log(g1 / g0) / h
    ok = np.isfinite(lam) & (g0 > 0) & (g1 > 0)
    return np.where(ok, np.clip(lam, *_LAMBDA_RANGE), _LAMBDA_FALLBACK)


def _robin_data(g, h, mu):
    lam = _source_exponent(g, h)
    g0 = g[0]
    return np.where(g0 == 0, 0.0, g0 / (lam + mu))


def _radial_banded(h, n_unknown, mu, extra=None):
    """Banded storage of the radial operator on the unknown rows.

       Row 0 carries the ghost point of the Robin condition; the last
       unknown row couples to the Dirichlet value, which moves to the
       right-hand side.
    """
    diag = np.full(n_unknown, -2 / h ** 2 - mu ** 2)
    if extra is not None:
        diag = diag - extra
    diag[0] -= 2 * mu / h
    ab = np.zeros((3, n_unknown))
    ab[0, 1:] = 1 / h ** 2
    ab[0, 1] = 2 / h ** 2
    ab[1] = diag
    ab[2, :-1] = 1 / h ** 2
    return ab


def _radial_apply(u, h, mu):
    """The operator of `_radial_banded` (without extra) on axis 0 of u;
    mu broadcasts against u[0].
    """
    out = np.empty_like(u)
    out[0] = (-2 / h ** 2 - 2 * mu / h - mu ** 2) * u[0] + 2 / h ** 2 * u[1]
    out[1:-1] = (u[:-2] - 2 * u[1:-1] + u[2:]) / h ** 2 - mu ** 2 * u[1:-1]
    out[-1] = (u[-2] - 2 * u[-1]) / h ** 2 - mu ** 2 * u[-1]
    return out


def _mode_numbers(n_theta):
    return np.rint(np.fft.fftfreq(n_theta, 1.0 / n_theta)).astype(int)


def solve_modes(f, beta, boundary, config=None):
    """Solve every angular mode of the disc problem.

       `f` lives on a periodic polar grid with outer radius 1 and
       `boundary` holds n_theta samples on the unit circle.
    """
    config = config or PoissonConfig()
    if not 0 < beta < 1:
        raise ParameterError('beta must lie in (0, 1), got {}'.format(beta))
    grid = _check_disc(f.grid)
    if f.grid.kind != 'polar':
        raise StencilError('solve_modes works on the disc; use '
                           'solve_poisson for product grids')
    _check_growth(f.values, grid.ds, config.max_growth)
    n_s, n_t = grid.shape
    sigma = beta * grid.s
    h = beta * grid.ds
    g = 4 * np.exp(2 * sigma)[:, None] * f.values
    g_hat = np.fft.fft(g, axis=1) / n_t
    b_hat = np.fft.fft(_boundary_values(boundary, (n_t,))) / n_t
    solutions = []
    for k, m in enumerate(_mode_numbers(n_t)):
        mu = abs(m) / beta
        col = g_hat[:, k]
        rhs = col[:-1].astype(np.complex128)
        rhs[0] += 2 * _robin_data(col, h, mu) / h
        rhs[-1] -= b_hat[k] / h ** 2
        ab = _radial_banded(h, n_s - 1, mu)
        u = solve_banded((1, 1), ab, rhs)
        scale = np.max(np.abs(rhs)) + np.max(np.abs(ab)) * np.max(np.abs(u))
        residual = float(np.max(np.abs(_radial_apply(u, h, mu) - rhs))
                         / max(scale, 1e-300))
        if not np.all(np.isfinite(u)) or residual > config.tolerance:
            raise SolverError('mode {} did not solve: relative residual {}'
                              .format(m, residual))
        solutions.append(RadialModeSolution(int(m), sigma,
                                            np.append(u, b_hat[k]),
                                            complex(b_hat[k]), residual))
    return solutions


def assemble_modes(solutions, grid, real=False):
    """Sum of v_m exp(i m theta) on `grid`."""
    n_t = grid.shape[1]
    hat = np.stack([s.profile for s in solutions], axis=1)
    values = np.fft.ifft(hat * n_t, axis=1)
    return np.real(values) if real else values


def solve_poisson(f, beta, boundary, config=None):
    """Discrete solution of Delta_beta v = f with Dirichlet data at |z| = 1.

       `f` is a GridField on a periodic polar grid (the disc) or on a
       product grid whose tangential factor is `tangential_box(n)` (zero
       data on the tangential walls).
    """
    config = config or PoissonConfig()
    real = not (np.iscomplexobj(f.values) or np.iscomplexobj(
        boundary.values if isinstance(boundary, GridField) else boundary))
    if f.grid.kind == 'product':
        return _solve_product(f, beta, boundary, config, real)
    solutions = solve_modes(f, beta, boundary, config)
    worst = max(s.residual for s in solutions)
    logger.debug('disc solve on %s: worst mode residual %.2e', f.grid.shape,
                 worst)
    return GridField(assemble_modes(solutions, f.grid, real), f.grid, 'z',
                     beta)


def _tangential_spacing(tangential):
    if len(tangential.axes) != 2:
        raise StencilError('product solves support one tangential variable')
    x, y = tangential.axes
    h = tangential.spacing[0]
    if not (np.isclose(tangential.spacing[1], h)
            and np.isclose(x[0], h) and np.isclose(x[-1], 1 - h)
            and np.isclose(y[0], h) and np.isclose(y[-1], 1 - h)):
        raise StencilError('tangential box must hold the interior nodes of '
                           '[0, 1]^2')
    return h


def _groups(kappa, modes):
    """Index sets sharing one radial matrix: equal kappa and equal |m|."""
    keys, inverse = np.unique(np.round(kappa, 9), return_inverse=True)
    inverse = inverse.reshape(kappa.shape)
    groups = []
    for key_index, key in enumerate(keys):
        ij = np.nonzero(inverse == key_index)
        for m_abs in np.unique(np.abs(modes)):
            cols = np.nonzero(np.abs(modes) == m_abs)[0]
            groups.append((key, m_abs, ij, cols))
    return groups


def _solve_product(f, beta, boundary, config, real):
    grid = f.grid
    transverse = _check_disc(grid)
    h_t = _tangential_spacing(grid.tangential)
    n_x, n_y, n_s, n_t = grid.shape
    _check_growth(f.values, transverse.ds, config.max_growth, radial_axis=2)
    sigma = beta * transverse.s
    h = beta * transverse.ds
    r2 = np.exp(2 * sigma)
    modes = _mode_numbers(n_t)
    mu = np.abs(modes) / beta

    # layout (sigma, mode, x, y)
    source = np.moveaxis(4 * r2[None, None, :, None] * f.values,
                         (2, 3), (0, 1))
    g = np.fft.fft(source, axis=1) / n_t
    edge = np.moveaxis(_boundary_values(boundary, (n_x, n_y, n_t)), 2, 0)
    b_hat = np.fft.fft(edge, axis=0) / n_t
    rhs = g[:-1].astype(np.complex128)
    rhs[0] += 2 * _robin_data(g, h, mu[:, None, None]) / h
    rhs[-1] -= b_hat / h ** 2

    r2u = r2[:-1, None, None, None]
    mu_b = mu[:, None, None]

    def operator(u):
        return _radial_apply(u, h, mu_b) + r2u * laplacian_odd(u, h_t)

    p = np.arange(1, n_x + 1)
    q = np.arange(1, n_y + 1)
    kappa = (4 / h_t ** 2) * (np.sin(p * np.pi * h_t / 2)[:, None] ** 2
                              + np.sin(q * np.pi * h_t / 2)[None, :] ** 2)
    groups = _groups(kappa, modes)
    factors = {}
    for key, m_abs, _, _ in groups:
        factors[(key, m_abs)] = _radial_banded(h, n_s - 1, m_abs / beta,
                                               r2[:-1] * key)

    def precondition(r):
        r_hat = dstn(r, type=1, axes=(2, 3))
        out = np.empty_like(r_hat)
        for key, m_abs, (ii, jj), cols in groups:
            index = (slice(None), cols[:, None], ii[None, :], jj[None, :])
            block = r_hat[index]
            sol = solve_banded((1, 1), factors[(key, m_abs)],
                               block.reshape(block.shape[0], -1))
            out[index] = sol.reshape(block.shape)
        return idstn(out, type=1, axes=(2, 3))

    norm = max(float(np.max(np.abs(rhs))), 1e-300)
    u = np.zeros_like(rhs)
    relative = np.inf
    for iteration in range(config.max_iter):
        defect = rhs - operator(u)
        relative = float(np.max(np.abs(defect))) / norm
        if relative <= config.tolerance:
            break
        u = u + config.damping * precondition(defect)
    else:
        raise SolverError('defect correction stalled at relative residual '
                          '{:.3e} after {} iterations'
                          .format(relative, config.max_iter))
    logger.debug('product solve converged in %d iterations (%.2e)',
                 iteration, relative)
    full = np.concatenate([u, b_hat[None]], axis=0)
    values = np.fft.ifft(full * n_t, axis=1)
    values = np.moveaxis(values, (0, 1), (2, 3))
    if real:
        values = np.real(values)
    return GridField(values, grid, 'z', beta)


def discrete_residual(v, f, beta):
    """max |Delta_beta v - f| with the fourth-order stencils, away from the
    inner edge rows.
    """
    lap = conic_laplacian_apply(v, beta).values
    axis = 0 if v.grid.kind == 'polar' else v.grid.n_tangential_axes
    sl = [slice(None)] * lap.ndim
    sl[axis] = slice(_EDGE_ROWS, -_EDGE_ROWS)
    if v.grid.kind == 'product':
        sl[0] = slice(_EDGE_ROWS, -_EDGE_ROWS)
        sl[1] = slice(_EDGE_ROWS, -_EDGE_ROWS)
    sl = tuple(sl)
    return float(np.max(np.abs(lap[sl] - f.values[sl])))


def equivariance_residual(v, f, beta, margin=2):
    """Pull v and f back to the first flattening chart and return the
    largest |d2/dw dw-bar (psi^* v) - psi^* f| on the trimmed w-grid.
    """
    chart = charts(beta)[0]
    v_w = pullback(v, chart)
    f_w = pullback(f, chart)
    lap = Wirtinger(v_w.grid).ddbar(v_w.values, 0, 0)
    _, inner = v_w.grid.trim(margin)
    return float(np.max(np.abs(lap[inner] - f_w.values[inner])))


def manufactured_cases(beta):
    """Closed-form disc problems: name -> (f, boundary, exact) callables
    of z.
    """
    return {
        'model_potential': (lambda z: np.ones(np.shape(z)),
                            lambda z: np.abs(z) ** (2 * beta),
                            lambda z: np.abs(z) ** (2 * beta)),
        'harmonic': (lambda z: np.zeros(np.shape(z)),
                     np.real,
                     np.real),
        'smooth_square': (lambda z: np.abs(z) ** (2 - 2 * beta) / beta ** 2,
                          lambda z: np.abs(z) ** 2,
                          lambda z: np.abs(z) ** 2),
    }


def solve_case(case, beta, n_sigma, config=None):
    """Solve one manufactured case; returns (v, exact) fields."""
    config = config or PoissonConfig()
    f_func, g_func, exact_func = manufactured_cases(beta)[case]
    grid = disc_grid(n_sigma, config.n_theta, config.rho_min)
    f = sample(f_func, grid, beta=beta)
    theta = grid.theta
    boundary = g_func(np.exp(1j * theta))
    v = solve_poisson(f, beta, boundary, config)
    return v, sample(exact_func, grid, beta=beta)


def convergence_orders(errors, n_sigmas):
    """Observed orders log(e_i / e_i+1) / log(h_i / h_i+1)."""
    steps = 1.0 / (np.asarray(n_sigmas, dtype=float) - 1)
    errors = np.asarray(errors, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        orders = np.log(errors[:-1] / errors[1:]) \
            / np.log(steps[:-1] / steps[1:])
    return orders.tolist()


# ---------------------------------------------------------------------------
# expansion near z = 0

def unfolded_rhs(f, beta):
    """f_tilde samples at the grid points: beta^2 Delta_beta v."""
    return f.with_values(beta ** 2 * np.asarray(f.values))


def _axis_limit(values, radial_axis=0, skip=0, settled=1e-9, phase_tol=1e-6):
    """Per-ray limit at rho = 0 averaged over angles.

       Rays whose three samples agree to `settled` (relative) are taken as
       converged and keep their first sample.
    """
    moved = np.moveaxis(np.asarray(values), radial_axis, 0)[skip:]
    limit, _, _ = extrapolate_to_axis(moved, 0, phase_tol)
    spread = np.max(np.abs(moved[1:3] - moved[0]), axis=0)
    converged = spread <= settled * np.maximum(1.0, np.abs(moved[0]))
    limit = np.where(converged, moved[0], limit)
    if np.any(~converged):
        _, _, ok = extrapolate_to_axis(moved[:, ~converged], 0, phase_tol)
    else:
        ok = True
    if not ok:
        raise StencilError('extrapolation to z = 0 is not well posed')
    return np.mean(limit, axis=-1), limit


def _maybe_real(x, like):
    return np.real(x) if not np.iscomplexobj(like) else x


def _check_dichotomy(params, alpha_prime):
    if not 0 < alpha_prime < params.alpha:
        raise ParameterError('need 0 < alpha\' < alpha = {}, got {}'
                             .format(params.alpha, alpha_prime))
    beta = params.beta
    gap = alpha_prime * beta - (1 - 2 * beta)
    if abs(gap) <= 1e-12:
        raise DichotomyError('alpha\' beta = 1 - 2 beta for alpha\' = {}, '
                             'beta = {}; perturb alpha\''
                             .format(alpha_prime, beta))
    return gap > 0


def cone_residual(f_tilde, beta):
    """h = rho^(2 beta - 2) (f_tilde - f_tilde(0)) on a disc grid."""
    grid = f_tilde.grid
    if grid.kind != 'polar':
        raise StencilError('cone_residual works on a polar grid')
    center, _ = _axis_limit(f_tilde.values)
    center = _maybe_real(center, f_tilde.values)
    rho = grid.rho[:, None]
    h = rho ** (2 * beta - 2) * (f_tilde.values - center)
    return GridField(h, grid, f_tilde.chart, beta)


def _ladder_rows(grid, ladder, margin=_EDGE_ROWS):
    """Nearest interior rows to rho_j = 2^-j."""
    s = grid.s
    rows = []
    for j in ladder:
        target = -j * np.log(2)
        if target < s[margin] or target > s[-1 - margin]:
            continue
        rows.append(int(np.argmin(np.abs(s - target))))
    rows = sorted(set(rows))
    if len(rows) < 3:
        raise StencilError('radius ladder holds only {} usable radii on a '
                           'grid reaching rho = {:.2e}'
                           .format(len(rows), np.exp(s[0])))
    return rows


def _deep_row(grid, config):
    """Row nearest the smallest ladder radius, where derivative data are
    extrapolated to z = 0.
    """
    target = -max(config.ladder) * np.log(2)
    row = int(np.argmin(np.abs(grid.s - target)))
    return min(max(row, _EDGE_ROWS), grid.shape[0] - 3 - _EDGE_ROWS)


def _loglog_fit(rho, q, floor=1e-14):
    """Fit q = C rho^slope; returns (C, slope) or (0, None) when q stays
    below `floor`.
    """
    q = np.asarray(q, dtype=float)
    if np.max(q) <= floor:
        return 0.0, None
    keep = q > 0
    if np.sum(keep) < 2:
        raise ConditioningError('too few positive samples for a log-log fit')
    design = np.stack([np.ones(np.sum(keep)), np.log(rho[keep])], axis=1)
    coeff, _, rank, _ = np.linalg.lstsq(design, np.log(q[keep]), rcond=None)
    if rank < 2:
        raise ConditioningError('log-log fit is rank deficient')
    return float(np.exp(coeff[0])), float(coeff[1])


def _radial_profile(values, rows):
    return np.array([np.max(np.abs(values[r])) for r in rows])


def residual_decay(h, config=None):
    """Fit max over angles of |h| against rho on the radius ladder."""
    config = config or PoissonConfig()
    rows = _ladder_rows(h.grid, config.ladder, margin=0)
    rho = h.grid.rho[rows]
    constant, slope = _loglog_fit(rho, _radial_profile(h.values, rows))
    return {'constant': constant, 'exponent': slope,
            'radii': rho.tolist()}


def _estimate(rho, q, target, tolerance, floor=1e-14):
    constant, slope = _loglog_fit(rho, q, floor)
    passed = slope is None or slope >= target - tolerance
    return {'constant': constant, 'slope': slope, 'target': target,
            'values': np.asarray(q, dtype=float).tolist(),
            'passed': bool(passed)}


def check_decay(V, params, alpha_prime, config=None):
    """Fitted decay of |z|^(2-2 beta) |V_zz| and
    |z|^(2-2 beta) |V_zz + (1-beta) V_z / z| on the radius ladder.
    """
    config = config or PoissonConfig()
    grid = V.grid
    if grid.kind != 'polar':
        raise StencilError('check_decay works on a polar grid')
    beta = params.beta
    ops = Wirtinger(grid)
    v_z = ops.d(V.values, 0)
    v_zz = ops.dd(V.values, 0, 0)
    z = grid.z()
    weight = grid.rho[:, None] ** (2 - 2 * beta)
    q1 = weight * np.abs(v_zz)
    q2 = weight * np.abs(v_zz + (1 - beta) * v_z / z)
    rows = _ladder_rows(grid, config.ladder)
    rho = grid.rho[rows]
    target = alpha_prime * beta
    report = {
        'second_derivative': _estimate(rho, _radial_profile(q1, rows),
                                       target, config.fit_tolerance),
        'corrected': _estimate(rho, _radial_profile(q2, rows), target,
                               config.fit_tolerance),
        'radii': rho.tolist()}
    report['passed'] = (report['second_derivative']['passed']
                        and report['corrected']['passed'])
    return report


def extract_expansion(v, f_tilde, params, alpha_prime, config=None):
    """a, b and V with v = a |z|^(2 beta) + b z + V near z = 0."""
    config = config or PoissonConfig()
    b_branch = _check_dichotomy(params, alpha_prime)
    grid = v.grid
    if grid.kind != 'polar':
        raise StencilError('extract_expansion works on a polar grid; use '
                           'coefficient_functions on product grids')
    beta = params.beta
    center, _ = _axis_limit(f_tilde.values)
    a = _maybe_real(center / beta ** 2, f_tilde.values)
    rho_b = grid.rho[:, None] ** (2 * beta)
    F = v.values - a * rho_b
    if b_branch:
        f_z = Wirtinger(grid).d(F, 0)
        b, _ = _axis_limit(f_z, skip=_deep_row(grid, config),
                           phase_tol=_DERIVATIVE_PHASE_TOL)
        b = complex(b)
    else:
        b = 0.0
    V = F - b * grid.z()
    if not np.iscomplexobj(v.values) and np.iscomplexobj(V) \
            and np.max(np.abs(np.imag(V))) == 0:
        V = np.real(V)
    remainder = GridField(V, grid, v.chart, beta)
    decay = check_decay(remainder, params, alpha_prime, config)
    first = decay['second_derivative']
    slope = first['slope']
    logger.info('expansion at beta = %.3f, alpha\' = %.3f: a = %s, b = %s',
                beta, alpha_prime, a, b)
    return ExpansionResult(a, b, remainder,
                           float('inf') if slope is None else slope,
                           first['constant'], b_branch, alpha_prime, beta)


def _variable_projection(rho, q, bracket=(-2.0, 3.0)):
    """Fit q = C1 rho^gamma + C2 with C1, C2 by least squares for each
    gamma and gamma by a bounded scalar search.
    """
    def solve(gamma):
        design = np.stack([rho ** gamma, np.ones_like(rho)], axis=1)
        coeff, _, _, _ = np.linalg.lstsq(design, q, rcond=None)
        return coeff, float(np.sum((design.dot(coeff) - q) ** 2))

    result = minimize_scalar(lambda g: solve(g)[1], bounds=bracket,
                             method='bounded',
                             options={'xatol': 1e-10})
    coeff, cost = solve(result.x)
    return float(result.x), float(coeff[0]), float(coeff[1]), cost


def first_derivative_bound(F, params, alpha_prime, b=None, config=None):
    """Fit |dF/dz| against C1 |z|^gamma + C2 on rho <= 1/4.

       For beta >= 1/2 also fits |z|^(1 - 2 beta) |dF/dz - b| against
       |z|^(alpha' beta), with b extrapolated when not given. For
       beta < 1/2 the fitted gamma must reach 2 beta - 1 + alpha' beta.
    """
    config = config or PoissonConfig()
    grid = F.grid
    beta = params.beta
    ops = Wirtinger(grid)
    f_z = ops.d(F.values, 0)
    rows = [r for r in _ladder_rows(grid, config.ladder)
            if grid.rho[r] <= 0.25 + 1e-12]
    rho = grid.rho[rows]
    q = _radial_profile(f_z, rows)
    expected = 2 * beta - 1 + alpha_prime * beta
    if np.max(q) <= 1e-14:
        report = {'exponent': None, 'c1': 0.0, 'c2': 0.0,
                  'expected_exponent': expected}
    else:
        gamma, c1, c2, cost = _variable_projection(rho, q)
        report = {'exponent': gamma, 'c1': c1, 'c2': c2, 'cost': cost,
                  'expected_exponent': expected}
    if beta >= 0.5:
        if b is None:
            b, _ = _axis_limit(f_z, skip=_deep_row(grid, config),
                               phase_tol=_DERIVATIVE_PHASE_TOL)
            b = complex(b)
        claim = rho[:, None] ** (1 - 2 * beta) * np.abs(f_z[rows] - b)
        claim = np.max(claim, axis=1)
        estimate = _estimate(rho, claim, alpha_prime * beta,
                             config.fit_tolerance, 1e-9 * max(1.0, abs(b)))
        report['claim'] = estimate
        report['b'] = _jsonable(b)
        report['passed'] = estimate['passed']
    else:
        report['passed'] = bool(report['exponent'] is None
                                or report['exponent']
                                >= expected - config.fit_tolerance)
    return report


def coefficient_functions(v, f, params, alpha_prime, config=None, seed=0):
    """Per-tangential-point a and b on a product grid, with Holder
    seminorm estimates of both along the divisor.

       The transverse unfolded right-hand side is
       f_tilde = beta^2 (f - Delta_e v).
    """
    config = config or PoissonConfig()
    grid = v.grid
    if grid.kind != 'product':
        raise StencilError('coefficient_functions needs a product grid')
    b_branch = _check_dichotomy(params, alpha_prime)
    beta = params.beta
    h_t = _tangential_spacing(grid.tangential)
    # Delta_e = (d_xx + d_yy) / 4 over the tangential axes
    moved = np.moveaxis(v.values, (0, 1), (-2, -1))
    lap_e = np.moveaxis(laplacian_odd(moved, h_t) / 4, (-2, -1), (0, 1))
    f_tilde = beta ** 2 * (f.values - lap_e)
    center, _ = _axis_limit(f_tilde, radial_axis=2)
    a = _maybe_real(center / beta ** 2, f_tilde)
    rho = grid.transverse.rho
    F = v.values - a[:, :, None, None] * (rho ** (2 * beta))[None, None, :,
                                                            None]
    if b_branch:
        transverse = grid.transverse
        ops = Wirtinger(transverse)
        f_z = ops.d(np.moveaxis(F, (0, 1), (-2, -1)), 0)
        b, _ = _axis_limit(np.moveaxis(f_z, (-2, -1), (0, 1)),
                           radial_axis=2, skip=_deep_row(transverse, config),
                           phase_tol=_DERIVATIVE_PHASE_TOL)
    else:
        b = np.zeros(a.shape)
    tangential = grid.tangential
    a_field = GridField(a, tangential, 'z', beta)
    b_field = GridField(b, tangential, 'z', beta)
    return {'a': a_field, 'b': b_field, 'b_branch': b_branch,
            'holder_a': holder_seminorm(a_field, params.alpha, seed=seed),
            'holder_b': holder_seminorm(b_field, params.alpha, seed=seed)}


def product_case(beta, n_tangential, n_sigma, n_theta=8, rho_min=1e-6):
    """v = sin(pi x) sin(pi y) |z_2|^(2 beta) on the tangential box times
    the disc, with its right-hand side and boundary data.
    """
    tangential = tangential_box(n_tangential)
    grid = ProductGrid(tangential, disc_grid(n_sigma, n_theta, rho_min))
    x, y, s, _ = grid.mesh()
    phi = np.sin(np.pi * x) * np.sin(np.pi * y)
    r2 = np.exp(2 * beta * s)
    exact = GridField(phi * r2, grid, 'z', beta)
    f = GridField(phi - 0.5 * np.pi ** 2 * phi * r2, grid, 'z', beta)
    boundary = phi[:, :, -1, :]
    return f, boundary, exact


def default_params(beta, alpha=None):
    """ConeParams with alpha halfway below 1/beta - 1 (capped below 1)."""
    if alpha is None:
        alpha = min(0.5 * (1 / beta - 1), 0.9)
    return ConeParams(alpha, beta)
