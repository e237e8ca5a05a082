"""Holder seminorm estimates and membership tests for the weighted classes.

A function is of class C_w^{0,alpha} when its pullback through every chart
is alpha-Holder, and of class D_w^{0,alpha} when in addition every pulled
back mixed second derivative f_{ij} = d2(psi_k^* f)/dw_i dw-bar_j is
alpha-Holder and f_{in}, f_{nj} (i, j < n) vanish on w_n = 0.

Sampled seminorms are lower bounds of the true seminorm. Membership is
judged from the trend of the estimate along a refinement ladder that
approaches the divisor.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List

import numpy as np

from conekit.cone_charts import charts, pullback
from conekit.config import HolderConfig
from conekit.exceptions import ParameterError, StencilError, VanishingError
from conekit.grid import GridField
from conekit.stencils import Wirtinger, extrapolate_to_axis

logger = logging.getLogger(__name__)

STABLE = 'stable'
DIVERGING = 'diverging'
INCONCLUSIVE = 'inconclusive'
_RANK = {STABLE: 0, INCONCLUSIVE: 1, DIVERGING: 2}


@dataclass
class HolderReport:
    alpha: float
    seminorm_estimate: float
    pair_count: int
    refinement_trend: List[List[float]] = field(default_factory=list)
    verdict: str = INCONCLUSIVE

    def to_dict(self):
        return asdict(self)


@dataclass
class MixedHessianReport:
    """Per-chart Holder reports of f_{ij} and boundary limits of f_{in},
    f_{nj}.
    """
    entries: Dict[int, Dict[str, HolderReport]] = field(default_factory=dict)
    boundary_vanishing: Dict[int, Dict[str, dict]] = \
        field(default_factory=dict)

    @property
    def verdict(self):
        verdicts = [r.verdict for per_chart in self.entries.values()
                    for r in per_chart.values()]
        for per_chart in self.boundary_vanishing.values():
            for entry in per_chart.values():
                if not entry['well_posed']:
                    verdicts.append(INCONCLUSIVE)
                elif not entry['vanishes']:
                    verdicts.append(DIVERGING)
        return worst_verdict(verdicts)

    def to_dict(self):
        return {'entries': {str(k): {name: r.to_dict()
                                     for name, r in v.items()}
                            for k, v in self.entries.items()},
                'boundary_vanishing': {str(k): v for k, v in
                                       self.boundary_vanishing.items()},
                'verdict': self.verdict}


def worst_verdict(verdicts):
    """Overall verdict: any diverging beats inconclusive beats stable."""
    verdicts = list(verdicts)
    if not verdicts:
        return STABLE
    return max(verdicts, key=lambda v: _RANK[v])


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise ParameterError('alpha must lie in (0, 1), got {}'.format(alpha))


def _quotients(points, values, i, j, alpha):
    dist = np.sqrt(np.sum((points[i] - points[j]) ** 2, axis=-1))
    diff = np.abs(values[i] - values[j])
    keep = dist > 0
    return diff[keep] / dist[keep] ** alpha


def _neighbour_pairs(shape, periodic, shifts=(1, 2)):
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    firsts = []
    seconds = []
    for axis, p in enumerate(periodic):
        for k in shifts:
            if shape[axis] <= k:
                continue
            if p:
                firsts.append(idx.ravel())
                seconds.append(np.roll(idx, -k, axis=axis).ravel())
            else:
                lo = [slice(None)] * len(shape)
                hi = [slice(None)] * len(shape)
                lo[axis] = slice(None, -k)
                hi[axis] = slice(k, None)
                firsts.append(idx[tuple(lo)].ravel())
                seconds.append(idx[tuple(hi)].ravel())
    if not firsts:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return np.concatenate(firsts), np.concatenate(seconds)


def _sampled_pairs(grid, pair_budget, rng):
    """Grid-neighbour pairs plus `pair_budget` uniform random pairs."""
    i, j = _neighbour_pairs(grid.shape, grid.periodic)
    n = grid.size
    ri = rng.integers(0, n, size=pair_budget)
    rj = rng.integers(0, n, size=pair_budget)
    keep = ri != rj
    return np.concatenate([i, ri[keep]]), np.concatenate([j, rj[keep]])


def _exhaustive_estimate(points, values, alpha, chunk):
    n = len(values)
    best = 0.0
    rows = max(1, min(chunk, int(5e6 // max(n, 1))))
    for start in range(0, n, rows):
        stop = min(n, start + rows)
        dist = np.sqrt(np.sum((points[start:stop, None, :]
                               - points[None, :, :]) ** 2, axis=-1))
        diff = np.abs(values[start:stop, None] - values[None, :])
        upper = np.arange(n)[None, :] > np.arange(start, stop)[:, None]
        mask = upper & (dist > 0)
        if np.any(mask):
            best = max(best, float(np.max(diff[mask] / dist[mask] ** alpha)))
    return best, n * (n - 1) // 2


def holder_seminorm(samples, alpha, pair_budget=None, seed=0, config=None):
    """Sampled alpha-Holder seminorm max |f(x) - f(y)| / |x - y|^alpha."""
    _check_alpha(alpha)
    config = config or HolderConfig()
    if pair_budget is None:
        pair_budget = config.pair_budget
    values = np.asarray(samples.values).reshape(samples.grid.size)
    if values.size < 2:
        raise StencilError('Holder seminorm needs at least two samples')
    points = samples.grid.real_points()
    if values.size <= config.exhaustive_points:
        estimate, count = _exhaustive_estimate(points, values, alpha,
                                               config.chunk)
    else:
        rng = np.random.default_rng(seed)
        i, j = _sampled_pairs(samples.grid, pair_budget, rng)
        q = _quotients(points, values, i, j, alpha)
        estimate = float(np.max(q)) if q.size else 0.0
        count = int(q.size)
    logger.debug('seminorm estimate %.4g over %d pairs (%d points)',
                 estimate, count, values.size)
    return HolderReport(alpha, estimate, count,
                        [[int(values.size), estimate]], INCONCLUSIVE)


def _verdict(estimates, floors, growth_factor):
    effective = [e if e > f else 0.0 for e, f in zip(estimates, floors)]
    if all(e == 0 for e in effective):
        return STABLE
    if len(effective) < 2:
        return INCONCLUSIVE
    ratios = []
    for prev, cur in zip(effective[:-1], effective[1:]):
        if prev == 0:
            ratios.append(np.inf if cur > 0 else 1.0)
        else:
            ratios.append(cur / prev)
    if len(ratios) >= 2 and all(r > growth_factor for r in ratios):
        return DIVERGING
    if all(r <= growth_factor for r in ratios):
        return STABLE
    return INCONCLUSIVE


def holder_trend(levels, alpha, pair_budget=None, seed=0, config=None):
    """Seminorm estimates along a refinement ladder, with a verdict."""
    config = config or HolderConfig()
    trend = []
    floors = []
    count = 0
    for level, samples in enumerate(levels):
        report = holder_seminorm(samples, alpha, pair_budget, seed + level,
                                 config)
        trend.append([int(samples.grid.size), report.seminorm_estimate])
        scale = float(np.max(np.abs(samples.values))) if samples.values.size \
            else 0.0
        floors.append(config.noise_floor * max(scale, 1e-300))
        count += report.pair_count
    verdict = _verdict([t[1] for t in trend], floors, config.growth_factor)
    logger.info('Holder trend %s -> %s',
                ['{:.3g}'.format(t[1]) for t in trend], verdict)
    return HolderReport(alpha, max(t[1] for t in trend), count, trend,
                        verdict)


def _as_levels(f):
    if isinstance(f, GridField):
        return [f]
    return list(f)


def cw_membership(f, params, config=None, seed=0):
    """Pull f back through every chart and run the Holder trend on each.

       `f` is a z-chart field or a list of fields forming a refinement
       ladder. Returns {k: HolderReport}; the overall verdict is
       `worst_verdict` of the values.
    """
    levels = _as_levels(f)
    reports = {}
    for chart in charts(params.beta):
        pulled = [pullback(level, chart) for level in levels]
        reports[chart.k] = holder_trend(pulled, params.alpha, seed=seed,
                                        config=config)
    return reports


def mixed_hessian(w_field, margin=2):
    """All f_{ij} of a w-chart field, trimmed by the stencil margin.

       Returns {(i, j): GridField}.
    """
    ops = Wirtinger(w_field.grid)
    out = {}
    for i in range(ops.n):
        for j in range(ops.n):
            values = ops.ddbar(w_field.values, i, j)
            if i == j and not np.iscomplexobj(w_field.values):
                values = np.real(values)
            out[(i, j)] = w_field.with_values(values).trim(margin)
    return out


def _radial_axis(grid):
    return 0 if grid.kind == 'polar' else grid.n_tangential_axes


def _innermost_spacing(grid):
    axis = _radial_axis(grid)
    s = grid.axes[axis]
    return float(np.exp(s[1]) - np.exp(s[0]))


def boundary_limit(field_, alpha, config=None):
    """Extrapolate a w-chart field to w_n = 0 along rays and compare the
    limit with vanishing_factor * h^alpha.
    """
    config = config or HolderConfig()
    axis = _radial_axis(field_.grid)
    limit, correction, ok = extrapolate_to_axis(field_.values, axis)
    h = _innermost_spacing(field_.grid)
    tolerance = config.vanishing_factor * h ** alpha
    value = float(np.max(np.abs(limit)))
    return {'value': value, 'residual': float(np.max(correction)),
            'tolerance': tolerance, 'well_posed': ok,
            'vanishes': value <= tolerance}


def dw_membership(f, params, config=None, seed=0):
    """Holder trends of every pulled-back f_{ij} and the boundary limits of
    the mixed transverse entries on the finest level.
    """
    levels = _as_levels(f)
    report = MixedHessianReport()
    for chart in charts(params.beta):
        hessians = [mixed_hessian(pullback(level, chart)) for level in levels]
        n = int(round(np.sqrt(len(hessians[0]))))
        entries = {}
        boundary = {}
        for (i, j) in sorted(hessians[0]):
            name = 'f_{}{}'.format(i + 1, j + 1)
            entries[name] = holder_trend([h[(i, j)] for h in hessians],
                                         params.alpha, seed=seed,
                                         config=config)
            if (i == n - 1) != (j == n - 1):
                boundary[name] = boundary_limit(hessians[-1][(i, j)],
                                                params.alpha, config)
        report.entries[chart.k] = entries
        report.boundary_vanishing[chart.k] = boundary
    logger.info('D_w membership verdict: %s', report.verdict)
    return report


def phase_multiply(f, direction='w', alpha=0.5, config=None):
    """g = f w/|w| (or f conj(w)/|w|) for a w-chart field vanishing on w = 0."""
    if direction not in ('w', 'conj_w'):
        raise ParameterError('direction must be "w" or "conj_w"')
    check = boundary_limit(f, alpha, config)
    if not check['vanishes']:
        raise VanishingError('f does not vanish at w = 0: limit {:.3g} > {:.3g}'
                             .format(check['value'], check['tolerance']))
    grid = f.grid
    theta = grid.mesh()[_radial_axis(grid) + 1]
    phase = np.exp(1j * theta) if direction == 'w' else np.exp(-1j * theta)
    return f.with_values(f.values * phase)


def phase_bound_check(f, g, alpha, pair_budget=100000, seed=0):
    """Pairwise check |g(p) - g(q)| <= 3 S_f |p - q|^alpha.

       S_f is the sampled seminorm of f over the same pairs together with
       the quotients |f(p)| / |w_p|^alpha against the divisor, where f
       vanishes.
    """
    _check_alpha(alpha)
    grid = f.grid
    points = grid.real_points()
    fv = np.asarray(f.values).reshape(grid.size)
    gv = np.asarray(g.values).reshape(grid.size)
    rng = np.random.default_rng(seed)
    i, j = _sampled_pairs(grid, pair_budget, rng)
    dist = np.sqrt(np.sum((points[i] - points[j]) ** 2, axis=-1))
    keep = dist > 0
    i, j, dist = i[keep], j[keep], dist[keep]
    radius = np.exp(grid.mesh()[_radial_axis(grid)]).reshape(grid.size)
    s_f = max(float(np.max(np.abs(fv[i] - fv[j]) / dist ** alpha)),
              float(np.max(np.abs(fv) / radius ** alpha)))
    lhs = np.abs(gv[i] - gv[j])
    rhs = 3 * s_f * dist ** alpha
    violations = int(np.sum(lhs > rhs * (1 + 1e-12) + 1e-300))
    s_g = float(np.max(lhs / dist ** alpha))
    return {'pairs': int(len(i)), 'seminorm_f': s_f, 'seminorm_g': s_g,
            'violations': violations,
            'ratio': s_g / s_f if s_f > 0 else 0.0}


def phi_function(r, t, alpha):
    """(2 - 2 cos t) / (r^2 - 2 r cos t + 1)^alpha."""
    _check_alpha(alpha)
    r = np.asarray(r, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    den = r ** 2 - 2 * r * np.cos(t) + 1
    if np.any(den == 0):
        raise ParameterError('phi has a pole at r = 1, t = 0')
    out = (2 - 2 * np.cos(t)) / den ** alpha
    return float(out) if out.ndim == 0 else out


def phi_bound_scan(n_r=1000, n_t=1000, alphas=None):
    """Brute-force maximum of phi over r in [1e-4, 10], t in [0, pi]."""
    if alphas is None:
        alphas = np.round(np.arange(1, 10) / 10, 1)
    r = np.logspace(-4, 1, n_r)[:, None]
    t = np.linspace(0, np.pi, n_t)[None, :]
    pole = (np.abs(r - 1) < 1e-15) & (t == 0)
    c = np.cos(t)
    maxima = {}
    excess = -np.inf
    for alpha in alphas:
        den = np.where(pole, 1.0, r ** 2 - 2 * r * c + 1)
        values = np.where(pole, 0.0, (2 - 2 * c) / den ** alpha)
        maxima[float(alpha)] = float(np.max(values))
        positive = np.broadcast_to(c > 0, values.shape)
        bound = 2 * (1 - c) ** (1 - alpha) / (1 + c) ** alpha
        gap = (values - bound)[positive]
        excess = max(excess, float(np.max(gap)) if gap.size else -np.inf)
    overall = max(maxima.values())
    return {'max': overall, 'per_alpha': maxima,
            'cos_positive_excess': excess, 'points': int(n_r * n_t)}
