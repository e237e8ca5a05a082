"""Test Holder seminorm estimates, membership verdicts and the phase lemma."""
import pytest
import numpy as np
from conekit.cone_charts import ConeParams
from conekit.exceptions import ParameterError, VanishingError
from conekit.grid import BoxGrid, GridField, polar_grid, polar_ladder, sample
from conekit.weighted_holder import (DIVERGING, INCONCLUSIVE, STABLE,
                                     cw_membership, dw_membership,
                                     holder_seminorm, holder_trend,
                                     phase_bound_check, phase_multiply,
                                     phi_bound_scan, phi_function,
                                     worst_verdict)


def _line(n, func):
    grid = BoxGrid([np.linspace(0, 1, n)])
    return GridField(func(grid.axes[0]), grid)


def _ladder(func, rho_min, depth=3, n_rho=16, n_theta=32):
    return [sample(func, g) for g in polar_ladder(n_rho, n_theta, rho_min,
                                                  depth)]


def _verdicts(reports):
    return worst_verdict(r.verdict for r in reports.values())


@pytest.fixture
def phase_cases():
    """Test functions on a w-plane grid, all vanishing at w = 0."""
    grid = polar_grid(128, 64, 1e-4, 1.0)
    cases = [(lambda w: np.abs(w) ** 0.5, 0.5),
             (lambda w: np.real(w), 0.9),
             (lambda w: np.abs(w) ** 0.7 * np.cos(np.angle(w)), 0.5),
             (lambda w: np.imag(w) * (1 + np.abs(w) ** 2), 0.5),
             (lambda w: np.abs(w) * np.sin(3 * np.angle(w)), 0.5)]
    return [(sample(func, grid, 'w1'), alpha) for func, alpha in cases]


def test_identity_seminorm():
    for n in [11, 101, 1001]:
        report = holder_seminorm(_line(n, lambda x: x), 0.5)
        assert np.isclose(report.seminorm_estimate, 1.0)
        assert report.pair_count == n * (n - 1) // 2


def test_constant_seminorm():
    report = holder_seminorm(_line(50, lambda x: 3 + 0 * x), 0.5)
    assert report.seminorm_estimate == 0
    levels = [_line(n, lambda x: 3 + 0 * x) for n in [10, 20, 40]]
    assert holder_trend(levels, 0.5).verdict == STABLE


def test_rough_power_diverges():
    levels = [_line(n, lambda x: x ** 0.3) for n in [100, 10000, 1000000]]
    report = holder_trend(levels, 0.5, pair_budget=10000)
    assert report.verdict == DIVERGING
    estimates = [e for _, e in report.refinement_trend]
    assert np.allclose(estimates, [99 ** 0.2, 9999 ** 0.2, 999999 ** 0.2],
                       rtol=1e-6)


def test_sampled_estimate_is_lower_bound():
    f = _line(20000, lambda x: np.sqrt(x))
    small = holder_seminorm(f, 0.5, pair_budget=100)
    assert small.seminorm_estimate <= 1.0 + 1e-12
    assert small.pair_count > 100


def test_alpha_out_of_range():
    with pytest.raises(ParameterError):
        holder_seminorm(_line(10, lambda x: x), 1.0)


def test_cw_model_potential_stable():
    beta = 0.75
    levels = _ladder(lambda z: np.abs(z) ** (2 * beta), 1e-4)
    reports = cw_membership(levels, ConeParams(0.3, beta))
    assert sorted(reports) == [1, 2, 3]
    assert _verdicts(reports) == STABLE


def test_cw_modulus_power():
    beta = 0.75
    levels = _ladder(lambda z: np.abs(z) ** (2 - 2 * beta), 1e-16)
    stable = cw_membership(levels, ConeParams(0.3, beta))
    assert _verdicts(stable) == STABLE
    rough = cw_membership(levels, ConeParams(0.7, beta, strict=False))
    assert _verdicts(rough) == DIVERGING


def test_cw_real_part_stable():
    levels = _ladder(np.real, 1e-4)
    assert _verdicts(cw_membership(levels, ConeParams(0.3, 0.75))) == STABLE


def test_dw_model_potential_stable():
    beta = 0.75
    levels = _ladder(lambda z: 2 * np.abs(z) ** (2 * beta), 1e-4)
    report = dw_membership(levels, ConeParams(0.3, beta))
    assert report.verdict == STABLE
    assert all(v == {} for v in report.boundary_vanishing.values())
    assert set(report.entries[1]) == {'f_11'}
    constant = _ladder(lambda z: 5 + 0 * np.abs(z), 1e-4)
    assert dw_membership(constant, ConeParams(0.3, beta)).verdict == STABLE


def test_dw_smooth_potential_diverges():
    levels = _ladder(lambda z: np.abs(z) ** 2, 1e-4)
    report = dw_membership(levels, ConeParams(0.9, 0.75, strict=False))
    assert report.verdict == DIVERGING


def test_phase_multiply_zero():
    grid = polar_grid(32, 16, 1e-3, 1.0)
    g = phase_multiply(sample(lambda w: 0 * w.real, grid, 'w1'))
    assert np.all(g.values == 0)


def test_phase_multiply_needs_vanishing():
    grid = polar_grid(32, 16, 1e-3, 1.0)
    with pytest.raises(VanishingError):
        phase_multiply(sample(lambda w: 1 + np.abs(w), grid, 'w1'))


def test_phase_multiply_direction():
    grid = polar_grid(32, 16, 1e-3, 1.0)
    f = sample(np.abs, grid, 'w1')
    w = grid.z()
    assert np.allclose(phase_multiply(f, 'w').values, w)
    assert np.allclose(phase_multiply(f, 'conj_w').values, np.conj(w))
    with pytest.raises(ParameterError):
        phase_multiply(f, 'z')


def test_phase_lemma_constant(phase_cases):
    for f, alpha in phase_cases:
        for direction in ['w', 'conj_w']:
            g = phase_multiply(f, direction, alpha)
            check = phase_bound_check(f, g, alpha, pair_budget=100000)
            assert check['pairs'] >= 100000
            assert check['violations'] == 0
            assert check['ratio'] <= 3


def test_phi_values():
    assert np.isclose(phi_function(1.0, np.pi, 0.5), 2.0)
    for alpha in [0.1, 0.4, 0.8]:
        assert np.isclose(phi_function(1.0, np.pi, alpha), 4 / 4 ** alpha)
    r = np.logspace(-3, 1, 50)[:, None]
    t = np.linspace(np.pi / 2, np.pi, 50)[None, :]
    assert np.all(phi_function(r, t, 0.3) <= 4)


def test_phi_pole():
    with pytest.raises(ParameterError):
        phi_function(1.0, 0.0, 0.5)


def test_phi_bound_scan():
    scan = phi_bound_scan(1000, 1000)
    assert scan['points'] == 10 ** 6
    assert 3.99 <= scan['max'] <= 4
    assert scan['cos_positive_excess'] <= 1e-12


def test_worst_verdict():
    assert worst_verdict([]) == STABLE
    assert worst_verdict([STABLE, INCONCLUSIVE]) == INCONCLUSIVE
    assert worst_verdict([INCONCLUSIVE, DIVERGING, STABLE]) == DIVERGING
