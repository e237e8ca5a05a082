"""Test the glued background potential and the volume expansion."""
import json
import os

import pytest
import numpy as np
import torch
from conekit.background import (GluedPotential, _constant_on_divisor,
                                choose_gluing_parameters,
                                build_background_u, conic_positivity, jets,
                                ladder_membership, lelong_residual,
                                log_moduli, log_volume_ratio, model_geometry,
                                profile_jets, q_curvature_residual,
                                q_function, ricci_identity_residual,
                                ricci_potential, save_background, tilde_u,
                                volume_expansion_coeffs)
from conekit.cone_charts import ConeParams
from conekit.config import BackgroundConfig
from conekit.exceptions import (ConditioningError, GluingError,
                                ParameterError)
from conekit.grid import RadialGrid, polar_grid, read_field
from conekit.weighted_holder import STABLE


@pytest.fixture(scope='module')
def config():
    return BackgroundConfig()


@pytest.fixture(scope='module')
def disc(config):
    return model_geometry('disc_n1', config)


@pytest.fixture(scope='module')
def disc_result(disc, config):
    return build_background_u(disc, config)


def _bundle(k):
    return model_geometry('line_bundle_p1', BackgroundConfig(k_bundle=k))


def test_jets():
    x = np.array([[-1.0], [0.0], [0.5]])
    value, grad, hess = jets(lambda t: torch.exp(2 * t[:, 0]), x)
    assert np.allclose(value, np.exp(2 * x[:, 0]))
    assert np.allclose(grad[:, 0], 2 * np.exp(2 * x[:, 0]))
    assert np.allclose(hess[:, 0, 0], 4 * np.exp(2 * x[:, 0]))
    _, _, flat = jets(lambda t: 3 * t[:, 0], x)
    assert np.all(flat == 0)


def test_tilde_u_disc(disc, config):
    ut = tilde_u(disc, config)
    rho = np.exp(ut.grid.axes[0])
    s2 = disc.c2 * rho ** 2
    expected = np.where(s2 > config.flush_h, np.exp(-1 / s2), 0.0) - rho ** 2
    assert np.allclose(ut.values, expected, rtol=1e-12, atol=1e-300)
    assert abs(ut.values[0]) <= 1e-10


def test_tilde_u_hessian(disc, config):
    # x-Hessian of exp(-1/S) is 4 exp(-1/S) (1 - S) / S^2
    pj = profile_jets(disc, log_moduli(disc.grid(config)))
    s2 = pj.s2
    live = s2 > config.flush_h
    expected = 4 * np.exp(-1 / s2[live]) * (1 - s2[live]) / s2[live] ** 2
    got = (pj.e / s2 ** 2 * pj.m_hat[:, 0, 0])[live]
    assert np.allclose(got, expected, rtol=1e-10, atol=0)
    assert np.all(expected > 0)
    assert np.all(pj.e[~live] == 0)


def test_glued_hessian_outside(disc, config):
    points = log_moduli(disc.grid(config))
    gj = GluedPotential(disc, 0.5).evaluate(points)
    assert np.all(gj.hess_phi[:, 0, 0] >= 0)
    # u = q far from D and q is pluriharmonic on the disc
    far = (gj.h == 0) & (gj.g2 > 0.5)
    assert np.any(far)
    assert np.allclose(gj.hess_u[far], 0, atol=1e-12)


def test_tilde_u_bundle_invariance():
    geom = _bundle(1)
    config = BackgroundConfig(n_radial=64)
    ut = tilde_u(geom, config)
    pj = profile_jets(geom, log_moduli(ut.grid))
    # a function of |s|^2 only
    order = np.argsort(pj.s2)
    values = ut.values.ravel()[order]
    assert np.allclose(values, np.exp(-1 / pj.s2[order]) * (
        pj.s2[order] > config.flush_h) - pj.s2[order] / geom.c2,
        rtol=1e-12, atol=1e-15)


def test_q_function(disc, config):
    eta = 0.25
    q = q_function(disc, eta, config)
    log_s2 = np.log(disc.c2) + 2 * q.grid.axes[0]
    assert np.allclose(q.values, 1 / eta ** 2 + eta * log_s2)
    with pytest.raises(ParameterError):
        q_function(disc, 0.0, config)


@pytest.mark.parametrize('k', [1, 2])
def test_q_curvature_bundle(k):
    geom = _bundle(k)
    report = q_curvature_residual(geom, 0.5, BackgroundConfig(k_bundle=k))
    assert report['passed'], report


def test_q_curvature_disc(disc, config):
    report = q_curvature_residual(disc, 0.5, config)
    assert report['passed']
    assert report['residual'] <= 1e-8


@pytest.mark.parametrize('name', ['disc_n1', 'line_bundle_p1'])
def test_lelong(name, config):
    report = lelong_residual(model_geometry(name, config), config)
    assert report['passed'], report


def test_gluing_disc(disc, config):
    eta, r, r_inner = choose_gluing_parameters(disc, config=config)
    assert eta == 0.5
    assert 0 < r_inner < r
    assert np.isclose(np.log(r_inner), -13, atol=0.1)
    ut = tilde_u(disc, config).values
    q = q_function(disc, eta, config).values
    s2 = disc.c2 * np.exp(2 * disc.grid(config).axes[0])
    gap = eta + 1 / eta
    assert np.all((q - ut)[s2 >= r] > gap)
    assert np.all((ut - q)[s2 <= r_inner] > gap)


def test_gluing_fails_for_large_eta(disc, config):
    with pytest.raises(GluingError) as info:
        choose_gluing_parameters(disc, candidate_etas=[2.0, 4.0],
                                 config=config)
    assert set(info.value.diagnostics) == {2.0, 4.0}
    assert info.value.diagnostics[4.0]['outer_shells'] == 0


def test_build_disc(disc_result, disc):
    result = disc_result
    assert result.eta == 0.5
    assert result.passed, result.checks
    assert result.checks['exactness']['inner'] <= 1e-10
    assert result.checks['exactness']['outer'] <= 1e-10
    assert np.isfinite(result.log_positivity_margin)
    assert result.checks['psh_chain']['points'] > 0
    fit = result.vanishing_fit
    assert fit['r_squared'] >= 0.99
    assert np.isclose(fit['slope'], -1, rtol=1e-3)
    assert sorted(fit['ladder']) == [1, 2, 4, 8]
    conic = result.checks['conic']['betas']['0.75']
    assert np.isclose(conic['margin'], disc.c2 ** 0.75, rtol=1e-9)
    assert conic['bound'] <= conic['bound_limit']


@pytest.mark.parametrize('k', [1, 2])
def test_build_line_bundle(k):
    config = BackgroundConfig(k_bundle=k)
    result = build_background_u(model_geometry('line_bundle_p1', config),
                                config)
    assert result.eta == 0.5
    assert result.passed, result.checks
    assert result.checks['constant_on_divisor']['variance'] <= 1e-10
    assert result.conic_positivity_margin > 0


def test_conic_uniform_bound(disc_result, config):
    for beta in config.beta_ladder:
        report = conic_positivity(disc_result.potential, beta, config)
        assert report['passed']
        assert 0 < report['margin'] < report['upper'] < np.inf
    with pytest.raises(ParameterError):
        conic_positivity(disc_result.potential, 1.0, config)


def test_volume_expansion_disc(disc, disc_result, config):
    beta = 0.75
    out = volume_expansion_coeffs(disc, disc_result, beta, config)
    assert out.k == 0.5
    assert len(out.a) == 1
    assert np.allclose(out.a[0].values, beta ** 2 * disc.c2, rtol=1e-12)
    assert out.a0_positive
    assert out.shell_fit['a0_error'] <= 1e-6
    assert out.identity['passed']
    assert out.expansion_residual <= 1e-10
    # the remainder vanishes to infinite order at D
    assert out.F.values[0] == 0


def test_volume_expansion_small_beta(disc, config):
    beta = 0.4
    out = volume_expansion_coeffs(disc, None, beta, config)
    assert out.k == 0
    assert np.allclose(out.F.values, 1)
    assert np.allclose(out.a[0].values, beta ** 2 * disc.c2, rtol=1e-12)
    assert 1 - beta in out.shell_fit['exponents']
    assert out.shell_fit['a0_error'] <= 1e-6
    with pytest.raises(ParameterError):
        volume_expansion_coeffs(disc, None, 0.75, config)


def test_volume_expansion_bundle():
    beta = 0.6
    config = BackgroundConfig()
    geom = model_geometry('line_bundle_p1', config)
    result = build_background_u(geom, config)
    out = volume_expansion_coeffs(geom, result, beta, config)
    assert len(out.a) == 2
    assert out.a0_positive
    assert np.all(out.a[0].values > 0)
    assert out.shell_fit['a0_error'] <= 1e-5
    assert out.shell_fit['a1_error'] <= 1e-5
    assert out.identity['passed'], out.identity
    assert out.expansion_residual <= 1e-8


def test_volume_expansion_conditioning(disc, config):
    # |s|^2beta and |s|^(2 - 2beta) collide at beta = 1/2
    geom = model_geometry('line_bundle_p1', config)
    with pytest.raises(ConditioningError):
        volume_expansion_coeffs(geom, None, 0.5, config)
    with pytest.raises(ConditioningError):
        volume_expansion_coeffs(disc, None, 0.4,
                                BackgroundConfig(condition_cap=1.0))


def test_log_volume_ratio(disc, disc_result, config):
    beta = 0.75
    field_ = log_volume_ratio(disc, disc_result, beta, config=config)
    assert np.isclose(field_.values[0], np.log(beta ** 2 * disc.c2),
                      atol=1e-12)
    polar = log_volume_ratio(disc, disc_result, beta,
                             grid=polar_grid(32, 8, 1e-4))
    assert polar.values.shape == (32, 8)
    assert np.all(polar.values == polar.values[:, :1])
    assert polar.beta == beta


def test_log_volume_ratio_membership(disc):
    # log(beta^2 c^2 + |s|^(2 - 2 beta)) with u = 0
    beta = 0.4
    params = ConeParams(0.3, beta)
    report = ladder_membership(
        lambda g: log_volume_ratio(disc, None, beta, grid=g), params,
        rho_min=1e-3, n_rho=32, depth=2)
    assert report.verdict == STABLE


def test_log_volume_ratio_membership_glued(disc, disc_result):
    beta = 0.6
    report = ladder_membership(
        lambda g: log_volume_ratio(disc, disc_result, beta, grid=g),
        ConeParams(0.3, beta))
    assert report.verdict == STABLE


def test_ricci_potential_modes(disc, disc_result, config):
    beta = 0.75
    ratio = log_volume_ratio(disc, disc_result, beta, config=config)
    plain = ricci_potential(disc, disc_result, beta, config=config)
    assert np.allclose(plain.values, -ratio.values)
    c2 = disc.c2

    def f_omega(x):
        return np.exp(beta * (np.log(c2) + 2 * x[:, 0]))

    omega = ricci_potential(disc, disc_result, beta, 'omega_class',
                            f_omega=f_omega, config=config)
    x = disc.grid(config).axes[0][:, None]
    assert np.allclose(omega.values, f_omega(x) - ratio.values)
    with pytest.raises(ParameterError):
        ricci_potential(disc, disc_result, beta, 'omega_class',
                        config=config)
    with pytest.raises(ParameterError):
        ricci_potential(disc, disc_result, beta, 'kahler', config=config)


@pytest.mark.parametrize('lam', [0.0, 1.0])
def test_ricci_identity_disc(disc, disc_result, config, lam):
    # Ric(omega) = 0 on the disc, so f0 = -lambda |z|^2
    def f0(x):
        return -lam * np.exp(2 * x[:, 0])

    report = ricci_identity_residual(disc, disc_result, 0.75, lam, f0, config)
    assert report['passed'], report


def test_save_background(disc_result, tmp_path):
    directory = str(tmp_path)
    save_background(disc_result, directory)
    u = read_field(os.path.join(directory, 'u.csv'))
    assert np.allclose(u.values, disc_result.u.values, rtol=1e-12, atol=0)
    with open(os.path.join(directory, 'background.json')) as f:
        summary = json.load(f)
    assert summary['eta'] == 0.5
    assert summary['passed']


def test_geometry_errors():
    with pytest.raises(ParameterError):
        model_geometry('torus')
    with pytest.raises(ParameterError):
        model_geometry('line_bundle_p1', BackgroundConfig(k_bundle=3))
    with pytest.raises(ParameterError):
        model_geometry('disc_n1', BackgroundConfig(sup_s2=1.5))


def test_constant_on_divisor_needs_well_posed_limit(config):
    grid = RadialGrid([np.linspace(-1, 0, 4), np.linspace(-6, -5, 5)])
    fiber = np.exp(grid.axes[1])
    smooth = np.ones((4, 1)) * (2 - fiber ** 2)
    check = _constant_on_divisor(grid, smooth, config)
    assert check['well_posed'] and check['passed']
    assert np.isclose(check['mean'], 2, atol=1e-8)
    oscillating = np.ones((4, 1)) * np.array([0.0, 1.0, 0.0, 1.0, 0.0])
    check = _constant_on_divisor(grid, oscillating, config)
    assert not check['well_posed']
    assert not check['passed']
