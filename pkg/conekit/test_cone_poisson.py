"""Test the cone Poisson solver and the expansion near z = 0."""
import pytest
import numpy as np
from conekit.cone_charts import ConeParams, conic_laplacian_apply
from conekit.config import PoissonConfig
from conekit.exceptions import (DichotomyError, ParameterError, SolverError,
                                StencilError)
from conekit.grid import GridField, polar_grid, sample
from conekit.cone_poisson import (ExpansionResult, assemble_modes,
                                  check_decay, coefficient_functions,
                                  cone_residual, convergence_orders,
                                  disc_grid, discrete_residual,
                                  equivariance_residual, extract_expansion,
                                  first_derivative_bound, product_case,
                                  residual_decay, solve_case, solve_modes,
                                  solve_poisson, unfolded_rhs)


@pytest.fixture
def config():
    return PoissonConfig()


@pytest.fixture
def deep_grid():
    """Disc grid reaching well inside the radius ladder."""
    return disc_grid(256, 16, 1e-6)


def _power(p):
    return lambda z: np.abs(z) ** p


@pytest.mark.parametrize('case', ['model_potential', 'harmonic',
                                  'smooth_square'])
@pytest.mark.parametrize('beta', [0.5, 0.75])
def test_manufactured_orders(config, case, beta):
    errors = []
    for n_sigma in config.n_sigma:
        v, exact = solve_case(case, beta, n_sigma, config)
        errors.append(np.max(np.abs(v.values - exact.values)))
    orders = convergence_orders(errors, config.n_sigma)
    assert errors[-1] < 1e-2
    assert min(orders) >= 1.8, (errors, orders)


def test_model_potential_residual(config):
    beta = 0.75
    v, exact = solve_case('model_potential', beta, 256, config)
    f = exact.with_values(np.ones(exact.values.shape))
    assert discrete_residual(exact, f, beta) <= 1e-3
    assert discrete_residual(v, f, beta) <= 1e-3
    lap = conic_laplacian_apply(exact, beta).values
    assert np.max(np.abs(lap[2:-2] - 1)) <= 1e-3


def test_equivariance(config):
    beta = 0.75
    grid = disc_grid(256, 64, 1e-6)
    f = sample(lambda z: np.ones(z.shape), grid, beta=beta)
    v = solve_poisson(f, beta, np.ones(64), config)
    assert equivariance_residual(v, f, beta) <= 2e-3


def test_modes_reassemble(config):
    beta = 0.6
    grid = disc_grid(64, 16)
    f = sample(lambda z: 1 + np.real(z) ** 2, grid, beta=beta)
    boundary = np.cos(2 * grid.theta)
    solutions = solve_modes(f, beta, boundary, config)
    assert [s.m for s in solutions][:3] == [0, 1, 2]
    assert max(s.residual for s in solutions) <= config.tolerance
    v = solve_poisson(f, beta, boundary, config)
    assert np.allclose(assemble_modes(solutions, grid, real=True), v.values)
    assert np.allclose(v.values[-1], boundary)
    assert not np.iscomplexobj(v.values)


def test_solver_errors(config):
    beta = 0.75
    grid = disc_grid(64, 16)
    rough = sample(_power(-2.5), grid, beta=beta)
    with pytest.raises(SolverError):
        solve_poisson(rough, beta, np.zeros(16), config)
    smooth = sample(_power(0), grid, beta=beta)
    with pytest.raises(StencilError):
        solve_poisson(smooth, beta, np.zeros(15), config)
    half = sample(_power(0), polar_grid(64, 16, 1e-6, 0.5), beta=beta)
    with pytest.raises(StencilError):
        solve_poisson(half, beta, np.zeros(16), config)
    with pytest.raises(ParameterError):
        solve_modes(smooth, 1.2, np.zeros(16), config)


def test_product_solver(config):
    beta = 0.75
    f, boundary, exact = product_case(beta, 15, 256)
    v = solve_poisson(f, beta, boundary, config)
    assert np.max(np.abs(v.values - exact.values)) <= 2e-3
    params = ConeParams(0.15, beta)
    coeffs = coefficient_functions(v, f, params, 0.1, config)
    x, y = coeffs['a'].grid.mesh()
    phi = np.sin(np.pi * x) * np.sin(np.pi * y)
    assert coeffs['b_branch']
    assert np.max(np.abs(coeffs['a'].values - phi)) <= 1e-2
    assert np.max(np.abs(coeffs['b'].values)) <= 1e-3
    assert 0 < coeffs['holder_a'].seminorm_estimate < 10


def test_cone_residual_constant(deep_grid):
    h = cone_residual(sample(lambda z: 3 + 0 * np.abs(z), deep_grid), 0.5)
    assert np.all(h.values == 0)
    assert residual_decay(h)['exponent'] is None


def test_cone_residual_real_part(deep_grid):
    beta = 0.5
    f_tilde = sample(lambda z: np.real(np.abs(z) ** (beta - 1) * z),
                     deep_grid)
    h = cone_residual(f_tilde, beta)
    bound = deep_grid.rho[:, None] ** (3 * beta - 2)
    assert np.all(np.abs(h.values) <= bound * (1 + 1e-9))
    assert np.isclose(residual_decay(h)['exponent'], 3 * beta - 2, atol=0.02)


def test_cone_residual_power(deep_grid):
    beta, alpha = 0.75, 0.3
    h = cone_residual(sample(_power(alpha * beta), deep_grid), beta)
    assert np.isclose(residual_decay(h)['exponent'],
                      2 * beta - 2 + alpha * beta, atol=0.02)


def test_expansion_constant_rhs(deep_grid):
    beta = 0.5
    params = ConeParams(0.5, beta)
    f_tilde = sample(lambda z: 0.5 + 0 * np.abs(z), deep_grid)
    v = sample(lambda z: 2 * np.abs(z) + np.abs(z) ** 1.4, deep_grid)
    result = extract_expansion(v, f_tilde, params, 0.3)
    assert isinstance(result, ExpansionResult)
    assert np.isclose(result.a, 4 * 0.5)
    assert abs(result.b) <= 1e-6
    assert np.isrealobj(result.a)


def test_expansion_manufactured(deep_grid):
    beta, alpha_prime = 0.75, 0.3
    params = ConeParams(0.32, beta)
    p = 2 * beta * (1 + alpha_prime)
    v = sample(lambda z: np.abs(z) ** (2 * beta) + 0.3 * z + np.abs(z) ** p,
               deep_grid)
    f = sample(lambda z: 1 + (1 + alpha_prime) ** 2
               * np.abs(z) ** (2 * beta * alpha_prime), deep_grid)
    result = extract_expansion(v, unfolded_rhs(f, beta), params, alpha_prime)
    assert result.b_branch
    assert abs(result.a - 1) <= 0.01
    assert abs(result.b - 0.3) <= 1e-3
    assert result.fitted_decay_exponent >= alpha_prime * beta - 0.05
    assert np.isclose(result.threshold_exponent,
                      2 / (2 - 2 * beta - alpha_prime * beta))


def test_expansion_b_vanishes_below_threshold(deep_grid):
    beta = 0.4
    params = ConeParams(0.49, beta)
    v = sample(lambda z: np.abs(z) ** (2 * beta) + 0.3 * z, deep_grid)
    f_tilde = sample(lambda z: beta ** 2 + 0 * np.abs(z), deep_grid)
    for alpha_prime in [0.1, 0.3, 0.45]:
        result = extract_expansion(v, f_tilde, params, alpha_prime)
        assert not result.b_branch
        assert result.b == 0


def test_expansion_dichotomy_boundary(deep_grid):
    beta = 0.4
    v = sample(_power(2 * beta), deep_grid)
    with pytest.raises(DichotomyError):
        extract_expansion(v, v, ConeParams(0.6, beta), 0.5)
    with pytest.raises(ParameterError):
        extract_expansion(v, v, ConeParams(0.3, beta), 0.4)


def test_decay_zero(deep_grid):
    zero = sample(lambda z: 0 * np.abs(z), deep_grid)
    report = check_decay(zero, ConeParams(0.3, 0.75), 0.2)
    assert report['passed']
    assert report['second_derivative']['slope'] is None


@pytest.mark.parametrize('beta', [0.4, 0.6, 0.75])
@pytest.mark.parametrize('alpha_prime', [0.2, 0.3])
def test_decay_model(deep_grid, beta, alpha_prime):
    params = ConeParams(min(alpha_prime + 0.02, 0.99), beta)
    V = sample(_power(2 * beta + alpha_prime * beta), deep_grid)
    report = check_decay(V, params, alpha_prime)
    assert report['passed']
    assert np.isclose(report['second_derivative']['slope'],
                      alpha_prime * beta, atol=0.02)
    assert np.isclose(report['corrected']['slope'], alpha_prime * beta,
                      atol=0.02)


def test_decay_needs_ladder():
    V = sample(_power(1.6), disc_grid(32, 16, 1e-1))
    with pytest.raises(StencilError):
        check_decay(V, ConeParams(0.3, 0.75), 0.2)


def test_decay_end_to_end(config):
    beta, alpha = 0.6, 0.5
    alpha_prime = 0.9 * alpha
    params = ConeParams(alpha, beta)
    grid = disc_grid(256, 16, 1e-6)
    rho = grid.rho[:, None]
    phase = 1 + 0.2 * np.cos(grid.theta[None, :] + 0.7)
    f_tilde = GridField(rho ** (alpha * beta) * phase, grid, beta=beta)
    f = f_tilde.with_values(f_tilde.values / beta ** 2)
    v = solve_poisson(f, beta, np.zeros(16), config)
    result = extract_expansion(v, f_tilde, params, alpha_prime, config)
    assert abs(result.a) <= 1e-3
    assert check_decay(result.V, params, alpha_prime, config)['passed']


def test_first_derivative_model(deep_grid):
    beta, alpha_prime = 0.75, 0.3
    params = ConeParams(0.32, beta)
    F = sample(_power(2 * beta + alpha_prime * beta), deep_grid)
    report = first_derivative_bound(F, params, alpha_prime)
    assert np.isclose(report['exponent'], 2 * beta - 1 + alpha_prime * beta,
                      atol=0.02)
    assert report['claim']['passed']


def test_first_derivative_linear(deep_grid):
    F = sample(lambda z: 0.4 * z, deep_grid)
    report = first_derivative_bound(F, ConeParams(0.3, 0.75), 0.2)
    assert report['claim']['slope'] is None
    assert np.isclose(report['b'], 0.4, rtol=1e-3)
    assert report['passed']


def test_first_derivative_below_half(deep_grid):
    beta, alpha_prime = 0.4, 0.3
    F = sample(lambda z: np.abs(z) ** (2 * beta + alpha_prime * beta) + 0.2,
               deep_grid)
    report = first_derivative_bound(F, ConeParams(0.5, beta), alpha_prime)
    assert 'claim' not in report
    assert np.isclose(report['exponent'], 2 * beta - 1 + alpha_prime * beta,
                      atol=0.02)
    assert report['passed']


def test_first_derivative_below_half_too_singular(deep_grid):
    beta, alpha_prime = 0.4, 0.3
    F = sample(_power(0.4), deep_grid)
    report = first_derivative_bound(F, ConeParams(0.5, beta), alpha_prime)
    assert np.isclose(report['exponent'], -0.6, atol=0.02)
    assert not report['passed']
