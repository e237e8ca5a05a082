"""Test the chart metric, the curvature tensor and the Holder reports."""
import pytest
import numpy as np
from conekit.background import build_background_u, model_geometry
from conekit.cone_charts import (ConeParams, HermitianMatrixField, WPoint,
                                 charts, psi)
from conekit.config import BackgroundConfig
from conekit.curvature import (curvature_field, curvature_holder_report,
                               differentiated_ma_residual, gaussian_curvature,
                               ma_residual_check, metric_derivatives,
                               metric_in_w, riemann, z_ladder)
from conekit.exceptions import (ConditioningError, PositivityError,
                                StencilError)
from conekit.grid import BoxGrid, GridField, box_grid, polar_ladder
from conekit.weighted_holder import DIVERGING, STABLE


@pytest.fixture
def quartic():
    """|w|^2 + |w|^4 on a square around 0, with g = 1 + 4|w|^2."""
    grid = box_grid(33, -0.5, 0.5)
    w, = grid.coordinates()
    r2 = np.abs(w) ** 2
    return {'potential': GridField(r2 + r2 ** 2, grid, 'w1'),
            'g': 1 + 4 * r2,
            'K': -4 / (1 + 4 * r2) ** 3}


@pytest.fixture(scope='module')
def disc_background():
    config = BackgroundConfig()
    return build_background_u(model_geometry('disc_n1', config), config)


def _trim(values, grid, margin=4):
    _, slices = grid.trim(margin)
    return values[slices]


def test_flat_metric():
    grid = box_grid(24, -0.5, 0.5)
    w, = grid.coordinates()
    g = metric_in_w(GridField(np.abs(w) ** 2, grid, 'w1'))
    assert np.allclose(g.matrix, 1, atol=1e-10)
    curv = curvature_field(GridField(np.abs(w) ** 2, grid, 'w1'))
    assert np.max(curv.norm.values) <= 1e-8
    assert curv.symmetry['passed']


def test_model_cone_is_flat_in_w():
    beta = 0.75
    chart = charts(beta)[0]
    center = 0.5 * np.exp(1j * chart.center)
    axes = [np.linspace(center.real - 0.2, center.real + 0.2, 16),
            np.linspace(center.imag - 0.2, center.imag + 0.2, 16)]
    grid = BoxGrid(axes)
    w, = grid.coordinates()
    arg = chart.center + np.angle(w * np.exp(-1j * chart.center))
    z = psi(chart, WPoint(w[..., None], arg)).coords[..., -1]
    potential = GridField(np.abs(z) ** (2 * beta), grid, 'w1', beta)
    g = metric_in_w(potential)
    assert np.allclose(g.matrix, 1, atol=1e-9)
    curv = riemann(g)
    assert np.max(curv.norm.values) <= 1e-8


def test_gaussian_curvature_oracle(quartic):
    potential = quartic['potential']
    g = metric_in_w(potential)
    assert np.allclose(g.matrix[..., 0, 0], quartic['g'], atol=1e-10)
    curv = curvature_field(potential)
    grid = potential.grid
    g11 = _trim(quartic['g'], grid)
    K = _trim(quartic['K'], grid)
    assert np.allclose(curv.rm[..., 0, 0, 0, 0] / g11 ** 2, K, atol=1e-8)
    assert np.allclose(curv.norm.values, np.abs(K), atol=1e-8)
    assert curv.symmetry['passed']
    center = np.unravel_index(np.argmax(np.abs(K)), K.shape)
    assert np.isclose(K[center], -4)
    oracle = gaussian_curvature(g)
    assert np.allclose(oracle.values, K, atol=1e-3)


def test_product_metric():
    grid = box_grid(20, -0.5, 0.5, n_axes=4)
    w1, w2 = grid.coordinates()
    r1 = np.abs(w1) ** 2
    r2 = np.abs(w2) ** 2
    potential = GridField(r1 + r1 ** 2 + r2 + 0.5 * r2 ** 2, grid, 'w1')
    curv = curvature_field(potential)
    rm = curv.rm
    for idx in np.ndindex(2, 2, 2, 2):
        if idx in ((0, 0, 0, 0), (1, 1, 1, 1)):
            continue
        assert np.allclose(rm[(Ellipsis,) + idx], 0, atol=1e-9)
    g1 = _trim(1 + 4 * r1, grid)
    g2 = _trim(1 + 2 * r2, grid)
    assert np.allclose(rm[..., 0, 0, 0, 0] / g1 ** 2,
                       _trim(-4 / (1 + 4 * r1) ** 3, grid), atol=1e-8)
    assert np.allclose(rm[..., 1, 1, 1, 1] / g2 ** 2,
                       _trim(-2 / (1 + 2 * r2) ** 3, grid), atol=1e-8)
    assert curv.symmetry['passed']


def test_metric_derivatives(quartic):
    g = metric_in_w(quartic['potential'])
    first, second = metric_derivatives(g)
    assert sorted(first) == ['g11_w1']
    assert sorted(second) == ['g11_w1wbar1']
    grid = quartic['potential'].grid
    w, = grid.coordinates()
    # g = 1 + 4 w wbar
    assert np.allclose(first['g11_w1'].values, _trim(4 * np.conj(w), grid),
                       atol=1e-10)
    assert np.allclose(second['g11_w1wbar1'].values, 4, atol=1e-8)


def test_metric_positivity():
    grid = box_grid(16, -0.5, 0.5)
    w, = grid.coordinates()
    with pytest.raises(PositivityError) as info:
        metric_in_w(GridField(-np.abs(w) ** 2, grid, 'w1'))
    assert info.value.margin < 0


def test_inversion_conditioning():
    grid = box_grid(8, -0.5, 0.5, n_axes=4)
    G = np.zeros(grid.shape + (2, 2), dtype=np.complex128)
    G[..., 0, 0] = 1.0
    G[..., 1, 1] = 1e-12
    with pytest.raises(ConditioningError):
        riemann(HermitianMatrixField(G, grid))


def test_differentiated_ma_trivial(quartic):
    h = quartic['potential']
    zero = h.with_values(np.zeros(h.grid.shape))
    residual = differentiated_ma_residual(zero, h, 0)
    assert np.max(np.abs(residual.values)) == 0


@pytest.mark.parametrize('delta', [None, 0])
def test_differentiated_ma_manufactured(quartic, delta):
    h = quartic['potential']
    w, = h.grid.coordinates()
    phi = h.with_values(0.1 * np.exp(-np.abs(w) ** 2))
    report = ma_residual_check(phi, h, 0, delta)
    assert report['passed'], report
    assert report['residual'] <= 1e-3


def _ladder(func, beta):
    fields = []
    for grid in polar_ladder(48, 32, 1e-3, depth=3):
        fields.append(GridField(func(grid.z()), grid, 'z', beta))
    return fields


def test_curvature_report_background(disc_background):
    params = ConeParams(0.3, 0.75)
    phi = _ladder(lambda z: np.zeros(z.shape), params.beta)
    report = curvature_holder_report(phi, disc_background, params)
    assert report.verdict == STABLE
    assert report.derivative_verdict == STABLE
    assert sorted(report.norm) == [1, 2, 3]
    shells = [row['shell'] for row in report.shells if row['chart'] == 'w1']
    assert shells == list(range(2, 9))
    inner = [row for row in report.shells if row['shell'] == 8]
    # omega_0 is the flat cone metric next to D
    assert all(row['norm_max'] <= 1e-6 for row in inner)


def test_curvature_report_bump(disc_background):
    params = ConeParams(0.3, 0.75)

    def bump(z):
        t = np.abs(z - 0.5) ** 2 / 0.04
        out = np.zeros(z.shape)
        inside = t < 1
        out[inside] = 1e-4 * np.exp(-1 / (1 - t[inside]))
        return out

    report = curvature_holder_report(_ladder(bump, params.beta),
                                     disc_background, params)
    assert report.verdict == STABLE


def test_curvature_report_negative_control(disc_background):
    # |z|^(2 - 2 beta) pulls back to |w|^(2/3)
    params = ConeParams(0.5, 0.75, strict=False)
    phi = _ladder(lambda z: np.abs(z) ** (2 - 2 * params.beta), params.beta)
    report = curvature_holder_report(phi, disc_background, params)
    assert report.first_derivative_verdict == DIVERGING


def test_z_ladder(disc_background):
    beta = 0.75
    grids = z_ladder(disc_background.geom, beta)
    assert len(grids) == 3
    assert np.isclose(grids[0].rho[0] ** beta, 2.0 ** -9)
    assert grids[0].shape == (112, 64)
    with pytest.raises(StencilError):
        z_ladder(model_geometry('line_bundle_p1'), beta)
