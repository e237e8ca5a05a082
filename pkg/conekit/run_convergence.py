"""Measure the convergence orders of the Poisson solver and the curvature
pipeline."""
import numpy as np
import pandas as pd
from conekit.cone_poisson import (convergence_orders, manufactured_cases,
                                  solve_case)
from conekit.config import PoissonConfig
from conekit.curvature import metric_in_w, riemann
from conekit.grid import GridField, box_grid

COLUMNS = ['case', 'beta', 'level', 'n', 'error', 'order']


def run_poisson_convergence(betas=(0.5, 0.75), n_sigmas=None, config=None):
    """Errors of the manufactured disc problems as n_sigma varies."""

    config = config or PoissonConfig()
    if n_sigmas is None:
        n_sigmas = config.n_sigma

    return _measure_cases(_cases(betas), list(n_sigmas), config)


def run_curvature_convergence(sizes=(13, 17, 25, 33)):
    """Errors of Rm for the Fubini-Study potential log(1 + |w|^2), whose
    Gaussian curvature is 2, as the w-box is refined.
    """

    errors = [_curvature_error(n) for n in sizes]
    return _table({'name': 'fubini_study', 'beta': np.nan}, list(sizes),
                  errors)


def _cases(betas):
    """Return a list of manufactured cases to be measured."""
    return [{'name': name, 'beta': beta}
            for beta in betas for name in sorted(manufactured_cases(beta))]


def _make_case(case, n_sigma, config):
    """Solve a case at one resolution; returns (solution, exact)."""
    return solve_case(case['name'], case['beta'], n_sigma, config)


def _measure_cases(cases, n_sigmas, config):
    """Loop over cases and collect the max-norm errors in a dataframe."""
    tables = []
    for case in cases:
        errors = []
        for n_sigma in n_sigmas:
            v, exact = _make_case(case, n_sigma, config)
            errors.append(float(np.max(np.abs(v.values - exact.values))))
        tables.append(_table(case, n_sigmas, errors))
    return pd.concat(tables, ignore_index=True)


def _table(case, sizes, errors):
    orders = [np.nan] + convergence_orders(errors, sizes)
    return pd.DataFrame({'case': case['name'], 'beta': case['beta'],
                         'level': range(len(sizes)), 'n': sizes,
                         'error': errors, 'order': orders}, columns=COLUMNS)


def _curvature_error(n):
    grid = box_grid(n, -0.5, 0.5)
    w, = grid.coordinates()
    r2 = np.abs(w) ** 2
    curv = riemann(metric_in_w(GridField(np.log1p(r2), grid, 'w1')))
    _, slices = grid.trim(4)
    g = 1 / (1 + r2[slices]) ** 2
    return float(np.max(np.abs(np.real(curv.rm[..., 0, 0, 0, 0]) / g ** 2
                               - 2)))


if __name__ == '__main__':
    print(run_poisson_convergence())
    print(run_curvature_convergence())
