"""Configuration: named defaults for every tolerance, overridable from YAML."""
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
import yaml

from conekit.exceptions import ConfigError

logger = logging.getLogger(__name__)

EXPERIMENTS = ('flattening', 'phi_bound', 'phase_lemma', 'poisson', 'expansion',
               'm_eta', 'background', 'volume', 'ricci', 'curvature',
               'negative_control')

# integer refinement ladders, strictly increasing
LADDERS = (('grid', 'levels'), ('poisson', 'n_sigma'), ('poisson', 'ladder'),
           ('background', 'k_ladder'))


@dataclass
class GridConfig:
    rho_min: float = 1e-4
    rho_max: float = 1.0
    n_theta: int = 32
    levels: List[int] = field(default_factory=lambda: [32, 64, 128])


@dataclass
class HolderConfig:
    pair_budget: int = 100000
    exhaustive_points: int = 10000
    growth_factor: float = 1.5
    vanishing_factor: float = 10.0
    noise_floor: float = 1e-8
    chunk: int = 512


@dataclass
class PoissonConfig:
    rho_min: float = 1e-6
    n_sigma: List[int] = field(default_factory=lambda: [64, 128, 256])
    n_theta: int = 16
    tolerance: float = 1e-9
    damping: float = 0.5
    max_iter: int = 200
    fit_tolerance: float = 0.05
    ladder: List[int] = field(default_factory=lambda: list(range(3, 13)))
    max_growth: float = 2.0


@dataclass
class GlueConfig:
    eta: float = 1.0
    nodes: int = 64
    chunk: int = 256
    tolerance: float = 1e-10
    fd_step: float = 1e-4


@dataclass
class BackgroundConfig:
    eta_ladder: List[float] = field(
        default_factory=lambda: [2.0 ** -j for j in range(11)])
    sup_s2: float = float(np.exp(-2.0))
    k_ladder: List[int] = field(default_factory=lambda: [1, 2, 4, 8])
    beta_ladder: List[float] = field(default_factory=lambda: [0.4, 0.6, 0.75])
    flush_h: float = 1.0 / 745.0
    n_radial: int = 512
    n_base: int = 32
    s2_min: float = 1e-12
    k_bundle: int = 1
    gluing_tolerance: float = 1e-10
    variance_tolerance: float = 1e-10
    r_squared: float = 0.99
    condition_cap: float = 1e10
    truncation_factor: float = 10.0
    truncation_floor: float = 1e-9


@dataclass
class CurvatureConfig:
    shells: List[int] = field(default_factory=lambda: [2, 8])
    n_rho_per_shell: int = 16
    n_theta: int = 64
    symmetry_factor: float = 10.0
    truncation_floor: float = 1e-9
    inversion_floor: float = 1e-10


@dataclass
class HarnessConfig:
    seed: int = 0
    output_dir: str = 'conekit-out'
    experiments: List[str] = field(default_factory=lambda: list(EXPERIMENTS))
    expected_fail: List[str] = field(
        default_factory=lambda: ['negative_control'])
    precision: int = 12


@dataclass
class Config:
    grid: GridConfig = field(default_factory=GridConfig)
    holder: HolderConfig = field(default_factory=HolderConfig)
    poisson: PoissonConfig = field(default_factory=PoissonConfig)
    glue: GlueConfig = field(default_factory=GlueConfig)
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    curvature: CurvatureConfig = field(default_factory=CurvatureConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)


def default_config():
    """Return the default configuration."""
    return Config()


def from_dict(data):
    """Build a Config from nested dicts, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError('configuration must be a mapping, got {}'
                          .format(type(data).__name__))
    config = Config()
    for section, values in data.items():
        if not hasattr(config, section):
            raise ConfigError('unknown config section: {}'.format(section))
        target = getattr(config, section)
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError('section {} must be a mapping'.format(section))
        known = {f.name for f in dataclasses.fields(target)}
        for key, value in values.items():
            if key not in known:
                raise ConfigError('unknown key {}.{}'.format(section, key))
            setattr(target, key, value)
    for section, key in LADDERS:
        _check_ladder(section, key, getattr(getattr(config, section), key))
    return config


def _check_ladder(section, key, values):
    if (not isinstance(values, list) or not values
            or not all(isinstance(v, int) and not isinstance(v, bool)
                       for v in values)):
        raise ConfigError('{}.{} must be a non-empty list of integers'
                          .format(section, key))
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError('{}.{} must be strictly increasing, got {}'
                          .format(section, key, values))


def load_config(path):
    """Read a YAML config file."""
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError('cannot read config {}: {}'.format(path, e))
    logger.info('loaded config from %s', path)
    return from_dict(data)


def to_dict(config):
    """Plain nested dict of a Config (for reports and dumping)."""
    return dataclasses.asdict(config)


def dump_config(config, path):
    """Write a Config as YAML."""
    with open(path, 'w') as f:
        yaml.safe_dump(to_dict(config), f, sort_keys=False)
