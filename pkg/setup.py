#!/usr/bin/env python
from setuptools import setup

setup(name='conekit',
      version='0.0.1',
      description='Numerical checks for conic Kahler metrics',
      packages=['conekit'],
      install_requires=['numpy', 'scipy', 'pandas', 'torch', 'pyyaml',
                        'click'],
      extras_require={'test': ['pytest']},
      entry_points={'console_scripts': ['conekit=conekit.cli:main']})
