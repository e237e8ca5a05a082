"""Numerical toolkit for conic Kahler metrics: singular charts, weighted
Holder classes, the model cone Poisson problem, regularized-max gluing,
background metrics and curvature regularity checks.
"""
__version__ = '0.0.1'
