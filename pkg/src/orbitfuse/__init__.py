"""Symbolic-scale unsupervised state estimation for Orbits N-body scenes.

Submodules: :mod:`dynamics` (the integrated dynamics), :mod:`camera` (the
observation channel), :mod:`nnkit` (autodiff and layers), :mod:`codec`
(symbolic/latent codecs and losses), :mod:`estimator` (gain fusion, burn-in,
rollout, training) and :mod:`harness` (datasets, metrics, experiments, CLI).
"""
__version__ = "0.1.0"
