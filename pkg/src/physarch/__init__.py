"""Differentiable architecture search with physical priors.

The package bundles a small reverse-mode autodiff engine, two simulated
physics tasks with analytic priors, five physics-based-learning baselines,
a searchable supernet with an alternating bilevel optimizer, and a benchmark
harness exposed through the ``physarch`` command line tool.
"""

__version__ = "0.1.0"
