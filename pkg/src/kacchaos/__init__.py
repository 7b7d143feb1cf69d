"""Kac particle systems, the limit Boltzmann equation and chaos diagnostics.

Submodules: ``model`` (states, kernels, collisions), ``kac`` (the jump
process), ``limit`` (spectral solver, moments, particle oracle), ``metrics``
(distances between measures), ``sampling`` (initial data), ``chaos``,
``entropy`` and ``cli``.
"""

__version__ = "0.1.0"

__all__ = ["model", "kac", "limit", "metrics", "sampling", "chaos", "entropy", "cli", "rng"]
