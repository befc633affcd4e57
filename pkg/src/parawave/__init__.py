"""Spectral toolkit for gravity-capillary water waves on the two-torus.

Submodules: ``grid`` (truncated Fourier fields), ``paracalc`` (Bony-Weyl
symbols and operators), ``resonance`` (dispersion and three-wave divisors),
``dirichlet_neumann`` (DN operator and paralinearization), ``normal_form``
(quasi-resonant normal form, blocks, energies), ``simulator`` (time
integration and experiments) and ``cli``.
"""

__version__ = "0.1.0"
