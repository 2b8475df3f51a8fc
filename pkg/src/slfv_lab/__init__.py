"""Numerical laboratory for the spatial Lambda-Fleming-Viot process in a random environment.

Submodules: ``torus`` (grids, fields, Fourier multipliers), ``besov`` (Littlewood-Paley
blocks, paraproducts), ``environment`` (quenched selection fields, ``c_n``),
``hamiltonian`` (matrix-free Anderson operator), ``slfv`` (event-driven simulator),
``limits`` (dual equation, Fisher-KPP), ``config``/``harness``/``verify``/``cli``.
"""
__version__ = "0.1.0"
