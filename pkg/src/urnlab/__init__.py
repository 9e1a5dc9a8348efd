"""Numerical laboratory for the infinite-color Polya urn driven by a lattice random walk."""
from .increments import IncrementDistribution, from_spec, preset, resolve
from .urn_core import LatticePmf, UrnState, exact_pmf

__all__ = ["IncrementDistribution", "LatticePmf", "UrnState", "exact_pmf", "from_spec", "preset", "resolve"]
__version__ = "0.1.0"
