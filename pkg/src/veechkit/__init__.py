"""Rauzy-Veech induction, zippered rectangles and transfer-operator numerics.

The package is organised by layer:

* :mod:`veechkit.rauzy` -- permutations, Rauzy operations, classes, paths.
* :mod:`veechkit.cocycle` -- the linear action ``B_gamma``, positivity,
  the antisymmetric form, suspension cones and the Hilbert metric.
* :mod:`veechkit.cones` -- exact extreme-ray computation for rational cones.
* :mod:`veechkit.induction` -- interval exchanges, Rauzy induction, the
  Veech flow and the precompact-section return map.
* :mod:`veechkit.measure` -- exact path-measure calculus.
* :mod:`veechkit.spectral` -- Markov map specs and transfer operators.
* :mod:`veechkit.montecarlo` -- seeded Monte-Carlo drivers (tails,
  return counts, correlations).
* :mod:`veechkit.kernels` -- hot loops, numba-compiled when available.
"""

__version__ = "0.1.0"

from .rauzy import (
    Alphabet,
    Arrow,
    Path,
    Permutation,
    RauzyClass,
    enumerate_paths,
    is_irreducible,
    parse_path,
    parse_permutation,
    path_order,
    rauzy_class,
    symmetric_permutation,
)

__all__ = [
    "Alphabet",
    "Arrow",
    "Path",
    "Permutation",
    "RauzyClass",
    "enumerate_paths",
    "is_irreducible",
    "parse_path",
    "parse_permutation",
    "path_order",
    "rauzy_class",
    "symmetric_permutation",
    "__version__",
]
