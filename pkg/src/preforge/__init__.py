"""Finding, verifying and physically realizing jump ensembles of Markovian
open quantum systems via invariant-subspace and Wigner-symmetry reductions."""

__version__ = "0.1.0"
