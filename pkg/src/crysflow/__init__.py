"""Flow matching for crystal structures from a learned, finite-precision base.

Fractional coordinates live on the flat torus and lattice parameters on a
bounded Euclidean space. A velocity field is trained to carry samples from a
base distribution (a quantized empirical fit, an uninformed fit, or samples
ingested from an external generator) to the data distribution.
"""

from .crystal import Crystal, LatticeParams

__version__ = "0.1.0"

__all__ = ["Crystal", "LatticeParams", "__version__"]
