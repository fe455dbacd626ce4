"""Map query bank decoding for online HD map generation.

A spatially-indexed bank of learnable query embeddings, SD-map-prior query
initialization, point-level cross-attention decoding, and an SD-map
defect-scanning and rectification toolchain, all at desk scale.
"""

from ._kernels import COMPILED as KERNELS_COMPILED

__version__ = "0.1.0"
__all__ = ["KERNELS_COMPILED", "__version__"]
