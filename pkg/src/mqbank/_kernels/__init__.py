"""Hot numeric kernels: compiled Cython core with a pure-numpy fallback.

Set ``MQBANK_PURE=1`` to force the fallback (e.g. for benchmarking).
"""

import os

from . import _pure

if os.environ.get("MQBANK_PURE") == "1":
    _impl = _pure
    COMPILED = False
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
        COMPILED = True
    except ImportError:
        _impl = _pure
        COMPILED = False

nearest_dists = _impl.nearest_dists
bilinear_forward = _impl.bilinear_forward
bilinear_backward = _impl.bilinear_backward
gather_cells = _impl.gather_cells
scatter_add_cells = _impl.scatter_add_cells
neighborhood_gather = _impl.neighborhood_gather
equal_points_costs = _impl.equal_points_costs

# ordering decode is cheap bookkeeping; one implementation is enough
apply_ordering = _pure.apply_ordering

__all__ = [
    "COMPILED", "nearest_dists", "bilinear_forward", "bilinear_backward",
    "gather_cells", "scatter_add_cells", "neighborhood_gather",
    "equal_points_costs", "apply_ordering",
]
