"""Backend selection for the allocator kernels.

The compiled extension is used when importable; set ``VEDGEFL_PURE=1`` to
force the numpy fallback.
"""
import os

from . import _fallback
from ._fallback import SCA_GAP, SCA_INFEASIBLE, SCA_MAXITER, SCA_OK

BACKEND = "python"
_impl = _fallback
if os.environ.get("VEDGEFL_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback

dual_ascent = _impl.dual_ascent
sca_power = _impl.sca_power
solve_price = _impl.solve_price

__all__ = ["BACKEND", "dual_ascent", "sca_power", "solve_price",
           "SCA_OK", "SCA_INFEASIBLE", "SCA_GAP", "SCA_MAXITER"]
