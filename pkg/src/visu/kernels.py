"""Backend selection for the hot kernels.

The compiled extension is preferred; set ``VISU_PURE_PYTHON=1`` to force the
numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("VISU_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

cua_kernel = _impl.cua_kernel
cc_kernel = _impl.cc_kernel
raster_segments = _impl.raster_segments


def backends():
    """Map of every importable backend name to its module."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["compiled"] = _kernels
    except ImportError:
        pass
    return out
