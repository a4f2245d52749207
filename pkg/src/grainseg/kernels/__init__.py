"""Kernel backend dispatch.

GRAINSEG_BACKEND selects the implementation of the hot numeric kernels:
  auto  (default) - numba if importable, else pure numpy
  numba           - require the jitted kernels
  numpy           - force the pure-numpy path
"""

import os

_requested = os.environ.get("GRAINSEG_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"GRAINSEG_BACKEND must be one of auto|numba|numpy, got {_requested!r}")

if _requested in ("auto", "numba"):
    try:
        from . import numba_impl as _impl
        backend_name = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import numpy_impl as _impl
        backend_name = "numpy"
else:
    from . import numpy_impl as _impl
    backend_name = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_dx = _impl.conv2d_dx
conv2d_dw = _impl.conv2d_dw
convt2d_forward = _impl.convt2d_forward
convt2d_dx = _impl.convt2d_dx
convt2d_dw = _impl.convt2d_dw
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward
