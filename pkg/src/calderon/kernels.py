"""Kernel selection.

The compiled extension :mod:`calderon._kernels` is used when it imports;
otherwise, or when ``CALDERON_PURE_PYTHON=1``, the numpy versions from
:mod:`calderon._kernels_py` are used.  ``BACKEND`` names the active one.
"""

import os

from . import _kernels_py

_impl = _kernels_py
BACKEND = "python"
if os.environ.get("CALDERON_PURE_PYTHON", "0") != "1":
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _kernels_py

geodesic_march = _impl.geodesic_march
shoot_conformal = _impl.shoot_conformal
polar_interp = _impl.polar_interp
backproject = _impl.backproject

__all__ = ["BACKEND", "geodesic_march", "shoot_conformal", "polar_interp", "backproject"]
