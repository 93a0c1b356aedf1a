"""Backend selection for the hot elementwise kernels.

The compiled extension ``mestlab._kernels`` is used when it was built;
otherwise the numpy fallback in ``mestlab._kernels_py`` is loaded. Setting
``MESTLAB_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("MESTLAB_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # pragma: no cover - depends on the build
        _compiled = None
    else:
        _impl = _compiled
        BACKEND = "cython"


def backends():
    """Return the importable kernel modules keyed by name."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels as compiled
    except ImportError:  # pragma: no cover
        return found
    found["cython"] = compiled
    return found


square_eval = _impl.square_eval
smoothed_huber_eval = _impl.smoothed_huber_eval
pseudo_l1_eval = _impl.pseudo_l1_eval
sup_distance_sorted = _impl.sup_distance_sorted
