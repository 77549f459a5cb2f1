"""Hot-kernel backend selection.

The compiled Cython core is used when it has been built; otherwise the
vectorized numpy fallback takes over. ``FGHASH_KERNELS`` forces a backend:
``numpy``, ``cython``, or ``auto`` (default).
"""

import os

from . import _numpy

_requested = os.environ.get("FGHASH_KERNELS", "auto").lower()
if _requested not in ("auto", "numpy", "cython"):
    raise ValueError(f"FGHASH_KERNELS must be auto, numpy or cython, got {_requested!r}")

_core = None
if _requested in ("auto", "cython"):
    try:
        from . import _core  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "FGHASH_KERNELS=cython but the compiled core is not built; "
                "run `python3 setup.py build_ext --inplace`"
            ) from None

_impl = _core if _core is not None else _numpy
BACKEND = "cython" if _core is not None else "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
hamming_distances = _impl.hamming_distances


def available_backends() -> dict:
    """Importable backend modules keyed by name (for tests and benchmarks)."""
    out = {"numpy": _numpy}
    try:
        from . import _core as core_mod  # noqa: F811
    except ImportError:
        return out
    out["cython"] = core_mod
    return out
