"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is imported. Set ``EDHKD_PURE_PYTHON=1`` to force the fallback.
"""
import os

from edhkd import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("EDHKD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from edhkd import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass

bn_train_forward = _impl.bn_train_forward
bn_backward = _impl.bn_backward
relu6_forward = _impl.relu6_forward
relu6_backward = _impl.relu6_backward
levinson_durbin = _impl.levinson_durbin
bn_relu6_forward = _impl.bn_relu6_forward
bn_relu6_backward = _impl.bn_relu6_backward


def available_backends():
    out = {"python": _pykernels}
    try:
        from edhkd import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune_allocator(threshold=1 << 30):
    """Keep large temporaries on the glibc heap instead of fresh mmap pages.

    Training allocates multi-megabyte activations every step; served by mmap,
    each one is page-faulted in and unmapped again, which costs more than the
    arithmetic. Raising the mmap and trim thresholds lets freed blocks be
    reused. Returns False where glibc's ``mallopt`` is unavailable or
    ``EDHKD_DEFAULT_MALLOC=1`` is set.
    """
    if os.environ.get("EDHKD_DEFAULT_MALLOC", "") in ("1", "true", "yes"):
        return False
    try:
        import ctypes
        libc = ctypes.CDLL("libc.so.6")
        return bool(libc.mallopt(_M_MMAP_THRESHOLD, threshold)) and bool(libc.mallopt(_M_TRIM_THRESHOLD, threshold))
    except (OSError, AttributeError):
        return False
