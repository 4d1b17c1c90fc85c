"""Kernel backend selection.

The hot matrix kernels come in two flavours: numba-JIT (default, fast) and
pure numpy (portable reference). Pick one with the ``CONDNET_BACKEND``
environment variable (``numba`` or ``numpy``) or at runtime via
:func:`set_backend`. Both produce bit-identical results.
"""

import os

BACKEND_ENV = "CONDNET_BACKEND"
_VALID = ("numba", "numpy")

_backend = None
_impl = None


def _load(name):
    if name == "numba":
        from condnet import _kernels_numba as impl
    else:
        from condnet import _kernels_numpy as impl
    return impl


def _default_backend():
    requested = os.environ.get(BACKEND_ENV, "").strip().lower()
    if requested:
        if requested not in _VALID:
            raise ValueError(
                f"{BACKEND_ENV}={requested!r}: expected one of {_VALID}"
            )
        return requested
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        return "numpy"


def set_backend(name):
    """Select the kernel backend (``numba`` or ``numpy``) for this process."""
    global _backend, _impl
    if name not in _VALID:
        raise ValueError(f"unknown backend {name!r}: expected one of {_VALID}")
    _impl = _load(name)
    _backend = name


def active_backend():
    """Name of the backend currently in use (resolving the default lazily)."""
    if _backend is None:
        set_backend(_default_backend())
    return _backend


def get_impl():
    if _impl is None:
        set_backend(_default_backend())
    return _impl
