"""Kernel backend selection.

The hot numeric kernels exist twice: numba-compiled loops and a pure-numpy
fallback. The env var ``BSDEGEN_BACKEND`` picks one at import time
("numba" or "numpy"); unset means numba when importable, numpy otherwise.
Matrix products always go through numpy BLAS on both backends since numba
cannot beat it there.

``kernels`` is the module-level selection the engine uses. Benchmarks and
cross-checking tests grab a specific backend via ``get_kernels(name)``.
"""

import os

from . import _kernels_numpy

_BACKENDS = {"numpy": _kernels_numpy}

try:
    from . import _kernels_numba

    _BACKENDS["numba"] = _kernels_numba
    _HAVE_NUMBA = True
except ImportError:
    _HAVE_NUMBA = False


def available_backends():
    return sorted(_BACKENDS)


def get_kernels(name):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"unknown backend {name!r}; available: {available_backends()}"
        ) from None


def _select_default():
    name = os.environ.get("BSDEGEN_BACKEND", "").strip().lower()
    if name:
        if name not in _BACKENDS:
            raise ValueError(
                f"BSDEGEN_BACKEND={name!r} not available; "
                f"choose one of {available_backends()}"
            )
        return name
    return "numba" if _HAVE_NUMBA else "numpy"


ACTIVE_BACKEND = _select_default()
kernels = _BACKENDS[ACTIVE_BACKEND]


def active_backend():
    return ACTIVE_BACKEND
