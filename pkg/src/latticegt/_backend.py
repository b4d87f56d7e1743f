"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy twin.
Set ``LATTICEGT_BACKEND=python`` to force the fallback.
"""

import contextlib
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels


def available():
    return sorted(_BACKENDS)


def _pick(name):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available()}") from None


K = _pick(os.environ.get("LATTICEGT_BACKEND") or ("compiled" if _ckernels else "python"))


def current():
    return K.BACKEND


def set_backend(name):
    global K
    K = _pick(name)


@contextlib.contextmanager
def using(name):
    global K
    previous = K
    K = _pick(name)
    try:
        yield K
    finally:
        K = previous
