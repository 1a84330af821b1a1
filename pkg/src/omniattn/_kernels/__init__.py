"""Kernel backend selection.

The compiled Cython core is preferred when its extension module built;
otherwise the pure-numpy reference kernel is used. OMNI_BACKEND=python|compiled
forces a choice (requesting the compiled core when it is unavailable is an
error rather than a silent fallback).
"""

import os

from . import pyref

try:
    from . import _core
except ImportError:
    _core = None

_BACKENDS = {"python": pyref}
if _core is not None:
    _BACKENDS["compiled"] = _core


def available_backends():
    """Mapping of backend name -> kernel module, in preference order."""
    return dict(_BACKENDS)


def get_backend(name=None):
    if name is None:
        name = os.environ.get("OMNI_BACKEND")
    if name is None:
        return _core if _core is not None else pyref
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ImportError(
            f"kernel backend {name!r} unavailable; have {sorted(_BACKENDS)}"
        ) from None
