"""Kernel backend selection.

The compiled extension is used when it was built and importable; set
``CAGETWIN_PURE_PYTHON=1`` to force the numpy fallback. ``NAME`` reports
which one is active.
"""

import os

from . import _fallback


def _load(pure):
    if not pure:
        try:
            from . import _ckernels
        except ImportError:
            pass
        else:
            return "cython", _ckernels
    return "python", _fallback


NAME, _impl = _load(os.environ.get("CAGETWIN_PURE_PYTHON", "") not in ("", "0"))

weighted_sqdist = _impl.weighted_sqdist
se_ard = _impl.se_ard
edge_forces = _impl.edge_forces
panel_drag = _impl.panel_drag


def get(name):
    """Return the module implementing backend ``name`` ('cython' or 'python')."""
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def available():
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return names
    return ["cython"] + names
