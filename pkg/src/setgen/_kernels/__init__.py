"""Kernel backend selection.

The compiled Cython kernels are preferred when present; the pure-Python
twin is the fallback. Set ``SETGEN_PURE_PYTHON=1`` to force the fallback.
Both backends are semantically identical (same scan order, same ties).
"""

import os

from . import matching_py

if os.environ.get("SETGEN_PURE_PYTHON", "") == "1":
    _impl = matching_py
else:
    try:
        from . import matching_cy as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = matching_py

BACKEND = _impl.BACKEND
solve_assignment = _impl.solve_assignment
solve_transport = _impl.solve_transport

__all__ = ["BACKEND", "solve_assignment", "solve_transport", "matching_py"]
