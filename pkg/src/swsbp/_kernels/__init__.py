"""Execution backend selection.

The compiled Cython kernel is used when it was built; otherwise the numpy
twin takes over.  Set ``SWSBP_BACKEND=python`` or ``SWSBP_BACKEND=compiled``
to force a choice (forcing the compiled backend raises if it is missing).
"""

import os

from . import _sbp_py
from .plan import ChainPlan

_FORCED = os.environ.get("SWSBP_BACKEND", "").strip().lower()
if _FORCED not in ("", "python", "compiled"):
    raise RuntimeError(
        f"SWSBP_BACKEND must be 'python' or 'compiled', got {_FORCED!r}"
    )

if _FORCED == "python":
    _impl = _sbp_py
    _BACKEND = "python"
else:
    try:
        from . import _sbp as _impl  # type: ignore[attr-defined]

        _BACKEND = "compiled"
    except ImportError:
        if _FORCED == "compiled":
            raise
        _impl = _sbp_py
        _BACKEND = "python"


def execute(plan, tolerance, max_sweeps):
    return _impl.execute(plan, tolerance, max_sweeps)


def backend_name() -> str:
    return _BACKEND


__all__ = ["ChainPlan", "execute", "backend_name"]
