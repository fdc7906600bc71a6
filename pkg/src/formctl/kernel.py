"""Backend selection for the closed-loop kernel.

The compiled extension is used when it imports; set ``FORMCTL_PURE_PYTHON=1``
to force the NumPy implementation.
"""
from __future__ import annotations

import logging
import os

from . import _pykernel
from ._pykernel import MODE_ABSOLUTE, MODE_RELATIVE, MODE_STATE, STATUS_BLOWUP, STATUS_OK

log = logging.getLogger(__name__)

PythonClosedLoop = _pykernel.ClosedLoop

try:
    from ._ckernel import ClosedLoop as CompiledClosedLoop
except ImportError:  # extension not built
    CompiledClosedLoop = None


def _select():
    if os.environ.get("FORMCTL_PURE_PYTHON", "").strip() not in ("", "0"):
        return PythonClosedLoop
    if CompiledClosedLoop is None:
        log.debug("compiled kernel unavailable; using the NumPy fallback")
        return PythonClosedLoop
    return CompiledClosedLoop


ClosedLoop = _select()
BACKEND = ClosedLoop.backend

__all__ = [
    "ClosedLoop", "PythonClosedLoop", "CompiledClosedLoop", "BACKEND",
    "MODE_ABSOLUTE", "MODE_RELATIVE", "MODE_STATE", "STATUS_OK", "STATUS_BLOWUP",
]
