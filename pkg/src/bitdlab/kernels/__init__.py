"""Training-loop backends.

The compiled extension is used when it imports; otherwise the pure-Python
reference loop is selected.  Setting ``BITDLAB_PURE=1`` forces the fallback.
"""
import os

from . import _pykernel

try:
    if os.environ.get("BITDLAB_PURE", "") == "1":
        raise ImportError("pure backend requested")
    from . import _ckernel
except ImportError:
    _ckernel = None

BACKEND = "compiled" if _ckernel is not None else "python"
train_run = (_ckernel or _pykernel).train_run
train_run_python = _pykernel.train_run
train_run_compiled = _ckernel.train_run if _ckernel is not None else None
