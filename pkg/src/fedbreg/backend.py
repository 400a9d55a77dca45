"""Kernel backend selection.

The environment variable FEDBREG_BACKEND picks the gradient kernel
implementation at import time:

    auto   (default) numba if it imports, else the numpy fallback
    numba  require the numba kernels, error if unavailable
    numpy  force the pure-numpy kernels

``ACTIVE`` records which pair won.  Everything downstream calls
``mclr_grad`` / ``dnn_grad`` from here and never imports the kernel modules
directly, so one process runs exactly one backend (determinism within a run).
"""

from __future__ import annotations

import os

_CHOICES = ("auto", "numba", "numpy")
_requested = os.environ.get("FEDBREG_BACKEND", "auto").strip().lower()
if _requested not in _CHOICES:
    raise ValueError(
        f"FEDBREG_BACKEND={_requested!r} is not valid; expected one of {_CHOICES}"
    )

if _requested == "numpy":
    from . import _kernels_numpy as _impl

    ACTIVE = "numpy"
else:
    try:
        from . import _kernels_numba as _impl

        ACTIVE = "numba"
    except Exception as _err:  # numba missing or failed to initialize
        if _requested == "numba":
            raise RuntimeError(f"FEDBREG_BACKEND=numba but numba kernels failed to load: {_err}")
        from . import _kernels_numpy as _impl

        ACTIVE = "numpy"

mclr_grad = _impl.mclr_grad
dnn_grad = _impl.dnn_grad
