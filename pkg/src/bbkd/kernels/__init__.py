"""Convolution kernel backends.

The compiled Cython core is preferred when it was built; otherwise the
numpy fallback is selected at import time.  Set ``BBKD_PURE_PYTHON=1`` to
force the fallback (used by the kernel benchmark and parity tests).
"""

import os

import numpy as np

if os.environ.get("BBKD_PURE_PYTHON", "") not in ("", "0"):
    from . import _fallback as _impl

    HAVE_EXTENSION = False
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        HAVE_EXTENSION = True
    except ImportError:
        from . import _fallback as _impl  # type: ignore[no-redef]

        HAVE_EXTENSION = False

BACKEND = "compiled" if HAVE_EXTENSION else "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_kernels = _impl.conv2d_grad_kernels


def conv2d_grad_bias(gy: np.ndarray) -> np.ndarray:
    return gy.sum(axis=(1, 2))
