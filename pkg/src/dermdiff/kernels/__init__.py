"""Hot convolution kernels with backend selection at import time.

Two interchangeable implementations of the conv2d forward/backward triple:

* ``_convext`` — Cython extension (fused im2col + BLAS GEMM), the default
  when the package was built with its extension;
* ``_convnumpy`` — sliding-window numpy fallback, always available.

``DERMDIFF_KERNELS`` overrides the choice: ``auto`` (default), ``ext``
(fail if the extension is missing), or ``numpy``.  ``BACKEND`` records
what was picked.  ``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from . import _convnumpy

_choice = os.environ.get("DERMDIFF_KERNELS", "auto").lower()
if _choice not in ("auto", "ext", "numpy"):
    raise ValueError(f"DERMDIFF_KERNELS must be auto|ext|numpy, got {_choice!r}")

_impl = None
if _choice in ("auto", "ext"):
    try:
        from . import _convext as _impl
    except ImportError:
        if _choice == "ext":
            raise
        _impl = None

if _impl is not None:
    BACKEND = "ext"
    conv2d_fwd = _impl.conv2d_fwd
    conv2d_bwd_w = _impl.conv2d_bwd_w
    conv2d_bwd_x = _impl.conv2d_bwd_x
else:
    BACKEND = "numpy"
    conv2d_fwd = _convnumpy.conv2d_fwd
    conv2d_bwd_w = _convnumpy.conv2d_bwd_w
    conv2d_bwd_x = _convnumpy.conv2d_bwd_x
