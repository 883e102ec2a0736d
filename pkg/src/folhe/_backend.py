"""Select the compiled kernel module if it was built, else the numpy fallback.

Set ``FOLHE_BACKEND=numpy`` to force the fallback.
"""

import os

if os.environ.get("FOLHE_BACKEND", "").lower() == "numpy":
    from . import _core_py as core
else:
    try:
        from . import _core as core
    except ImportError:
        from . import _core_py as core

BACKEND = core.BACKEND
eigh_batch = core.eigh_batch


def fft_workers():
    """Worker count for FFTs, capped by ``FOLHE_THREADS`` (default 1)."""
    raw = os.environ.get("FOLHE_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
