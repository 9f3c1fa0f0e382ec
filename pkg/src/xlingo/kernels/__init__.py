"""Hot numeric kernels: compiled core with a NumPy fallback.

The Cython extension ``_fast`` and the reference module ``_ref`` export the
same functions; whichever is importable is selected here, once, at import
time. Set ``XLINGO_KERNELS=ref`` to force the fallback (the benchmark does
this to compare both).
"""

import os

from . import _ref

_NAMES = (
    "lstm_cell_fwd",
    "lstm_cell_bwd",
    "layer_norm_fwd",
    "layer_norm_bwd",
    "adam_update",
    "xoshiro_fill",
)

if os.environ.get("XLINGO_KERNELS", "").lower() in ("ref", "py", "python"):
    _impl = _ref
    BACKEND = "ref"
else:
    try:
        from . import _fast as _impl

        BACKEND = "fast"
    except ImportError:
        _impl = _ref
        BACKEND = "ref"

reference = _ref
compiled = _impl if BACKEND == "fast" else None

lstm_cell_fwd = _impl.lstm_cell_fwd
lstm_cell_bwd = _impl.lstm_cell_bwd
layer_norm_fwd = _impl.layer_norm_fwd
layer_norm_bwd = _impl.layer_norm_bwd
adam_update = _impl.adam_update
xoshiro_fill = _impl.xoshiro_fill

__all__ = list(_NAMES) + ["BACKEND", "reference", "compiled"]
