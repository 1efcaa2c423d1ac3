"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``NCFV_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy fallback is used. ``BACKEND`` names the active choice.
"""

import os

from . import _kernels_py

_force_py = os.environ.get("NCFV_PURE_PYTHON", "") not in ("", "0")

if _force_py:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

displacement_weight = _impl.displacement_weight
displacement_weight_sq_sum = _impl.displacement_weight_sq_sum
kubo_denominator = _impl.kubo_denominator
scatter_add_blocks = _impl.scatter_add_blocks
chain_lyapunov = _impl.chain_lyapunov

__all__ = [
    "BACKEND",
    "displacement_weight",
    "displacement_weight_sq_sum",
    "kubo_denominator",
    "scatter_add_blocks",
    "chain_lyapunov",
]
