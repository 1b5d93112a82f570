"""Backend selection for the hot RDP kernel.

The compiled Cython kernel is preferred when present; the NumPy
implementation is a drop-in fallback with identical semantics. Set
``IDPACCT_NO_EXTENSION=1`` to force the fallback (used by the benchmark
and the backend-agreement tests).
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernel_numpy

if os.environ.get("IDPACCT_NO_EXTENSION") == "1":
    _impl = _kernel_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _kernel_cy as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernel_numpy
        BACKEND = "numpy"


def sgm_rdp_matrix(q: float, noise_multipliers, orders) -> np.ndarray:
    """Batched subsampled-Gaussian RDP: one row per noise multiplier, one
    column per integer order. Multipliers must be > 0 (+inf allowed and
    yields zero cost); orders must be integers >= 2."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"sampling probability must be in [0, 1], got {q}")
    sig = np.asarray(noise_multipliers, dtype=np.float64)
    if sig.ndim != 1:
        raise ValueError("noise_multipliers must be one-dimensional")
    if np.any(np.isnan(sig)) or np.any(sig <= 0.0):
        raise ValueError("noise multipliers must be positive (inf allowed)")
    alphas = np.asarray(orders)
    if alphas.ndim != 1:
        raise ValueError("orders must be one-dimensional")
    if not np.issubdtype(alphas.dtype, np.integer):
        if not np.all(alphas == np.floor(alphas)):
            raise ValueError("orders must be integers")
        alphas = alphas.astype(np.int64)
    if np.any(alphas < 2):
        raise ValueError("orders must be >= 2")
    return _impl.sgm_rdp_matrix(float(q), sig, alphas.astype(np.int64))
