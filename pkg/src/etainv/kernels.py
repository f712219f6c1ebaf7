"""Backend selection for the hot loops.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy fallback.  ``ETAINV_KERNELS=python`` forces the fallback.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("ETAINV_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def _flat(a):
    return np.ascontiguousarray(a, dtype=np.float64).reshape(-1)


def ddim_update(x, eps, sigma, noise, a: float, c_prev: float, b_t: float, impl=None):
    """``(a*x + (sqrt(max(c_prev - sigma^2, 0)) - a*b_t) * eps) + sigma * noise``, elementwise.

    ``sigma`` may be a scalar or a field shaped like ``x``; ``noise`` may be None.
    """
    impl = impl or _impl
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), x.shape)
    out = impl.ddim_update(
        _flat(x), _flat(eps), _flat(sig), None if noise is None else _flat(noise), float(a), float(c_prev), float(b_t)
    )
    return np.asarray(out).reshape(x.shape) if n else x.copy()


def candidate_sq_gaps(residual, sigma, cands, impl=None):
    """Squared Euclidean gaps ``||residual - sigma * cands[k]||^2`` for each candidate row."""
    impl = impl or _impl
    r = _flat(residual)
    sig = _flat(np.broadcast_to(np.asarray(sigma, dtype=np.float64), np.shape(residual)))
    c = np.ascontiguousarray(cands, dtype=np.float64).reshape(-1, r.size)
    return np.asarray(impl.candidate_sq_gaps(r, sig, c))
