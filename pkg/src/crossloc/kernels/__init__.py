"""Hot numerical kernels with a compiled core and a NumPy fallback.

The compiled Cython extension (``crossloc.kernels._core``) is used when it
was built and the environment variable ``CROSSLOC_PURE`` is not set to a
truthy value; otherwise the NumPy implementations in ``_numpy`` serve as a
drop-in replacement.  ``backend_name()`` reports which one is active.
"""

import os

import numpy as np

from . import _numpy

_PURE = os.environ.get("CROSSLOC_PURE", "").lower() in ("1", "true", "yes")
if _PURE:
    _core = None
else:
    try:
        from . import _core  # compiled extension, absent on pure installs
    except ImportError:
        _core = None


def backend_name() -> str:
    return "compiled" if _core is not None else "numpy"


def logsumexp_last(x: np.ndarray) -> np.ndarray:
    """log(sum(exp)) over the last axis of a float64 array."""
    if _core is not None and x.dtype == np.float64:
        flat = np.ascontiguousarray(x.reshape(-1, x.shape[-1]))
        return _core.logsumexp_2d(flat).reshape(x.shape[:-1])
    return _numpy.logsumexp_last(x)


def softmax_last(x: np.ndarray) -> np.ndarray:
    """softmax over the last axis of a float64 array."""
    if _core is not None and x.dtype == np.float64:
        flat = np.ascontiguousarray(x.reshape(-1, x.shape[-1]))
        return _core.softmax_2d(flat).reshape(x.shape)
    return _numpy.softmax_last(x)


def sinkhorn_duals(
    s_reg: np.ndarray,
    log_a: np.ndarray,
    log_b: np.ndarray,
    n_iters: int,
    tol: float,
) -> tuple[np.ndarray, np.ndarray, int, float]:
    """Fused alternating dual update loop; see `_numpy.sinkhorn_duals`."""
    if _core is not None and s_reg.dtype == np.float64:
        u, v, it, violation = _core.sinkhorn_duals(
            np.ascontiguousarray(s_reg),
            np.ascontiguousarray(log_a),
            np.ascontiguousarray(log_b),
            int(n_iters),
            float(tol),
        )
        return u, v, it, violation
    return _numpy.sinkhorn_duals(s_reg, log_a, log_b, n_iters, tol)
