"""NumPy implementations of the hot kernels.

These are the reference semantics; the compiled extension in ``_core.pyx``
must agree with them to floating-point roundoff.
"""

import numpy as np


def logsumexp_last(x: np.ndarray) -> np.ndarray:
    """log(sum(exp(x))) over the last axis, max-shifted for stability."""
    m = np.max(x, axis=-1, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True)))[..., 0]


def softmax_last(x: np.ndarray) -> np.ndarray:
    """softmax over the last axis, max-shifted for stability."""
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def sinkhorn_duals(
    s_reg: np.ndarray,
    log_a: np.ndarray,
    log_b: np.ndarray,
    n_iters: int,
    tol: float,
) -> tuple[np.ndarray, np.ndarray, int, float]:
    """Alternating log-domain scaling of an affinity matrix.

    Returns (u, v, iterations_run, max_marginal_violation).  Stops early
    once both marginals of exp(s_reg + u + v) are within `tol` of
    exp(log_a) / exp(log_b) in max norm.
    """
    a = np.exp(log_a)
    b = np.exp(log_b)
    v = np.zeros_like(log_b)
    u = np.zeros_like(log_a)
    violation = np.inf
    it = 0
    for it in range(1, n_iters + 1):
        u = log_a - logsumexp_last(s_reg + v[None, :])
        v = log_b - logsumexp_last((s_reg + u[:, None]).T)
        plan = np.exp(s_reg + u[:, None] + v[None, :])
        violation = max(
            float(np.max(np.abs(plan.sum(axis=1) - a))),
            float(np.max(np.abs(plan.sum(axis=0) - b))),
        )
        if violation < tol:
            break
    return u, v, it, violation
