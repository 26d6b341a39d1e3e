"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def project_simplex_columns(V):
    V = np.asarray(V, dtype=float)
    p = V.shape[0]
    y = -np.sort(-V, axis=0, kind="stable")
    css = np.cumsum(y, axis=0) - 1.0
    k = np.arange(1, p + 1, dtype=float)[:, None]
    cond = css / k < y
    # largest k with the condition; row 0 always satisfies it
    K = p - np.argmax(cond[::-1], axis=0)
    tau = css[K - 1, np.arange(V.shape[1])] / K
    return np.maximum(V - tau, 0.0)


def woodbury_combine(Chat, D, power, lambdas, d_total):
    """Solve ``(lam I + (1/d_total) conj(delta) delta^T) u = c`` per aliasing group.

    ``Chat`` has shape ``(p, d, m1, d, m2)``; ``D`` is ``(d, m1, d, m2)`` and
    ``power`` is ``sum |D|^2`` over the aliasing axes, shape ``(m1, m2)``.
    """
    lam = np.asarray(lambdas, dtype=float)
    s = np.einsum("aibj,laibj->lij", D, Chat)
    w = s / (lam[:, None, None] * d_total + power)
    return (Chat - np.conj(D)[None] * w[:, None, :, None, :]) / lam[:, None, None, None, None]
