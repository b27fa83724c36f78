"""Matrix-exponential block identities for linear-SDE moments.

All helpers use augmented block matrices and a single ``expm`` call rather
than eigendecompositions, so they stay exact for defective matrices.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

__all__ = [
    "exact_affine_transition",
    "ou_covariance_integral",
    "integral_of_expm_columns",
]


def exact_affine_transition(A: np.ndarray, c: np.ndarray, Q: np.ndarray,
                            h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact one-step moments of ``dY = (A Y + c) dt + dW``, Cov rate Q.

    Returns ``(F, g, V)`` with ``Y(t+h) | Y(t) ~ N(F Y(t) + g, V)``.
    """
    n = A.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n] = c
    E = expm(M * h)
    F = E[:n, :n]
    g = E[:n, n]
    V = ou_covariance_integral(-A, Q, h)
    return F, g, V


def ou_covariance_integral(K: np.ndarray, Q: np.ndarray, h: float) -> np.ndarray:
    """``int_0^h exp(-K u) Q exp(-K' u) du`` by the block-triangular trick.

    With ``M = [[K, Q], [0, -K']]`` the exponential's upper-right block is
    ``int_0^h exp(K (h-s)) Q exp(-K' s) ds`` and its lower-right block is
    ``exp(-K' h)``; transposing the latter onto the former telescopes the
    left factor into ``exp(-K u)``.
    """
    n = K.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = K
    M[:n, n:] = Q
    M[n:, n:] = -K.T
    E = expm(M * h)
    out = E[n:, n:].T @ E[:n, n:]
    return 0.5 * (out + out.T)


def integral_of_expm_columns(M: np.ndarray, C: np.ndarray, h: float) -> np.ndarray:
    """``int_0^h exp(-M u) C du`` without inverting M.

    Augment ``[[-M, C], [0, 0]]``: the upper-right block of its exponential
    is the requested integral.  Valid for singular and defective M.
    """
    n, m = C.shape
    A = np.zeros((n + m, n + m))
    A[:n, :n] = -M
    A[:n, n:] = C
    return expm(A * h)[:n, n:]
