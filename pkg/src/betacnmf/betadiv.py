"""The beta-divergence family, pointwise and summed over matrix entries.

``beta == 0`` is Itakura-Saito, ``beta == 1`` generalized Kullback-Leibler
and ``beta == 2`` half the squared Euclidean distance. Branches are chosen
by exact comparison, so ``beta = 1 + 1e-9`` takes the general formula.
"""

from __future__ import annotations

import numpy as np

from .nnmat import DEFAULT_EPS, DimensionError


def _d_beta(p: np.ndarray, q: np.ndarray, beta: float, eps: float) -> np.ndarray:
    q = np.maximum(q, eps)
    if beta == 0:
        ratio = np.maximum(p, eps) / q
        return ratio - np.log(ratio) - 1.0
    if beta == 1:
        # p * log(p / q) -> 0 as p -> 0, so d_1(0, q) == q exactly
        return p * np.log(np.maximum(p, eps) / q) - p + q
    if beta == 2:
        return 0.5 * (p - q) ** 2
    return (p**beta + (beta - 1.0) * q**beta - beta * p * q ** (beta - 1.0)) / (
        beta * (beta - 1.0)
    )


def d_beta(p, q, beta: float, eps: float = DEFAULT_EPS):
    """Pointwise beta-divergence ``d_beta(p | q)``; broadcasts over arrays."""
    out = _d_beta(np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64), beta, eps)
    return float(out) if out.ndim == 0 else out


def D_beta(V: np.ndarray, U: np.ndarray, beta: float, eps: float = DEFAULT_EPS) -> float:
    """Sum of ``d_beta(v_kn | u_kn)`` over all entries."""
    if np.shape(V) != np.shape(U):
        raise DimensionError(f"shape mismatch: {np.shape(V)} vs {np.shape(U)}")
    return float(np.sum(_d_beta(np.asarray(V, float), np.asarray(U, float), beta, eps)))
