"""Matrix norm helpers matching the max-norm conventions used throughout.

Vectors carry the max norm |x| = max_i |x_i|; matrices carry either the
entrywise max norm |A| = max_ij |a_ij| or the induced operator norm
||A|| = max_i sum_j |a_ij| (the norm induced by the vector max norm).
"""

from __future__ import annotations

import numpy as np


def max_norm(a) -> float:
    """Entrywise max norm of a vector, matrix, or stack thereof."""
    a = np.asarray(a)
    return float(np.abs(a).max()) if a.size else 0.0


def op_norm(a) -> float:
    """Operator norm induced by the vector max norm (max row sum)."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    return float(np.abs(a).sum(axis=-1).max())


def grid_op_norm(stack) -> float:
    """Max over grid points of the induced operator norm, stack (P, r, c)."""
    stack = np.asarray(stack, dtype=float)
    return float(np.abs(stack).sum(axis=-1).max())
