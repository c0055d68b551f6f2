"""Grid-pointwise numeric kernels, numba-accelerated with a numpy fallback.

Every kernel exists in two functionally identical versions: a numba
``@njit`` implementation working point by point, and a vectorized numpy
implementation on stacked arrays.  The active backend is chosen once at
import time: numba is used when it imports cleanly and the environment
variable ``KAMTORI_NO_NUMBA`` is unset (any non-empty value forces the
numpy path).  ``benchmarks/bench_kernels.py`` times the two paths against
each other.

Shapes follow one convention: ``P`` grid points, torus dimension ``n``,
phase-space dimension ``d = 2n``.
"""

from __future__ import annotations

import os

import numpy as np

_FORCE_NUMPY = bool(os.environ.get("KAMTORI_NO_NUMBA"))

try:
    if _FORCE_NUMPY:
        raise ImportError("numba disabled by KAMTORI_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _FORCE_NUMPY


def backend() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def eval_modes_numpy(coef_re, coef_im, kvecs, theta):
    """Evaluate sum_k c_k exp(2 pi i k.theta) at arbitrary points.

    Assumes Hermitian-symmetric coefficients, so the imaginary parts of the
    sum cancel and only the real part is returned.

    Parameters
    ----------
    coef_re, coef_im : (M, m) float64
        Real/imaginary parts of the mode coefficients, one row per mode.
    kvecs : (M, n) float64
        Integer mode vectors (as floats).
    theta : (P, n) float64
        Evaluation points on the torus.

    Returns
    -------
    (P, m) float64
    """
    phase = 2.0 * np.pi * (theta @ kvecs.T)  # (P, M)
    return np.cos(phase) @ coef_re - np.sin(phase) @ coef_im


def batched_inv_numpy(mats):
    """Pointwise inverse of a stack of small square matrices (P, d, d)."""
    return np.linalg.inv(mats)


def lagrangian_core_numpy(DK, BK_inv):
    """Pullback of the inverse structure matrix: DK^T B(K)^-1 DK, per point."""
    return np.matmul(np.swapaxes(DK, -1, -2), np.matmul(BK_inv, DK))


def torsion_core_numpy(DK, N, A, BK, DBv):
    """Torsion (twist) matrix per grid point.

    Computes T^T {A BK - BK A - DBv + BK (T DK^T) (A + A^T)} T with
    T = DK N, which is the n x n block coupling the two halves of the
    reduced linearized system.
    """
    T = np.matmul(DK, N)                       # (P, d, n)
    Tt = np.swapaxes(T, -1, -2)                # (P, n, d)
    DKt = np.swapaxes(DK, -1, -2)              # (P, n, d)
    At = np.swapaxes(A, -1, -2)
    braces = (
        np.matmul(A, BK)
        - np.matmul(BK, A)
        - DBv
        + np.matmul(BK, np.matmul(np.matmul(T, DKt), A + At))
    )
    return np.matmul(Tt, np.matmul(braces, T))


def frame_core_numpy(DK, N, BK):
    """Adapted frame M = [DK | BK DK N] and its triangular companion V.

    V = [[0, I], [-I, -Q]] with Q = (DK N)^T BK (DK N).
    """
    P, d, n = DK.shape
    T = np.matmul(DK, N)
    M = np.empty((P, d, d))
    M[:, :, :n] = DK
    M[:, :, n:] = np.matmul(BK, T)
    Q = np.matmul(np.swapaxes(T, -1, -2), np.matmul(BK, T))
    V = np.zeros((P, d, d))
    eye = np.eye(n)
    V[:, :n, n:] = eye
    V[:, n:, :n] = -eye
    V[:, n:, n:] = -Q
    return M, V


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _eval_modes_nb(coef_re, coef_im, kvecs, theta):
        P = theta.shape[0]
        M, m = coef_re.shape
        n = kvecs.shape[1]
        out = np.zeros((P, m))
        for p in range(P):
            for q in range(M):
                arg = 0.0
                for j in range(n):
                    arg += kvecs[q, j] * theta[p, j]
                arg *= 2.0 * np.pi
                c = np.cos(arg)
                s = np.sin(arg)
                for i in range(m):
                    out[p, i] += coef_re[q, i] * c - coef_im[q, i] * s
        return out

    @njit(cache=True)
    def _batched_inv_nb(mats):
        P = mats.shape[0]
        out = np.empty_like(mats)
        for p in range(P):
            out[p] = np.linalg.inv(mats[p].copy())
        return out

    @njit(cache=True)
    def _lagrangian_core_nb(DK, BK_inv):
        P, d, n = DK.shape
        out = np.empty((P, n, n))
        for p in range(P):
            DKp = DK[p].copy()
            DKt = DKp.T.copy()
            out[p] = DKt @ (BK_inv[p].copy() @ DKp)
        return out

    @njit(cache=True)
    def _torsion_core_nb(DK, N, A, BK, DBv):
        P, d, n = DK.shape
        out = np.empty((P, n, n))
        for p in range(P):
            DKp = DK[p].copy()
            Np = N[p].copy()
            Ap = A[p].copy()
            BKp = BK[p].copy()
            T = DKp @ Np
            Tt = T.T.copy()
            DKt = DKp.T.copy()
            At = Ap.T.copy()
            braces = (
                Ap @ BKp
                - BKp @ Ap
                - DBv[p]
                + BKp @ ((T @ DKt) @ (Ap + At))
            )
            out[p] = Tt @ (braces @ T)
        return out

    @njit(cache=True)
    def _frame_core_nb(DK, N, BK):
        P, d, n = DK.shape
        M = np.empty((P, d, d))
        V = np.zeros((P, d, d))
        for p in range(P):
            DKp = DK[p].copy()
            BKp = BK[p].copy()
            T = DKp @ N[p].copy()
            Tt = T.T.copy()
            M[p, :, :n] = DKp
            M[p, :, n:] = BKp @ T
            Q = Tt @ (BKp @ T)
            for i in range(n):
                V[p, i, n + i] = 1.0
                V[p, n + i, i] = -1.0
            V[p, n:, n:] = -Q
        return M, V


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def eval_modes(coef_re, coef_im, kvecs, theta):
    if USE_NUMBA:
        return _eval_modes_nb(coef_re, coef_im, kvecs, theta)
    return eval_modes_numpy(coef_re, coef_im, kvecs, theta)


def batched_inv(mats):
    if USE_NUMBA:
        return _batched_inv_nb(mats)
    return batched_inv_numpy(mats)


def lagrangian_core(DK, BK_inv):
    if USE_NUMBA:
        return _lagrangian_core_nb(DK, BK_inv)
    return lagrangian_core_numpy(DK, BK_inv)


def torsion_core(DK, N, A, BK, DBv):
    if USE_NUMBA:
        return _torsion_core_nb(DK, N, A, BK, DBv)
    return torsion_core_numpy(DK, N, A, BK, DBv)


def frame_core(DK, N, BK):
    if USE_NUMBA:
        return _frame_core_nb(DK, N, BK)
    return frame_core_numpy(DK, N, BK)


def warmup():
    """Trigger JIT compilation of every kernel on tiny inputs."""
    if not USE_NUMBA:
        return
    rng = np.random.default_rng(0)
    theta = rng.random((3, 2))
    kvecs = np.array([[0.0, 0.0], [1.0, -1.0]])
    cre = rng.random((2, 2))
    eval_modes(cre, 0.0 * cre, kvecs, theta)
    mats = np.eye(2)[None, :, :] + 0.01 * rng.random((3, 2, 2))
    batched_inv(mats)
    DK = rng.random((3, 4, 2))
    N = np.eye(2)[None, :, :].repeat(3, axis=0)
    BK = rng.random((3, 4, 4))
    A = rng.random((3, 4, 4))
    lagrangian_core(DK, BK)
    torsion_core(DK, N, A, BK, A)
    frame_core(DK, N, BK)
