"""Small dense linear algebra (d <= 8) and the standard normal CDF.

Matrices are plain ``numpy`` arrays. Everything here is deliberately
hand-rolled for tiny dimensions: partial-pivot elimination for determinants
and cyclic Jacobi rotations for symmetric eigenproblems.
"""
from __future__ import annotations

import math

import numpy as np

MAX_DIM = 8
JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-14
SYMMETRY_TOL = 1e-12
PD_REL_TOL = 1e-12

_SQRT2 = math.sqrt(2.0)


class NotSymmetricError(ValueError):
    pass


class NotPositiveDefiniteError(ValueError):
    """Raised when a covariance-like matrix is singular or indefinite."""


def std_normal_cdf(x: float) -> float:
    """Standard normal distribution function via the complementary error function."""
    if math.isnan(x):
        raise ValueError("x must not be NaN")
    return 0.5 * math.erfc(-x / _SQRT2)


def std_normal_cdf_array(x: np.ndarray) -> np.ndarray:
    from scipy.special import ndtr

    return ndtr(np.asarray(x, dtype=float))


def as_square(a, *, allow_empty: bool = True) -> np.ndarray:
    m = np.array(a, dtype=float)
    if m.size == 0 and allow_empty:
        return np.zeros((0, 0))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if m.shape[0] > MAX_DIM:
        raise ValueError(f"dimension {m.shape[0]} exceeds supported maximum {MAX_DIM}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def identity(d: int) -> np.ndarray:
    return np.eye(d)


def minor(a, i: int, j: int) -> np.ndarray:
    """Delete row ``i`` and column ``j`` (both 1-based)."""
    m = as_square(a)
    d = m.shape[0]
    if d < 1:
        raise ValueError("minor of an empty matrix is undefined")
    if not (1 <= i <= d and 1 <= j <= d):
        raise IndexError(f"minor indices ({i}, {j}) out of range for dim {d}")
    keep_r = [k for k in range(d) if k != i - 1]
    keep_c = [k for k in range(d) if k != j - 1]
    return m[np.ix_(keep_r, keep_c)]


def determinant(a) -> float:
    """Determinant by Gaussian elimination with partial pivoting.

    A 0x0 matrix has determinant 1 (empty product).
    """
    m = as_square(a).copy()
    d = m.shape[0]
    if d == 0:
        return 1.0
    if d == 1:
        return float(m[0, 0])
    if d == 2:
        return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])
    det = 1.0
    for k in range(d):
        p = k + int(np.argmax(np.abs(m[k:, k])))
        if m[p, k] == 0.0:
            return 0.0
        if p != k:
            m[[k, p]] = m[[p, k]]
            det = -det
        det *= m[k, k]
        factors = m[k + 1:, k] / m[k, k]
        m[k + 1:, k:] -= np.outer(factors, m[k, k:])
    return float(det)


def jacobi_eigh(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors in the columns.
    """
    m = as_square(a).copy()
    d = m.shape[0]
    v = np.eye(d)
    if d <= 1:
        return np.diag(m).copy(), v
    scale = float(np.linalg.norm(m))
    if scale == 0.0:
        return np.zeros(d), v
    for _ in range(JACOBI_MAX_SWEEPS):
        off = math.sqrt(float(np.sum(np.triu(m, 1) ** 2)))
        if off <= JACOBI_TOL * scale:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = m[p, q]
                if apq == 0.0:
                    continue
                theta = (m[q, q] - m[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # m <- J^T m J with J the (p, q) plane rotation
                mp = m[:, p].copy()
                mq = m[:, q].copy()
                m[:, p] = c * mp - s * mq
                m[:, q] = s * mp + c * mq
                mp = m[p, :].copy()
                mq = m[q, :].copy()
                m[p, :] = c * mp - s * mq
                m[q, :] = s * mp + c * mq
                m[p, q] = m[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(m).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def check_symmetric(a: np.ndarray, tol: float = SYMMETRY_TOL) -> None:
    if a.size and float(np.max(np.abs(a - a.T))) > tol * max(1.0, float(np.max(np.abs(a)))):
        raise NotSymmetricError("matrix is not symmetric")


def spd_sqrt_inverse(a) -> np.ndarray:
    """Inverse of the positive definite square root, B = A^{-1/2}."""
    m = as_square(a, allow_empty=False)
    check_symmetric(m)
    m = 0.5 * (m + m.T)
    w, v = jacobi_eigh(m)
    wmax = float(w.max())
    if wmax <= 0.0 or float(w.min()) <= PD_REL_TOL * wmax:
        raise NotPositiveDefiniteError(f"matrix is not positive definite (eigenvalues {w.tolist()})")
    b = (v / np.sqrt(w)) @ v.T
    return 0.5 * (b + b.T)
