"""Dense linear-algebra kernels: QR orthonormalization, SVD, SPD solves.

Contracts here are deliberately strict (sign conventions, typed errors,
residual tolerances) because the truncated-SVD engine and the optimizers
build on them directly.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky

from .errors import NotPositiveDefinite, ZeroMatrix

ZERO_MATRIX_NORM = 1e-300
DEFICIENT_COLUMN_REL = 1e-12


def _as_matrix(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        # single-column convenience
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={a.ndim}")
    return a


def qr_orthonormalize(a):
    """Thin QR with orthonormal Q and a nonnegative diagonal of R.

    Full-rank inputs take a fast path (LAPACK QR plus a column sign fix).
    A column whose residual after projection is below 1e-12 * ||A||_F is
    replaced by the first canonical basis vector that stays orthonormal
    against the columns built so far, with the matching R diagonal set to
    zero, so Q R still reconstructs A to tolerance.

    Args:
      a: (m, n) array, m >= n. A 1-D array is treated as one column.

    Returns:
      (q, r): q of shape (m, n) with orthonormal columns, r of shape
      (n, n) upper triangular with diag(r) >= 0 and q @ r == a.

    Raises:
      ZeroMatrix: if ||a||_F < 1e-300.
    """
    a = _as_matrix(a)
    m, n = a.shape
    if m < n:
        raise ValueError(f"need at least as many rows as columns, got {a.shape}")
    fro = float(np.linalg.norm(a))
    if fro < ZERO_MATRIX_NORM:
        raise ZeroMatrix(f"cannot orthonormalize a numerically zero matrix (norm {fro:.3e})")

    q, r = np.linalg.qr(a, mode="reduced")
    diag = np.diagonal(r)
    if np.min(np.abs(diag)) > DEFICIENT_COLUMN_REL * fro:
        signs = np.where(diag < 0.0, -1.0, 1.0)
        return q * signs, r * signs[:, None]
    return _gram_schmidt_with_patch(a, fro)


def _gram_schmidt_with_patch(a, fro):
    """Two-pass modified Gram-Schmidt with canonical-vector fill-in."""
    m, n = a.shape
    q = np.zeros((m, n))
    r = np.zeros((n, n))
    tol = DEFICIENT_COLUMN_REL * fro
    for j in range(n):
        v = a[:, j].copy()
        for _ in range(2):  # second pass restores orthogonality lost to rounding
            if j:
                coeff = q[:, :j].T @ v
                r[:j, j] += coeff
                v -= q[:, :j] @ coeff
        norm = float(np.linalg.norm(v))
        if norm > tol:
            q[:, j] = v / norm
            r[j, j] = norm
        else:
            q[:, j] = _canonical_fill(q[:, :j], m)
            r[j, j] = 0.0
    return q, r


def _canonical_fill(q_built, m):
    """Deterministic replacement direction orthogonal to the built columns."""
    best = None
    best_norm = -1.0
    for i in range(m):
        w = np.zeros(m)
        w[i] = 1.0
        for _ in range(2):
            if q_built.shape[1]:
                w -= q_built @ (q_built.T @ w)
        norm = float(np.linalg.norm(w))
        if norm > 0.5:
            return w / norm
        if norm > best_norm:
            best_norm = norm
            best = w
    if best is None or best_norm <= 0.0:
        raise ZeroMatrix("no canonical direction available for deficiency patch")
    return best / best_norm


def exact_svd(a):
    """Economy SVD a = u @ diag(sigma) @ vt with sigma nonincreasing.

    Args:
      a: (m, n) array.

    Returns:
      (u, sigma, vt) with shapes (m, k), (k,), (k, n), k = min(m, n).
    """
    a = _as_matrix(a)
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    u, sigma, vt = np.linalg.svd(a, full_matrices=False)
    return u, sigma, vt


@dataclass(frozen=True)
class SpdFactorization:
    """Cholesky factor of a diagonally shifted symmetric matrix."""

    chol_lower: np.ndarray  # lower triangular, T + shift*I = L @ L.T

    @property
    def dim(self):
        return self.chol_lower.shape[0]

    def solve(self, b):
        """Solve (T + shift*I) x = b for one or many right-hand sides."""
        return cho_solve((self.chol_lower, True), np.asarray(b, dtype=np.float64))

    def reconstruct(self):
        return self.chol_lower @ self.chol_lower.T


def spd_factorize(t, shift=0.0):
    """Cholesky-factorize T + shift*I.

    Args:
      t: (n, n) symmetric array (checked to 1e-10 relative).
      shift: nonnegative diagonal regularization.

    Raises:
      NotPositiveDefinite: if the shifted matrix has a nonpositive pivot.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ValueError(f"expected a square matrix, got {t.shape}")
    if shift < 0.0:
        raise ValueError("shift must be nonnegative")
    scale = max(float(np.max(np.abs(t))), 1.0)
    if float(np.max(np.abs(t - t.T))) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric to tolerance")
    shifted = t if shift == 0.0 else t + shift * np.eye(t.shape[0])
    try:
        lower = cholesky(shifted, lower=True)
    except LinAlgError as exc:
        raise NotPositiveDefinite(
            f"shifted matrix (shift={shift:g}) is not positive definite"
        ) from exc
    return SpdFactorization(chol_lower=lower)


def spd_solve(t, shift, b):
    """Solve (T + shift*I) X = B through a fresh Cholesky factorization."""
    return spd_factorize(t, shift).solve(b)
