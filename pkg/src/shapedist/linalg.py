"""
Dense linear-algebra primitives.

All routines operate on plain ``numpy`` arrays. Singular value decompositions
are delegated to LAPACK, which is deterministic for a fixed input.
"""

from dataclasses import dataclass

import numpy as np

from shapedist.errors import DataError, NumericalError

# Singular values below this fraction of the largest one are treated as zero.
RANK_TOL = 1e-12


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``m = U diag(s) V^T`` with ``s`` sorted in non-increasing order."""

    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray

    def reconstruct(self):
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


def as_matrix(m, name="matrix"):
    """Return ``m`` as a finite 2-D float array or raise :class:`DataError`."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise DataError(f"{name} must be 2-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains non-finite entries")
    return a


def _clamp(s):
    if s.size and s[0] > 0:
        s = np.where(s < RANK_TOL * s[0], 0.0, s)
    return s


def svd(m):
    """Thin singular value decomposition of a finite matrix.

    Parameters
    ----------
    m : array_like, shape (r, c)

    Returns
    -------
    SvdResult
        ``left_vectors`` is ``r x k``, ``right_vectors`` is ``c x k`` with
        ``k = min(r, c)``; both have orthonormal columns.
    """
    a = as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    return SvdResult(_clamp(s), u, vt.T)


def singular_values(m):
    a = as_matrix(m)
    try:
        s = np.linalg.svd(a, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    return _clamp(s)


def nuclear_norm(m):
    """Sum of singular values (Schatten 1-norm)."""
    return float(np.sum(singular_values(m)))


def spectral_norm(m):
    s = singular_values(m)
    return float(s[0]) if s.size else 0.0


def symmetric_eigh(m, sym_tol=1e-10):
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending."""
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise DataError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > sym_tol * scale:
        raise DataError("matrix is not symmetric")
    try:
        w, v = np.linalg.eigh((a + a.T) / 2)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    return w, v


def random_orthogonal(n, rng):
    """Haar-distributed ``n x n`` orthogonal matrix.

    QR factorisation of a standard Gaussian matrix, with the columns of ``Q``
    multiplied by the signs of ``diag(R)`` so the distribution is uniform.
    """
    if n < 1:
        raise DataError("dimension must be at least 1")
    g = rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d
