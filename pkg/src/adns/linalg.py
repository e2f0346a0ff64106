"""Dense real linear algebra: symmetric eigendecomposition via cyclic
Jacobi rotations, thin SVD through the smaller Gram matrix, and optimal
rank-k truncation.

All routines are deterministic: eigen/singular values are sorted with a
stable order and every vector's largest-magnitude entry is made
non-negative (ties broken by lowest index).
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import NumericalError, ValidationError

MAX_SWEEPS = 100
OFF_DIAG_TOL = 1e-12
SIGMA_CLAMP = 1e-12


@dataclass(frozen=True)
class SymEigResult:
    """Eigenvalues sorted non-increasing; eigenvectors as orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD a = u @ diag(sigma) @ vt with r = min(rows, cols)."""

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray


def as_matrix(a, name="matrix"):
    """Coerce to a C-contiguous float64 2-D array, rejecting empty or non-finite input."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-dimensional, got ndim={arr.ndim}")
    if arr.size == 0:
        raise ValidationError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(arr)


def _fix_signs(vectors):
    """Flip columns so each one's largest-magnitude entry is non-negative."""
    if vectors.shape[1] == 0:
        return vectors
    lead = np.argmax(np.abs(vectors), axis=0)
    flip = vectors[lead, np.arange(vectors.shape[1])] < 0.0
    vectors[:, flip] *= -1.0
    return vectors


def sym_eig(a, tol=1e-8):
    """Eigendecompose a symmetric matrix with cyclic Jacobi rotations.

    ``tol`` bounds the accepted asymmetry, relative to the largest entry
    magnitude. Raises ValidationError for non-square or asymmetric input
    and NumericalError if the sweep cap is hit before the off-diagonal
    mass is driven to zero.
    """
    m = as_matrix(a, "a")
    n, cols = m.shape
    if n != cols:
        raise ValidationError(f"a must be square, got {n}x{cols}")
    scale = max(1.0, float(np.max(np.abs(m))))
    if float(np.max(np.abs(m - m.T))) > tol * scale:
        raise ValidationError("a is not symmetric within tolerance")

    work = (m + m.T) / 2.0
    vectors = np.eye(n)
    # Termination is scale-relative so large-magnitude covariances do not
    # stall above an absolute floor set by rounding.
    off_tol = OFF_DIAG_TOL * max(1.0, float(np.linalg.norm(work)))
    _, off = _kernels.jacobi_sweeps(work, vectors, off_tol, MAX_SWEEPS)
    if off > off_tol:
        raise NumericalError(
            f"Jacobi iteration did not converge in {MAX_SWEEPS} sweeps (off={off:.3e})"
        )

    values = np.diag(work).copy()
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = _fix_signs(vectors[:, order].copy())
    return SymEigResult(values, vectors)


def _complete_orthonormal(basis, filled):
    """Fill basis columns >= filled with the canonical directions least
    represented by the existing columns (largest residual, lowest index on ties)."""
    d, r = basis.shape
    for j in range(filled, r):
        current = basis[:, :j]
        residuals = np.eye(d) - current @ current.T
        norms = np.linalg.norm(residuals, axis=0)
        pick = int(np.argmax(norms))
        vec = residuals[:, pick]
        for _ in range(2):
            vec = vec - current @ (current.T @ vec)
        basis[:, j] = vec / np.linalg.norm(vec)
    return basis


def _orthonormalize_columns(basis, n_nonzero):
    """Modified Gram-Schmidt over the first n_nonzero columns, replacing any
    numerically dependent column, then canonical completion of the rest."""
    d, r = basis.shape
    out = np.zeros((d, r))
    kept = 0
    for j in range(n_nonzero):
        vec = basis[:, j].copy()
        for _ in range(2):
            vec = vec - out[:, :kept] @ (out[:, :kept].T @ vec)
        norm = np.linalg.norm(vec)
        if norm < 1e-10:
            continue
        out[:, kept] = vec / norm
        kept += 1
    return _complete_orthonormal(out, kept)


def _thin_svd_tall(m):
    """Thin SVD of a matrix with rows >= cols via the cols x cols Gram matrix."""
    rows, cols = m.shape
    gram = m.T @ m
    eig = sym_eig((gram + gram.T) / 2.0)
    lam = np.clip(eig.eigenvalues, 0.0, None)
    sigma = np.sqrt(lam)
    if sigma[0] > 0.0:
        sigma[sigma < SIGMA_CLAMP * sigma[0]] = 0.0
    right = eig.eigenvectors

    left = np.zeros((rows, cols))
    n_nonzero = int(np.count_nonzero(sigma))
    for i in range(n_nonzero):
        left[:, i] = m @ right[:, i] / sigma[i]
    left = _orthonormalize_columns(left, n_nonzero)
    return left, sigma, right.T


def thin_svd(a):
    """Thin SVD with r = min(rows, cols) computed through the smaller Gram matrix.

    Singular values below 1e-12 of the largest are clamped to zero and the
    matching singular vectors replaced by deterministic orthonormal
    completions.
    """
    m = as_matrix(a, "a")
    rows, cols = m.shape
    if rows >= cols:
        u, sigma, vt = _thin_svd_tall(m)
    else:
        ut, sigma, vtt = _thin_svd_tall(m.T)
        u, vt = vtt.T, ut.T

    # Sign convention on u; paired vt rows flip with their column while the
    # zero-sigma rows are normalized independently (they carry no weight).
    r = sigma.shape[0]
    for i in range(r):
        lead = int(np.argmax(np.abs(u[:, i])))
        if u[lead, i] < 0.0:
            u[:, i] *= -1.0
            if sigma[i] > 0.0:
                vt[i, :] *= -1.0
        lead = int(np.argmax(np.abs(vt[i, :])))
        if sigma[i] == 0.0 and vt[i, lead] < 0.0:
            vt[i, :] *= -1.0
    return SvdResult(u, sigma, vt)


def rank_k_truncate(svd, k):
    """Best rank-k approximation assembled from the leading k singular triplets."""
    r = int(svd.sigma.shape[0])
    if not isinstance(k, (int, np.integer)):
        raise ValidationError(f"k must be an integer, got {type(k).__name__}")
    if not 1 <= k <= r:
        raise ValidationError(f"k must be in [1, {r}], got {k}")
    return (svd.u[:, :k] * svd.sigma[:k]) @ svd.vt[:k, :]
