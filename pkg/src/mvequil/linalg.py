"""Pseudoinverse, scalar dagger, range membership and PSD primitives.

Every backward recursion in this package solves stage equations of the form
``G u = -target`` where G is symmetric (usually PSD, possibly singular). The
helpers here centralize the tolerance semantics of those solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_PINV_RTOL = 1e-10
DEFAULT_RANGE_RTOL = 1e-8
DEFAULT_PSD_TOL = 1e-10
DEFAULT_DAGGER_ATOL = 1e-12
_SYM_RTOL = 1e-8


@dataclass(frozen=True)
class PinvResult:
    """Moore-Penrose pseudoinverse of a symmetric matrix.

    rank is the count of eigenvalues whose magnitude exceeds cutoff, and
    cutoff is the absolute threshold actually applied (rel_tol * spectral
    radius).
    """

    pinv: np.ndarray
    rank: int
    cutoff: float


def _require_symmetric(M: np.ndarray, what: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise np.linalg.LinAlgError(f"{what}: expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise np.linalg.LinAlgError(f"{what}: matrix has non-finite entries")
    scale = max(1.0, float(np.linalg.norm(M)))
    if np.linalg.norm(M - M.T) > _SYM_RTOL * scale:
        raise np.linalg.LinAlgError(f"{what}: matrix is not symmetric")
    # exact symmetry for eigh; asymmetry beyond tolerance was rejected above
    return 0.5 * (M + M.T)


def pseudoinverse(M: np.ndarray, rel_tol: float = DEFAULT_PINV_RTOL) -> PinvResult:
    """Pseudoinverse of a symmetric matrix via eigendecomposition.

    Eigenvalues with magnitude below rel_tol times the spectral radius are
    treated as zero. The result is exactly symmetric.
    """
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    M = _require_symmetric(M, "pseudoinverse")
    w, Q = np.linalg.eigh(M)
    cutoff = rel_tol * float(np.max(np.abs(w))) if w.size else 0.0
    keep = np.abs(w) > cutoff
    inv_w = np.zeros_like(w)
    inv_w[keep] = 1.0 / w[keep]
    P = (Q * inv_w) @ Q.T
    return PinvResult(pinv=0.5 * (P + P.T), rank=int(np.count_nonzero(keep)), cutoff=cutoff)


def scalar_dagger(a: float, abs_tol: float = DEFAULT_DAGGER_ATOL) -> float:
    """1/a when |a| exceeds abs_tol, else 0 (the scalar pseudoinverse)."""
    if abs_tol < 0:
        raise ValueError("abs_tol must be nonnegative")
    a = float(a)
    return 1.0 / a if abs(a) > abs_tol else 0.0


def range_membership(
    v: np.ndarray, M: np.ndarray, rel_tol: float = DEFAULT_RANGE_RTOL
) -> tuple[bool, float]:
    """Whether v lies in the column space of symmetric M, with the residual.

    Returns (ok, residual) where residual = ||M M^+ v - v|| and ok means
    residual <= rel_tol * max(1, ||v||).
    """
    v = np.asarray(v, dtype=float)
    pr = pseudoinverse(M)
    residual = float(np.linalg.norm(M @ (pr.pinv @ v) - v))
    return residual <= rel_tol * max(1.0, float(np.linalg.norm(v))), residual


def is_psd(M: np.ndarray, tol: float = DEFAULT_PSD_TOL) -> bool:
    """Whether symmetric M is positive semidefinite within a relative slack.

    Passes iff lambda_min >= -tol * max(1, lambda_max).
    """
    M = _require_symmetric(M, "is_psd")
    w = np.linalg.eigvalsh(M)
    return bool(w[0] >= -tol * max(1.0, float(w[-1])))
