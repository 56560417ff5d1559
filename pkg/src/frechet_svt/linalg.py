"""Dense linear-algebra primitives used throughout the package.

Everything is SVD-based and pure: hard singular value thresholding,
Moore-Penrose pseudoinverses with an explicit numerical-rank cutoff,
row/column projections, the Mahalanobis seminorm, and the exact
pseudoinverse perturbation identity used by the verification suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Relative cutoff below which a singular value is treated as exactly zero.
RANK_RTOL = 1e-12


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD ``M = left @ diag(values) @ right_t``.

    ``values`` is sorted nonincreasing; ``left`` and ``right_t.T`` have
    orthonormal columns.
    """

    left: np.ndarray
    values: np.ndarray
    right_t: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.values) @ self.right_t


@dataclass(frozen=True)
class ThresholdPolicy:
    """Spectral truncation policy: hard threshold plus numerical-rank cutoff."""

    lam: float
    zero_tolerance: float = RANK_RTOL

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError(f"threshold must be nonnegative, got {self.lam}")
        if self.zero_tolerance <= 0:
            raise ValueError("zero_tolerance must be positive")


def _as_matrix(m, name: str = "matrix") -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise ValueError(f"{name} must be a 2-D array with positive dimensions")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def compute_svd(m) -> SvdFactors:
    u, s, vt = np.linalg.svd(_as_matrix(m), full_matrices=False)
    return SvdFactors(left=u, values=s, right_t=vt)


def spectral_norm(m) -> float:
    """Operator 2-norm, the largest singular value."""
    a = _as_matrix(m)
    if not a.any():
        return 0.0
    return float(np.linalg.svd(a, compute_uv=False)[0])


def symmetrize(a) -> np.ndarray:
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError("cannot symmetrize a non-square matrix")
    return 0.5 * (a + a.T)


def numerical_rank(m, zero_tolerance: float = RANK_RTOL) -> int:
    s = np.linalg.svd(_as_matrix(m), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > zero_tolerance * s[0]))


def svt(m, policy: ThresholdPolicy | float) -> np.ndarray:
    """Hard singular value thresholding.

    Removes every singular value at or below the threshold (strict
    ``s > lam`` survives) and reconstructs from the surviving triplets.
    A threshold at or above the top singular value yields the zero matrix.
    """
    if not isinstance(policy, ThresholdPolicy):
        policy = ThresholdPolicy(lam=float(policy))
    a = _as_matrix(m)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    keep = s > policy.lam
    if not np.any(keep):
        return np.zeros_like(a)
    return (u[:, keep] * s[keep]) @ vt[keep]


def pseudoinverse(m, zero_tolerance: float = RANK_RTOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse.

    Singular values below ``zero_tolerance`` times the largest one are
    treated as exact zeros.
    """
    a = _as_matrix(m)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    keep = s > zero_tolerance * s[0]
    if not np.any(keep):
        return np.zeros((a.shape[1], a.shape[0]))
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def row_projection(m, zero_tolerance: float = RANK_RTOL) -> np.ndarray:
    """Orthogonal projection onto the row space, ``M^+ M``."""
    a = _as_matrix(m)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    keep = s > zero_tolerance * s[0] if s.size and s[0] > 0.0 else np.zeros(s.shape, bool)
    v = vt[keep].T
    return v @ v.T if v.size else np.zeros((a.shape[1], a.shape[1]))


def col_projection(m, zero_tolerance: float = RANK_RTOL) -> np.ndarray:
    """Orthogonal projection onto the column space, ``M M^+``."""
    a = _as_matrix(m)
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    keep = s > zero_tolerance * s[0] if s.size and s[0] > 0.0 else np.zeros(s.shape, bool)
    uu = u[:, keep]
    return uu @ uu.T if uu.size else np.zeros((a.shape[0], a.shape[0]))


def sigma_lambda(m, lam: float, zero_tolerance: float = RANK_RTOL) -> float:
    """Smallest singular value strictly above ``lam``; ``inf`` when none exists.

    Numerical zeros (below the relative cutoff) never qualify, so at
    ``lam = 0`` this is the smallest nonzero singular value.
    """
    s = np.linalg.svd(_as_matrix(m), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return np.inf
    s = s[s > zero_tolerance * s[0]]
    above = s[s > lam]
    return float(above.min()) if above.size else np.inf


def mahalanobis_seminorm(x, s, zero_tolerance: float = RANK_RTOL) -> float:
    """Seminorm ``(x^T S^+ x)^(1/2)`` for positive semidefinite ``S``.

    ``S`` is symmetrized defensively; components of ``x`` in the null
    space of ``S`` contribute nothing.
    """
    v = np.asarray(x, dtype=float).ravel()
    a = symmetrize(s)
    if a.shape[0] != v.size:
        raise ValueError(f"vector length {v.size} does not match matrix size {a.shape[0]}")
    w, q = np.linalg.eigh(a)
    top = w[-1] if w.size else 0.0
    if top <= 0.0:
        return 0.0
    keep = w > zero_tolerance * top
    coords = q.T[keep] @ v
    val = float(np.sum(coords * coords / w[keep]))
    return float(np.sqrt(max(val, 0.0)))


def pinv_perturbation_residual(x, z) -> float:
    """Frobenius residual of the exact pseudoinverse perturbation identity.

    For same-shape ``X`` and ``Z``, ``Z^+ - X^+`` equals

        - Z^+ P_col(Z) (Z - X) P_row(X) X^+
        + Z^+ P_col(Z) (I - P_col(X))
        - (I - P_row(Z)) P_row(X) X^+

    so the returned residual is zero up to roundoff.
    """
    a = _as_matrix(x, "x")
    b = _as_matrix(z, "z")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    n, p = a.shape
    xp = pseudoinverse(a)
    zp = pseudoinverse(b)
    pcx = a @ xp
    pcz = b @ zp
    prx = xp @ a
    prz = zp @ b
    rhs = (
        -zp @ pcz @ (b - a) @ prx @ xp
        + zp @ pcz @ (np.eye(n) - pcx)
        - (np.eye(p) - prz) @ prx @ xp
    )
    return float(np.linalg.norm((zp - xp) - rhs, "fro"))
