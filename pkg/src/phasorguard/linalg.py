"""Small dense linear-algebra helpers shared across modules."""

from __future__ import annotations

import numpy as np

RANK_RTOL = 1e-10


def numerical_rank(A: np.ndarray, scale: float | None = None, rtol: float = RANK_RTOL) -> int:
    """Rank of ``A`` counting singular values above ``max(A.shape) * scale * rtol``.

    ``scale`` defaults to the largest singular value of ``A``. Submatrices of the
    verification matrix should pass ``scale=1.0`` (the norm of the full matrix),
    otherwise a lone near-zero column would be judged full rank relative to itself.
    """
    A = np.asarray(A)
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    ref = s[0] if scale is None else scale
    if ref <= 0:
        return 0
    return int(np.count_nonzero(s > max(A.shape) * ref * rtol))


def to_rect(v: np.ndarray) -> np.ndarray:
    """Stack real and imaginary parts: ``(Re v, Im v)``."""
    v = np.asarray(v)
    return np.concatenate([v.real, v.imag], axis=-1)


def from_rect(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    k = v.shape[-1] // 2
    return v[..., :k] + 1j * v[..., k:]


def rect_matrix(A: np.ndarray) -> np.ndarray:
    """Real embedding ``[[Re A, -Im A], [Im A, Re A]]`` of a complex matrix."""
    A = np.asarray(A)
    return np.block([[A.real, -A.imag], [A.imag, A.real]])


def orthonormal_range(A: np.ndarray) -> np.ndarray:
    """Orthonormal basis of range(A) via thin QR; ``A`` must have full column rank."""
    Q, _ = np.linalg.qr(A, mode="reduced")
    return Q


def singular_values(A: np.ndarray) -> np.ndarray:
    return np.linalg.svd(np.asarray(A), compute_uv=False)
