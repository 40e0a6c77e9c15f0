"""LS / WLS state estimation, verification matrices and bad-data detection.

Rectangular vectors use the (Re, Im) partition: entry ``i`` is ``Re z_i`` and
entry ``m + i`` is ``Im z_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_frame, check_frames, check_positive, check_unit_interval
from .exceptions import ConfigurationError, FrameError, ObservabilityError
from .grid import PSEUDO_SIGMA, GridModel, TopologyMatrices, build_topology, require_observable
from .linalg import numerical_rank, to_rect

OMEGA_FLOOR = 1e-12
VARIANCE_FLOOR = 1e-18
DEFAULT_LNR_THRESHOLD = 3.0
DEFAULT_CHI2_SIGNIFICANCE = 0.01


# -- least squares --------------------------------------------------------

def _thin_qr(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Q, R = np.linalg.qr(H, mode="reduced")
    if numerical_rank(H) < H.shape[1]:
        raise ObservabilityError(f"H has rank {numerical_rank(H)} < {H.shape[1]}")
    return Q, R


def compute_F(T: TopologyMatrices | np.ndarray) -> np.ndarray:
    """Verification matrix ``F = H (H^H H)^-1 H^H - Id``, formed as ``Q Q^H - Id``."""
    H = T.H if isinstance(T, TopologyMatrices) else np.asarray(T)
    Q, _ = _thin_qr(H)
    if H.shape[0] == H.shape[1]:
        # square and full rank: no redundancy, F vanishes identically
        return np.zeros((H.shape[0], H.shape[0]), dtype=complex)
    F = Q @ Q.conj().T - np.eye(H.shape[0])
    return 0.5 * (F + F.conj().T)


def ls_estimate(T: TopologyMatrices | np.ndarray, z: np.ndarray) -> np.ndarray:
    H = T.H if isinstance(T, TopologyMatrices) else np.asarray(T)
    Q, R = _thin_qr(H)
    return sla.solve_triangular(R, Q.conj().T @ np.asarray(z, dtype=complex))


# -- noise covariance -----------------------------------------------------

def polar_noise_covariance(z: np.ndarray, sigma_mag: np.ndarray, sigma_phase: np.ndarray,
                           pseudo_mask: np.ndarray | None = None) -> np.ndarray:
    """Rectangular covariance of polar noise, propagated to first order.

    Magnitude noise is relative (std ``rho * sigma_mag``), phase noise absolute.
    Each phasor contributes the 2x2 block ``J diag((rho sm)^2, sp^2) J^T`` with
    ``J = [[cos, -rho sin], [sin, rho cos]]`` at the measured ``(rho, theta)``.
    Pseudo-rows get ``PSEUDO_SIGMA**2 * Id``.
    """
    z = np.asarray(z, dtype=complex)
    if not np.all(np.isfinite(z)):
        raise FrameError("measurement vector contains non-finite values")
    m = z.shape[0]
    sm = np.zeros(m)
    sp = np.zeros(m)
    k = len(sigma_mag)
    sm[:k] = sigma_mag
    sp[:k] = sigma_phase
    pseudo = np.zeros(m, dtype=bool) if pseudo_mask is None else np.asarray(pseudo_mask, dtype=bool)
    rho = np.abs(z)
    c, s = np.cos(np.angle(z)), np.sin(np.angle(z))
    var_r = (rho * sm) ** 2
    var_t = (rho * sp) ** 2
    cxx = c * c * var_r + s * s * var_t
    cyy = s * s * var_r + c * c * var_t
    cxy = c * s * (var_r - var_t)
    cxx = np.where(pseudo, PSEUDO_SIGMA ** 2, cxx + VARIANCE_FLOOR)
    cyy = np.where(pseudo, PSEUDO_SIGMA ** 2, cyy + VARIANCE_FLOOR)
    cxy = np.where(pseudo, 0.0, cxy)
    C = np.zeros((2 * m, 2 * m))
    idx = np.arange(m)
    C[idx, idx] = cxx
    C[idx + m, idx + m] = cyy
    C[idx, idx + m] = cxy
    C[idx + m, idx] = cxy
    return C


def compute_Cbox(z: np.ndarray, grid: GridModel) -> np.ndarray:
    sm, sp = grid.noise_sigmas()
    pseudo = np.zeros(grid.m, dtype=bool)
    pseudo[grid.n_phasors:] = True
    return polar_noise_covariance(z, sm, sp, pseudo)


# -- weighted least squares -----------------------------------------------

@dataclass(frozen=True)
class WlsVerification:
    """WLS verification operators for one noise covariance.

    ``G_box`` maps rectangular measurements to WLS residuals, ``R`` is its complex
    form (``r = R z + conj(R) conj(z)``) and ``Omega`` the residual covariance.
    """

    G_box: np.ndarray
    R: np.ndarray
    Omega: np.ndarray
    C_box: np.ndarray
    chol: np.ndarray
    estimator: np.ndarray

    @property
    def m(self) -> int:
        return self.R.shape[1]

    def _block(self, a: int, b: int) -> np.ndarray:
        m = self.m
        return self.G_box[a * m:(a + 1) * m, b * m:(b + 1) * m]

    @property
    def G1(self) -> np.ndarray:
        return self._block(0, 0)

    @property
    def G2(self) -> np.ndarray:
        return self._block(0, 1)

    @property
    def G3(self) -> np.ndarray:
        return self._block(1, 0)

    @property
    def G4(self) -> np.ndarray:
        return self._block(1, 1)

    def estimate(self, z: np.ndarray) -> np.ndarray:
        """WLS state estimate (complex, length n)."""
        xb = self.estimator @ to_rect(z)
        n = xb.shape[0] // 2
        return xb[:n] + 1j * xb[n:]


def compute_wls_verification(T: TopologyMatrices, C: np.ndarray) -> WlsVerification:
    """Build ``G_box``, ``R`` and ``Omega`` for covariance ``C``.

    Works in whitened coordinates ``A = L^-1 H_box`` (``C = L L^T``) so that
    ``G_box = L (Q Q^T - Id) L^-1`` and ``Omega = L (Id - Q Q^T) L^T`` without
    forming ``C^-1``.
    """
    C = np.asarray(C, dtype=float)
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("noise covariance is not positive definite") from exc
    A = sla.solve_triangular(L, T.H_box, lower=True)
    Q, Rq = np.linalg.qr(A, mode="reduced")
    if numerical_rank(Rq) < A.shape[1]:
        raise ObservabilityError("weighted normal matrix is singular")
    m2 = A.shape[0]
    P = Q @ Q.T
    Linv = sla.solve_triangular(L, np.eye(m2), lower=True)
    G = L @ (P - np.eye(m2)) @ Linv
    Omega = L @ (np.eye(m2) - P) @ L.T
    Omega = 0.5 * (Omega + Omega.T)
    m = m2 // 2
    R = 0.5 * np.vstack([G[:m, :m] - 1j * G[:m, m:], G[m:, :m] - 1j * G[m:, m:]])
    estimator = sla.solve_triangular(Rq, Q.T @ Linv)
    return WlsVerification(G_box=G, R=R, Omega=Omega, C_box=C, chol=L, estimator=estimator)


def wls_estimate(T: TopologyMatrices, C: np.ndarray, z: np.ndarray) -> np.ndarray:
    return compute_wls_verification(T, C).estimate(z)


@dataclass(frozen=True)
class ResidualVector:
    r: np.ndarray
    normalized: np.ndarray
    valid: np.ndarray
    chi2_statistic: float


def wls_residuals(V: WlsVerification, z: np.ndarray, pseudo_mask: np.ndarray | None = None) -> ResidualVector:
    """Rectangular WLS residuals and their normalized values.

    Rows with ``Omega_ii <= OMEGA_FLOOR`` or belonging to pseudo-measurements
    are exact-fit rows: their normalized value is reported as 0 and excluded
    from the LNR test.
    """
    z = np.asarray(z, dtype=complex)
    if z.shape[0] != V.m:
        raise FrameError(f"frame has {z.shape[0]} rows, expected {V.m}")
    r = V.G_box @ to_rect(z)
    d = np.diag(V.Omega)
    valid = d > OMEGA_FLOOR
    if pseudo_mask is not None:
        pm = np.asarray(pseudo_mask, dtype=bool)
        valid &= ~np.concatenate([pm, pm])
    normalized = np.zeros_like(r)
    normalized[valid] = r[valid] / np.sqrt(d[valid])
    w = sla.solve_triangular(V.chol, r, lower=True)
    return ResidualVector(r=r, normalized=normalized, valid=valid, chi2_statistic=float(w @ w))


@dataclass(frozen=True)
class LNRResult:
    flag: bool
    max_value: float
    argmax: int


def lnr_test(res: ResidualVector, threshold: float = DEFAULT_LNR_THRESHOLD) -> LNRResult:
    if not threshold > 0:
        raise ConfigurationError("LNR threshold must be positive")
    a = np.abs(np.where(res.valid, res.normalized, 0.0))
    k = int(np.argmax(a))
    return LNRResult(flag=bool(a[k] > threshold), max_value=float(a[k]), argmax=k)


def chi2_dof(T: TopologyMatrices) -> int:
    """Degrees of freedom of ``r^T C^-1 r``: ``2m - 2n``.

    Zero-injection rows count on both sides (each removes two state degrees of
    freedom), which is the same as ``2 m_pmu - 2 (n - n_zero_injection)``.
    """
    return 2 * T.m - 2 * T.n


def chi2_threshold(dof: int, significance: float = DEFAULT_CHI2_SIGNIFICANCE) -> float:
    if dof <= 0:
        raise ConfigurationError(f"chi-square test needs positive dof, got {dof}")
    if not 0 < significance < 1:
        raise ConfigurationError("significance must lie in (0, 1)")
    return float(stats.chi2.ppf(1.0 - significance, dof))


def chi2_test(res: ResidualVector, dof: int, significance: float = DEFAULT_CHI2_SIGNIFICANCE) -> bool:
    """Flag when the weighted residual sum of squares exceeds the chi-square quantile."""
    return bool(res.chi2_statistic > chi2_threshold(dof, significance))


# -- criticality ------------------------------------------------------------

def is_critical_set(F: np.ndarray, S) -> bool:
    """A measurement set is critical iff its columns of F are rank deficient."""
    S = list(S)
    return numerical_rank(F[:, S], scale=1.0) < len(S)


def criticality_deficiency(F: np.ndarray, S) -> int:
    S = list(S)
    return len(S) - numerical_rank(F[:, S], scale=1.0)


# -- estimator wrapper ------------------------------------------------------

class StateEstimator(BaseEstimator):
    """Per-frame WLS state estimation on a fixed grid.

    Parameters
    ----------
    weighted : bool
        Use the measurement-dependent WLS covariance. With ``False`` the
        estimate is plain LS.
    lnr_threshold, chi2_significance : float
        Bad-data detector settings used by :meth:`detect`.

    ``fit`` takes a :class:`GridModel`; ``predict`` maps an array of frames
    (complex, frames x m) to state estimates (complex, frames x n).
    """

    def __init__(self, weighted: bool = True, lnr_threshold: float = DEFAULT_LNR_THRESHOLD,
                 chi2_significance: float = DEFAULT_CHI2_SIGNIFICANCE):
        self.weighted = weighted
        self.lnr_threshold = lnr_threshold
        self.chi2_significance = chi2_significance

    def fit(self, grid: GridModel, y=None):
        check_positive(self.lnr_threshold, "lnr_threshold")
        check_unit_interval(self.chi2_significance, "chi2_significance")
        self.grid_ = grid
        self.topology_ = build_topology(grid)
        require_observable(self.topology_)
        self.F_ = compute_F(self.topology_)
        self.dof_ = chi2_dof(self.topology_)
        return self

    def verification(self, z) -> WlsVerification:
        check_is_fitted(self, "topology_")
        z = check_frame(z, self.topology_.m)
        if self.weighted:
            C = compute_Cbox(z, self.grid_)
        else:
            C = np.eye(2 * self.topology_.m)
        return compute_wls_verification(self.topology_, C)

    def predict(self, Z) -> np.ndarray:
        check_is_fitted(self, "topology_")
        Z = check_frames(Z, self.topology_.m)
        if not self.weighted:
            return np.array([ls_estimate(self.topology_, z) for z in Z])
        return np.array([self.verification(z).estimate(z) for z in Z])

    def residuals(self, z) -> ResidualVector:
        return wls_residuals(self.verification(z), z, self.topology_.pseudo_mask)

    def detect(self, Z) -> np.ndarray:
        """Boolean array (frames x 2): LNR flag and chi-square flag per frame."""
        check_is_fitted(self, "topology_")
        Z = check_frames(Z, self.topology_.m)
        out = np.zeros((Z.shape[0], 2), dtype=bool)
        for k, z in enumerate(Z):
            res = self.residuals(z)
            out[k, 0] = lnr_test(res, self.lnr_threshold).flag
            out[k, 1] = chi2_test(res, self.dof_, self.chi2_significance)
        return out
