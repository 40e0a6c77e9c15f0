"""Rank-1 time-synchronization attacks: synthesis, application and evaluation.

A time offset ``d`` at a site rotates every phasor of that site by
``alpha = 2 pi f d``. An attack vector ``u`` (one unit-modulus entry per
targeted site) is undetectable iff ``W (u - 1) = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_positive
from .estimation import WlsVerification, lnr_test, wls_residuals
from .exceptions import ConfigurationError, GeometricInfeasibilityError, InfeasibleAttackError
from .grid import TopologyMatrices
from .vulnerability import TAU_ABS_REL, TAU_COL, AttackIndicator, err

DEFAULT_FREQUENCY_HZ = 50.0
UNIT_TOL = 1e-12
# Two circle intersections closer than this (in the complex plane) are one tangent point.
TANGENCY_TOL = 1e-10


@dataclass(frozen=True)
class AttackSpec:
    target_sites: tuple[int, ...]
    offsets_d: tuple[float, ...]
    frequency_f: float = DEFAULT_FREQUENCY_HZ

    def __post_init__(self):
        object.__setattr__(self, "target_sites", tuple(int(s) for s in self.target_sites))
        object.__setattr__(self, "offsets_d", tuple(float(d) for d in self.offsets_d))
        if not self.target_sites or len(self.target_sites) != len(self.offsets_d):
            raise ConfigurationError("an attack needs one offset per targeted site")
        if not all(math.isfinite(d) for d in self.offsets_d):
            raise ConfigurationError("offsets must be finite")
        check_positive(self.frequency_f, "frequency_f")

    def to_dict(self) -> dict:
        return {"sites": list(self.target_sites), "offsets_us": [d * 1e6 for d in self.offsets_d],
                "frequency_hz": self.frequency_f}

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSpec":
        try:
            return cls(tuple(d["sites"]), tuple(x * 1e-6 for x in d["offsets_us"]),
                       float(d.get("frequency_hz", DEFAULT_FREQUENCY_HZ)))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed attack spec: {exc}") from exc


@dataclass(frozen=True)
class AttackVector:
    u: np.ndarray

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=complex))
        if np.any(np.abs(np.abs(u) - 1.0) > UNIT_TOL):
            raise ConfigurationError("attack values must have unit modulus")
        object.__setattr__(self, "u", u)

    @property
    def angles(self) -> np.ndarray:
        return np.angle(self.u)

    @classmethod
    def from_angles(cls, alphas) -> "AttackVector":
        return cls(np.exp(1j * np.asarray(alphas, dtype=float)))


def offsets_to_u(spec: AttackSpec) -> AttackVector:
    d = np.asarray(spec.offsets_d)
    return AttackVector.from_angles(2.0 * np.pi * spec.frequency_f * d)


def apply_attack(z: np.ndarray, phi: AttackIndicator | np.ndarray, u: AttackVector | np.ndarray) -> np.ndarray:
    """Rotate the phasors of each targeted site by its attack value."""
    P = phi.phi if isinstance(phi, AttackIndicator) else np.asarray(phi)
    uu = u.u if isinstance(u, AttackVector) else np.asarray(u, dtype=complex)
    z = np.asarray(z, dtype=complex)
    rows = P.astype(bool)
    out = z.copy()
    for t in range(P.shape[1]):
        out[rows[:, t]] = z[rows[:, t]] * uu[t]
    return out


def attack_delta(z: np.ndarray, site_sets, u: np.ndarray) -> np.ndarray:
    dz = np.zeros_like(np.asarray(z, dtype=complex))
    for S, ut in zip(site_sets, np.atleast_1d(u)):
        dz[list(S)] = (ut - 1.0) * np.asarray(z)[list(S)]
    return dz


# -- synthesis --------------------------------------------------------------

def synthesize_single(F: np.ndarray, z: np.ndarray, S, alpha: float) -> AttackVector:
    """Any angle is undetectable on a site whose measurements lie in ``ker F^S``."""
    S = list(S)
    zs = np.asarray(z)[S]
    if len(S) < 2 or np.linalg.norm(F[:, S] @ zs) > TAU_ABS_REL * np.linalg.norm(zs):
        raise InfeasibleAttackError("site is not vulnerable on its own")
    return AttackVector.from_angles([alpha])


def _site_images(F: np.ndarray, z: np.ndarray, site_sets) -> list[np.ndarray]:
    z = np.asarray(z)
    return [F[:, list(S)] @ z[list(S)] for S in site_sets]


def colinearity_coefficients(F: np.ndarray, z: np.ndarray, site_sets) -> np.ndarray:
    """Coefficients ``c_i`` with ``F^{S_i} z^{S_i} = c_i F^{S_1} z^{S_1}`` (``c_1 = 1``).

    Raises :class:`InfeasibleAttackError` unless all images are nonzero and colinear.
    """
    imgs = _site_images(F, z, site_sets)
    scale = np.linalg.norm(z)
    for k, a in enumerate(imgs):
        if np.linalg.norm(a) <= TAU_ABS_REL * scale:
            raise InfeasibleAttackError(f"target site #{k} is vulnerable on its own")
    if err(np.column_stack(imgs)) < 1.0 - TAU_COL:
        raise InfeasibleAttackError("targeted sites are not jointly vulnerable")
    ref = imgs[0]
    rr = np.vdot(ref, ref).real
    return np.array([np.vdot(ref, a) / rr for a in imgs])


def _solve_two(c2: complex, k: complex, alpha2_hint: float) -> tuple[complex, complex]:
    """Solve ``(u1 - 1) + (u2 - 1) c2 + k = 0`` with ``|u1| = |u2| = 1``.

    Writing ``w = c2 u2``, the point ``w`` lies on the circle of radius
    ``|c2|`` about 0 and on the unit circle about ``c = 1 - k + c2``.
    The trivial root ``u1 = u2 = 1`` is discarded; among the remaining roots
    the one with ``arg u2`` nearest ``alpha2_hint`` is returned.
    """
    rho = abs(c2)
    c = 1.0 - k + c2
    d = abs(c)
    hint = np.exp(1j * alpha2_hint)
    if d <= TANGENCY_TOL * max(1.0, rho):
        if abs(rho - 1.0) > TANGENCY_TOL:
            raise GeometricInfeasibilityError("concentric circles of different radii do not meet")
        # Coincident circles: every u2 works.
        u2 = hint
        u1 = c - c2 * u2
        return u1 / abs(u1), u2
    x = (d * d + rho * rho - 1.0) / (2.0 * d)
    h2 = rho * rho - x * x
    if h2 < -TANGENCY_TOL * max(1.0, rho * rho):
        raise GeometricInfeasibilityError("the two unit-modulus constraints have no common solution")
    h = math.sqrt(max(h2, 0.0))
    dirc = c / d
    roots = []
    for w in (dirc * (x + 1j * h), dirc * (x - 1j * h)):
        u2 = w / c2
        u1 = c - w
        roots.append((u1 / abs(u1), u2 / abs(u2)))
    trivial_free = k == 0
    cands = []
    for u1, u2 in roots:
        if trivial_free and abs(u1 - 1.0) + abs(u2 - 1.0) <= 1e-9:
            continue
        cands.append((u1, u2))
    if trivial_free and h <= TANGENCY_TOL * max(1.0, rho):
        cands = []
    if not cands:
        raise GeometricInfeasibilityError("only the trivial solution u = 1 exists (tangent circles)")
    return min(cands, key=lambda r: abs(np.angle(r[1] / hint)))


def synthesize_pair(F: np.ndarray, z: np.ndarray, S1, S2, alpha2_hint: float = 0.0) -> AttackVector:
    """Non-trivial undetectable attack on two jointly vulnerable sites."""
    c = colinearity_coefficients(F, z, [S1, S2])
    u1, u2 = _solve_two(c[1], 0.0, alpha2_hint)
    return AttackVector(np.array([u1, u2]))


def synthesize_multi(F: np.ndarray, z: np.ndarray, site_sets, free_angles, alpha2_hint: float = 0.0) -> AttackVector:
    """Undetectable attack on ``q >= 3`` jointly vulnerable sites.

    Sites 3..q take ``exp(j * free_angles)``; the first two are then solved for
    so that ``sum_i (u_i - 1) c_i = 0``.
    """
    site_sets = [list(S) for S in site_sets]
    q = len(site_sets)
    free = np.asarray(free_angles, dtype=float)
    if q < 3 or free.shape != (q - 2,):
        raise ConfigurationError("synthesize_multi needs q >= 3 sites and q - 2 free angles")
    c = colinearity_coefficients(F, z, site_sets)
    u_free = np.exp(1j * free)
    k = complex(np.sum((u_free - 1.0) * c[2:]))
    if abs(k) <= 1e-15:
        k = 0.0
    u1, u2 = _solve_two(c[1], k, alpha2_hint)
    return AttackVector(np.concatenate([[u1, u2], u_free]))


# -- evaluation -------------------------------------------------------------

@dataclass(frozen=True)
class AttackOutcome:
    z_attacked: np.ndarray
    residual_change_norm: float
    lnr_before: float
    lnr_after: float
    flagged_before: bool
    flagged_after: bool
    chi2_before: float
    chi2_after: float
    state_shift: float
    angle_deltas: np.ndarray
    detection_delta_norm: float

    def to_dict(self) -> dict:
        return {
            "residual_change_norm": self.residual_change_norm,
            "lnr_before": self.lnr_before,
            "lnr_after": self.lnr_after,
            "flagged_before": self.flagged_before,
            "flagged_after": self.flagged_after,
            "chi2_before": self.chi2_before,
            "chi2_after": self.chi2_after,
            "state_shift": self.state_shift,
            "angle_deltas_rad": [float(a) for a in self.angle_deltas],
            "verification_norm": self.detection_delta_norm,
        }


def evaluate_attack(T: TopologyMatrices, V: WlsVerification, z: np.ndarray, u: AttackVector | np.ndarray,
                    phi: AttackIndicator | np.ndarray, F: np.ndarray | None = None,
                    lnr_threshold: float = 3.0) -> AttackOutcome:
    """Residual change, detector values and estimated-state shift caused by an attack.

    ``V`` is used for both the clean and the attacked frame, so the residual
    change is exactly ``G_box dz_box``. ``detection_delta_norm`` is ``||F dz||``
    when ``F`` is given (0 otherwise).
    """
    z = np.asarray(z, dtype=complex)
    za = apply_attack(z, phi, u)
    pm = T.pseudo_mask
    rb = wls_residuals(V, z, pm)
    ra = wls_residuals(V, za, pm)
    lb = lnr_test(rb, lnr_threshold)
    la = lnr_test(ra, lnr_threshold)
    xb = V.estimate(z)
    xa = V.estimate(za)
    dz = za - z
    return AttackOutcome(
        z_attacked=za,
        residual_change_norm=float(np.linalg.norm(ra.r - rb.r)),
        lnr_before=lb.max_value, lnr_after=la.max_value,
        flagged_before=lb.flag, flagged_after=la.flag,
        chi2_before=rb.chi2_statistic, chi2_after=ra.chi2_statistic,
        state_shift=float(np.linalg.norm(xa - xb)),
        angle_deltas=np.angle(xa) - np.angle(xb),
        detection_delta_norm=float(np.linalg.norm(F @ dz)) if F is not None else 0.0,
    )
