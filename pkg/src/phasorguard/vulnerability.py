"""Vulnerability conditions and distance-to-vulnerability metrics.

Structural metrics depend on the topology only (columns of ``F``); general
metrics depend on the current measurements through ``R`` and ``z``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_frame, check_frames, check_unit_interval
from .estimation import compute_Cbox, compute_F, compute_wls_verification
from .exceptions import DegenerateSiteError, UndefinedMetricError, UnsupportedConfigurationError
from .grid import GridModel, build_topology, require_observable
from .linalg import numerical_rank, singular_values

TAU_COL = 1e-8
TAU_ABS_REL = 1e-8
ETA_GEN = 0.99
ZERO_MATRIX_ATOL = 1e-300


# -- indicator and attack-angle matrix ---------------------------------------

@dataclass(frozen=True)
class AttackIndicator:
    phi: np.ndarray
    target_sites: tuple[int, ...]

    @property
    def q(self) -> int:
        return self.phi.shape[1]


def attack_indicator(grid: GridModel, site_ids) -> AttackIndicator:
    """Binary ``m x q`` matrix with column ``t`` marking the phasors of site ``t``."""
    site_ids = tuple(site_ids)
    phi = np.zeros((grid.m, len(site_ids)))
    for t, sid in enumerate(site_ids):
        phi[list(grid.site_indices(sid)), t] = 1.0
    return AttackIndicator(phi=phi, target_sites=site_ids)


def compute_W(F: np.ndarray, z: np.ndarray, phi: AttackIndicator | np.ndarray) -> np.ndarray:
    """Attack-angle matrix ``phi^H diag(z)^H F^H F diag(z) phi``."""
    P = phi.phi if isinstance(phi, AttackIndicator) else np.asarray(phi)
    M = F @ (np.asarray(z)[:, None] * P)
    W = M.conj().T @ M
    return 0.5 * (W + W.conj().T)


# -- scalar metrics ---------------------------------------------------------

def ios(W: np.ndarray) -> float:
    """Index of separation: largest eigenvalue over the eigenvalue sum."""
    lam = np.clip(np.linalg.eigvalsh(np.asarray(W)), 0.0, None)
    total = lam.sum()
    if total <= ZERO_MATRIX_ATOL:
        raise UndefinedMetricError("IoS of a zero attack-angle matrix is undefined")
    return float(lam[-1] / total)


def err(M: np.ndarray) -> float:
    """Effective rank ratio: largest singular value over the singular-value sum."""
    s = singular_values(M)
    total = s.sum()
    if total <= ZERO_MATRIX_ATOL:
        raise UndefinedMetricError("ERR of a zero matrix is undefined")
    return float(s[0] / total)


def gram_ratio(M: np.ndarray) -> float:
    """``IoS(M^H M)``, i.e. the squared-singular-value analogue of :func:`err`."""
    s2 = singular_values(M) ** 2
    total = s2.sum()
    if total <= ZERO_MATRIX_ATOL:
        raise UndefinedMetricError("ratio of a zero matrix is undefined")
    return float(s2[0] / total)


def ios_star(F: np.ndarray, S1, S2) -> float:
    """Measurement-independent IoS lower bound for two single-phasor sites."""
    S1, S2 = list(S1), list(S2)
    if len(S1) != 1 or len(S2) != 1:
        raise UnsupportedConfigurationError("IoS* is only defined for single-phasor sites")
    a, b = F[:, S1[0]], F[:, S2[0]]
    f11 = np.vdot(a, a).real
    f22 = np.vdot(b, b).real
    if f11 <= ZERO_MATRIX_ATOL or f22 <= ZERO_MATRIX_ATOL:
        raise UndefinedMetricError("IoS* needs non-critical single measurements")
    f12 = np.vdot(a, b)
    return float(0.5 + abs(f12) / (2.0 * np.sqrt(f11 * f22)))


# -- site and pair verdicts -------------------------------------------------

@dataclass(frozen=True)
class SiteStatus:
    site: int | None
    vulnerable: bool
    metric: float


def _site_values(z: np.ndarray, S: list[int]) -> np.ndarray:
    zs = np.asarray(z)[S]
    if not np.any(zs != 0):
        raise DegenerateSiteError("all measurements of the site are zero")
    return zs


def single_site_status(F: np.ndarray, R: np.ndarray, z: np.ndarray, S, site: int | None = None) -> SiteStatus:
    """Single-site vulnerability and the metric ``||R^S z^S||``.

    A one-phasor site is never vulnerable alone. Larger sites are vulnerable
    when ``F^S z^S`` vanishes relative to ``||z^S||``.
    """
    S = list(S)
    zs = _site_values(z, S)
    metric = float(np.linalg.norm(R[:, S] @ zs))
    if len(S) == 1:
        vulnerable = False
    else:
        vulnerable = bool(np.linalg.norm(F[:, S] @ zs) <= TAU_ABS_REL * np.linalg.norm(zs))
    return SiteStatus(site=site, vulnerable=vulnerable, metric=metric)


@dataclass(frozen=True)
class ColinearityWitness:
    """``l`` with ``R^{S1} z^{S1} ~= l R^{S2} z^{S2}``; ``residual_angle`` is the fit defect (rad)."""

    l: complex
    residual_angle: float


@dataclass(frozen=True)
class PairStatus:
    sites: tuple
    structural_err: float
    general_metric: float
    general_vulnerable: bool
    practically_vulnerable: bool
    witness: ColinearityWitness | None = None


def fit_witness(a: np.ndarray, b: np.ndarray) -> ColinearityWitness:
    """Least-squares ``l = argmin ||a - l b||`` and the angle between ``a`` and ``l b``."""
    bb = np.vdot(b, b).real
    l = complex(np.vdot(b, a) / bb)
    na = np.linalg.norm(a)
    cos = min(1.0, abs(np.vdot(b, a)) / (np.sqrt(bb) * na)) if na > 0 else 1.0
    return ColinearityWitness(l=l, residual_angle=float(np.arccos(cos)))


def pair_status(F: np.ndarray, R: np.ndarray, z: np.ndarray, S1, S2, sites: tuple = (),
                eta_gen: float = ETA_GEN) -> PairStatus:
    S1, S2 = list(S1), list(S2)
    z1 = _site_values(z, S1)
    z2 = _site_values(z, S2)
    structural = err(F[:, S1 + S2])
    a = R[:, S1] @ z1
    b = R[:, S2] @ z2
    metric = err(np.column_stack([a, b]))
    combined_critical = numerical_rank(F[:, S1 + S2], scale=1.0) < len(S1) + len(S2)
    vulnerable = bool(combined_critical and metric >= 1.0 - TAU_COL)
    witness = fit_witness(a, b) if vulnerable else None
    return PairStatus(
        sites=tuple(sites), structural_err=structural, general_metric=metric,
        general_vulnerable=vulnerable, practically_vulnerable=bool(metric >= eta_gen),
        witness=witness,
    )


def structural_err(F: np.ndarray, S1, S2) -> float:
    return err(F[:, list(S1) + list(S2)])


def vulnerable_classes(F: np.ndarray, R: np.ndarray, z: np.ndarray, sites: dict) -> list[tuple]:
    """Partition of the sites that are not vulnerable alone into jointly attackable classes.

    ``sites`` maps site id to its phasor indices. Two sites share a class when
    their pair is generally vulnerable; classes are returned sorted, each as a
    sorted tuple of site ids.
    """
    ids = []
    for sid, S in sorted(sites.items()):
        try:
            if not single_site_status(F, R, z, S).vulnerable:
                ids.append(sid)
        except DegenerateSiteError:
            continue
    parent = {i: i for i in ids}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in itertools.combinations(ids, 2):
        if pair_status(F, R, z, sites[i], sites[j]).general_vulnerable:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in ids:
        groups.setdefault(find(i), []).append(i)
    return sorted(tuple(sorted(g)) for g in groups.values())


@dataclass(frozen=True)
class NullSpaceBasis:
    """Orthonormal basis (columns of ``vectors``) of ``ker F^{[S1,...,Sq]}``."""

    vectors: np.ndarray
    columns: tuple[int, ...]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def contains(self, v: np.ndarray, rtol: float = 1e-8) -> bool:
        v = np.asarray(v, dtype=complex)
        if self.dim == 0:
            return bool(np.linalg.norm(v) == 0)
        proj = self.vectors @ (self.vectors.conj().T @ v)
        return bool(np.linalg.norm(v - proj) <= rtol * max(np.linalg.norm(v), 1e-300))


def null_space_basis(F: np.ndarray, site_sets) -> NullSpaceBasis:
    cols = [i for S in site_sets for i in S]
    A = F[:, cols]
    _, s, Vh = np.linalg.svd(A)
    r = numerical_rank(A, scale=1.0)
    return NullSpaceBasis(vectors=Vh[r:].conj().T, columns=tuple(cols))


# -- structural analysis and report ----------------------------------------

@dataclass(frozen=True)
class PairRecord:
    sites: tuple[int, int]
    structural_err: float
    critical: bool
    general_metric: float | None = None
    vulnerable: bool | None = None


@dataclass(frozen=True)
class VulnerabilityReport:
    grid_name: str
    observable: bool
    eta: float
    pairs: tuple[PairRecord, ...]
    site_metrics: tuple[SiteStatus, ...] = ()
    classes: tuple[tuple[int, ...], ...] = ()
    critical_single: tuple[int, ...] = ()
    t: float | None = None

    @property
    def structural_pairs(self) -> list[PairRecord]:
        return [p for p in self.pairs if p.structural_err >= self.eta]

    def to_dict(self) -> dict:
        return {
            "grid": self.grid_name,
            "observable": self.observable,
            "eta": self.eta,
            "t": self.t,
            "critical_single_measurements": list(self.critical_single),
            "sites": [{"id": s.site, "metric": s.metric, "vulnerable": s.vulnerable}
                      for s in self.site_metrics],
            "pairs": [
                {"ids": list(p.sites), "structural_err": p.structural_err, "critical": p.critical,
                 "general_metric": p.general_metric, "vulnerable": p.vulnerable}
                for p in self.pairs
            ],
            "structural_pairs": [list(p.sites) for p in self.structural_pairs],
            "classes": [list(c) for c in self.classes],
        }


def analyze_grid(grid: GridModel, eta: float = 0.95, z: np.ndarray | None = None,
                 t: float | None = None) -> VulnerabilityReport:
    """Structural pair table for ``grid``; adds general metrics when a frame ``z`` is given."""
    check_unit_interval(eta, "eta")
    T = build_topology(grid)
    require_observable(T)
    F = compute_F(T)
    sites = grid.site_index_sets()
    crit_single = tuple(i for i in range(grid.n_phasors) if numerical_rank(F[:, [i]], scale=1.0) == 0)
    V = None
    if z is not None:
        z = check_frame(z, grid.m)
        V = compute_wls_verification(T, compute_Cbox(z, grid))
    pairs = []
    for i, j in itertools.combinations(sorted(sites), 2):
        S = sites[i] + sites[j]
        rec = PairRecord(sites=(i, j), structural_err=err(F[:, S]),
                         critical=numerical_rank(F[:, S], scale=1.0) < len(S))
        if V is not None:
            ps = pair_status(F, V.R, z, sites[i], sites[j])
            rec = PairRecord(rec.sites, rec.structural_err, rec.critical, ps.general_metric, ps.general_vulnerable)
        pairs.append(rec)
    site_metrics: tuple = ()
    classes: tuple = ()
    if V is not None:
        site_metrics = tuple(single_site_status(F, V.R, z, S, site=sid) for sid, S in sorted(sites.items()))
        classes = tuple(vulnerable_classes(F, V.R, z, sites))
    return VulnerabilityReport(
        grid_name=grid.name, observable=True, eta=float(eta), pairs=tuple(pairs),
        site_metrics=site_metrics, classes=classes, critical_single=crit_single, t=t,
    )


# -- transformer ------------------------------------------------------------

class VulnerabilityMonitor(TransformerMixin, BaseEstimator):
    """Measurement-dependent metrics for every site and site pair.

    ``fit`` takes a :class:`GridModel`. ``transform`` maps frames (complex,
    frames x m) to a real array with one column per site (``||R^S z^S||``)
    followed by one column per site pair (general ERR metric).

    Parameters
    ----------
    weighted : bool
        Build ``R`` from the per-frame WLS covariance (default) or from an
        identity covariance.
    """

    def __init__(self, weighted: bool = True):
        self.weighted = weighted

    def fit(self, grid: GridModel, y=None):
        self.grid_ = grid
        self.topology_ = build_topology(grid)
        require_observable(self.topology_)
        self.F_ = compute_F(self.topology_)
        self.sites_ = grid.site_index_sets()
        self.site_ids_ = tuple(sorted(self.sites_))
        self.pairs_ = tuple(itertools.combinations(self.site_ids_, 2))
        return self

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "sites_")
        names = [f"site_{s}" for s in self.site_ids_]
        names += [f"pair_{i}_{j}" for i, j in self.pairs_]
        return np.array(names, dtype=object)

    def verification(self, z):
        z = check_frame(z, self.topology_.m)
        C = compute_Cbox(z, self.grid_) if self.weighted else np.eye(2 * self.topology_.m)
        return compute_wls_verification(self.topology_, C)

    def frame_metrics(self, z, R: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Site metrics and pair metrics for one frame."""
        check_is_fitted(self, "sites_")
        if R is None:
            R = self.verification(z).R
        cols = {sid: R[:, S] @ z[S] for sid, S in self.sites_.items()}
        site_vals = np.array([np.linalg.norm(cols[s]) for s in self.site_ids_])
        if not self.pairs_:
            return site_vals, np.empty(0)
        stack = np.stack([np.column_stack([cols[i], cols[j]]) for i, j in self.pairs_])
        sv = np.linalg.svd(stack, compute_uv=False)
        total = sv.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            pair_vals = np.where(total > ZERO_MATRIX_ATOL, sv[:, 0] / total, np.nan)
        return site_vals, pair_vals

    def transform(self, Z) -> np.ndarray:
        check_is_fitted(self, "sites_")
        Z = check_frames(Z, self.topology_.m)
        out = np.empty((Z.shape[0], len(self.site_ids_) + len(self.pairs_)))
        for k, z in enumerate(Z):
            s, p = self.frame_metrics(z)
            out[k, :len(s)] = s
            out[k, len(s):] = p
        return out
