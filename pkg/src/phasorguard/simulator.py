"""Synthetic state series, noisy PMU frames and the per-frame monitoring loop.

States are not solved from a load flow: each non-zero-injection bus follows
an Ornstein-Uhlenbeck deviation around its nominal phasor, and zero-injection
bus voltages are then solved from ``Y_ZZ V_Z = -Y_ZN V_N`` so that the
pseudo-measurements are consistent. Randomness comes from Philox streams
keyed by ``(seed, stream, t)`` so every frame can be regenerated on its own.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_positive, check_unit_interval
from .attack import AttackSpec, AttackVector, apply_attack, attack_delta, evaluate_attack, offsets_to_u
from .attack import synthesize_multi, synthesize_pair
from .estimation import (
    DEFAULT_CHI2_SIGNIFICANCE, DEFAULT_LNR_THRESHOLD, chi2_dof, chi2_threshold, compute_Cbox, compute_F,
    compute_wls_verification, lnr_test, wls_residuals,
)
from .exceptions import ConfigurationError, FrameError
from .grid import GridModel, TopologyMatrices, build_topology, dumps_canonical, require_observable
from .linalg import numerical_rank
from .vulnerability import TAU_ABS_REL, TAU_COL, VulnerabilityMonitor, attack_indicator

STREAM_STATES = 0
STREAM_NOISE = 1
DEFAULT_DT = 0.02


def frame_rng(seed: int, stream: int, t: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream), int(t)])))


# -- states -------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileConfig:
    """OU state-profile settings.

    ``sigma_mag_state`` (p.u.) and ``sigma_ang_state`` (rad) are stationary
    standard deviations; ``reversion`` is the mean-reversion rate (1/s).
    A step event multiplies the angle deviation of ``step_bus`` by
    ``step_factor`` from frame ``step_at`` on.
    """

    sigma_mag_state: float = 0.01
    sigma_ang_state: float = 0.02
    reversion: float = 0.1
    dt: float = DEFAULT_DT
    step_bus: int | None = None
    step_at: int | None = None
    step_factor: float = 2.0

    def __post_init__(self):
        if self.sigma_mag_state < 0 or self.sigma_ang_state < 0:
            raise ConfigurationError("state standard deviations must be non-negative")
        check_positive(self.reversion, "reversion")
        check_positive(self.dt, "dt")


@dataclass(frozen=True)
class StateSeries:
    states: np.ndarray
    dt: float = DEFAULT_DT

    @property
    def T(self) -> int:
        return self.states.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.T) * self.dt


def zero_injection_projection(grid: GridModel, V: np.ndarray) -> np.ndarray:
    """Replace zero-injection bus voltages by the values that make their injection zero."""
    zi = list(grid.pseudo_buses)
    if not zi:
        return V
    Y = grid.admittance_matrix()
    nz = [b for b in range(grid.n) if b not in set(zi)]
    V = np.array(V, dtype=complex, copy=True)
    rhs = -Y[np.ix_(zi, nz)] @ V[..., nz].T
    V[..., zi] = np.linalg.solve(Y[np.ix_(zi, zi)], rhs).T
    return V


def _ou(rng: np.random.Generator, T: int, n: int, sigma: float, a: float) -> np.ndarray:
    x = np.empty((T, n))
    x[0] = sigma * rng.standard_normal(n)
    innov = sigma * math.sqrt(1.0 - a * a) * rng.standard_normal((T - 1, n)) if T > 1 else None
    for k in range(1, T):
        x[k] = a * x[k - 1] + innov[k - 1]
    return x


def generate_states(grid: GridModel, cfg: ProfileConfig | None = None, T: int = 100, seed: int = 0) -> StateSeries:
    cfg = cfg or ProfileConfig()
    if T < 1:
        raise ConfigurationError("T must be at least 1")
    rng = frame_rng(seed, STREAM_STATES)
    nominal = grid.nominal_voltages()
    a = math.exp(-cfg.reversion * cfg.dt)
    n = grid.n
    dmag = _ou(rng, T, n, cfg.sigma_mag_state, a)
    dang = _ou(rng, T, n, cfg.sigma_ang_state, a)
    if cfg.step_bus is not None and cfg.step_at is not None:
        dang[cfg.step_at:, cfg.step_bus] *= cfg.step_factor
    mag = np.clip(np.abs(nominal) + dmag, 0.9, 1.1)
    V = mag * np.exp(1j * (np.angle(nominal) + dang))
    return StateSeries(states=zero_injection_projection(grid, V), dt=cfg.dt)


# -- measurements -----------------------------------------------------------------

@dataclass(frozen=True)
class MeasurementFrame:
    t: float
    z: np.ndarray
    seed: int
    index: int

    @property
    def z_box(self) -> np.ndarray:
        return np.concatenate([self.z.real, self.z.imag])


def measure(T: TopologyMatrices, x: np.ndarray, sigma_mag: np.ndarray, sigma_phase: np.ndarray,
            rng: np.random.Generator, noise_scale: float = 1.0) -> np.ndarray:
    """``z = H x`` with relative magnitude and absolute phase noise on the PMU rows."""
    z = T.H @ np.asarray(x, dtype=complex)
    k = T.n_phasors
    z[k:] = 0.0
    rho = np.abs(z[:k]) * (1.0 + noise_scale * np.asarray(sigma_mag) * rng.standard_normal(k))
    theta = np.angle(z[:k]) + noise_scale * np.asarray(sigma_phase) * rng.standard_normal(k)
    z[:k] = rho * np.exp(1j * theta)
    return z


def measure_series(grid: GridModel, series: StateSeries, seed: int = 0, noise_scale: float = 1.0,
                   T: TopologyMatrices | None = None) -> np.ndarray:
    T = T or build_topology(grid)
    sm, sp = grid.noise_sigmas()
    return np.array([measure(T, x, sm, sp, frame_rng(seed, STREAM_NOISE, k), noise_scale)
                     for k, x in enumerate(series.states)])


# -- frames CSV ---------------------------------------------------------------------

def write_frames_csv(path, times, Z) -> None:
    Z = np.asarray(Z, dtype=complex)
    m = Z.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"{p}_{i}" for i in range(m) for p in ("re", "im")])
        for t, z in zip(times, Z):
            row = [repr(float(t))]
            for v in z:
                row += [repr(float(v.real)), repr(float(v.imag))]
            w.writerow(row)


def read_frames_csv(path, m: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["t"] or (len(rows[0]) - 1) % 2:
        raise FrameError(f"{path}: expected a header 't, re_0, im_0, ...'")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(len(rows) - 1, len(rows[0]))
    except ValueError as exc:
        raise FrameError(f"{path}: {exc}") from exc
    Z = data[:, 1::2] + 1j * data[:, 2::2]
    if m is not None and Z.shape[1] != m:
        raise FrameError(f"{path}: frames have {Z.shape[1]} measurements, grid has {m}")
    return data[:, 0], Z


# -- scenario ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectorConfig:
    """Bad-data detector and monitoring settings.

    ``site_band`` and ``pair_band`` are alarm bands on the distance to
    vulnerability: ``||R^S z^S||`` for sites and ``1 - ERR`` for pairs.
    """

    lnr_threshold: float = DEFAULT_LNR_THRESHOLD
    chi2_significance: float = DEFAULT_CHI2_SIGNIFICANCE
    window: int = 50
    site_band: float = 0.05
    pair_band: float = 0.01

    def __post_init__(self):
        check_positive(self.lnr_threshold, "lnr_threshold")
        check_unit_interval(self.chi2_significance, "chi2_significance")
        if self.window < 1:
            raise ConfigurationError("window must be at least 1")
        if self.site_band < 0 or self.pair_band < 0:
            raise ConfigurationError("alarm bands must be non-negative")


@dataclass(frozen=True)
class AttackPlan:
    """Attack schedule for a scenario.

    With ``offsets_d`` the sites get a constant time offset. With
    ``synthesize`` an undetectable attack is re-synthesized on every frame from
    the measured values (pair or multi-site), using ``alpha2_hint`` and
    ``free_angles``. The attack is active on frames ``start <= k < stop``.
    """

    sites: tuple[int, ...]
    offsets_d: tuple[float, ...] | None = None
    synthesize: bool = False
    alpha2_hint: float = 0.1
    free_angles: tuple[float, ...] = ()
    frequency_f: float = 50.0
    start: int = 0
    stop: int | None = None

    def __post_init__(self):
        if self.synthesize == (self.offsets_d is not None):
            raise ConfigurationError("an attack plan needs either offsets or synthesize=True")
        if self.offsets_d is not None:
            AttackSpec(self.sites, self.offsets_d, self.frequency_f)


@dataclass
class ScenarioResult:
    times: np.ndarray
    site_ids: tuple
    pair_ids: tuple
    site_metrics: np.ndarray
    pair_metrics: np.ndarray
    site_vulnerable: np.ndarray
    pair_vulnerable: np.ndarray
    lnr: np.ndarray
    lnr_flag: np.ndarray
    chi2: np.ndarray
    chi2_flag: np.ndarray
    attacked: np.ndarray
    site_rolling_min: np.ndarray
    pair_rolling_min: np.ndarray
    site_alarm: np.ndarray
    pair_alarm: np.ndarray
    lnr_clean: np.ndarray | None = None
    chi2_clean: np.ndarray | None = None
    lnr_flag_clean: np.ndarray | None = None
    chi2_flag_clean: np.ndarray | None = None
    state_shift: np.ndarray | None = None
    residual_change: np.ndarray | None = None
    verification_norm: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.times.shape[0]

    def summary(self) -> dict:
        def stats(a):
            a = np.asarray(a, dtype=float)
            if a.size == 0 or np.all(np.isnan(a)):
                return {"min": None, "median": None, "mean": None, "max": None}
            return {"min": float(np.nanmin(a)), "median": float(np.nanmedian(a)),
                    "mean": float(np.nanmean(a)), "max": float(np.nanmax(a))}

        out = {
            "frames": int(self.T),
            "sites": {str(s): stats(self.site_metrics[:, k]) for k, s in enumerate(self.site_ids)},
            "pairs": {f"{i}-{j}": stats(self.pair_metrics[:, k]) for k, (i, j) in enumerate(self.pair_ids)},
            "lnr": stats(self.lnr),
            "chi2": stats(self.chi2),
            "lnr_flag_rate": float(np.mean(self.lnr_flag)),
            "chi2_flag_rate": float(np.mean(self.chi2_flag)),
            "site_vulnerable_frames": int(np.any(self.site_vulnerable, axis=1).sum()),
            "pair_vulnerable_frames": int(np.any(self.pair_vulnerable, axis=1).sum()),
            "site_alarm_frames": int(np.any(self.site_alarm, axis=1).sum()),
            "pair_alarm_frames": int(np.any(self.pair_alarm, axis=1).sum()),
            "attacked_frames": int(self.attacked.sum()),
        }
        if self.pair_metrics.size:
            col = np.nanargmax(np.nanmax(self.pair_metrics, axis=0))
            out["max_pair"] = {"ids": list(self.pair_ids[col]), "max": float(np.nanmax(self.pair_metrics[:, col]))}
        if self.site_metrics.size:
            col = np.nanargmin(np.nanmean(self.site_metrics, axis=0))
            out["min_site"] = {"id": self.site_ids[col], "mean": float(np.nanmean(self.site_metrics[:, col]))}
        if self.lnr_clean is not None:
            att = self.attacked
            out["attack"] = {
                "lnr_clean": stats(self.lnr_clean[att]),
                "lnr_attacked": stats(self.lnr[att]),
                "lnr_flag_rate_clean": float(np.mean(self.lnr_flag_clean[att])) if att.any() else None,
                "lnr_flag_rate_attacked": float(np.mean(self.lnr_flag[att])) if att.any() else None,
                "state_shift": stats(self.state_shift[att]),
                "residual_change": stats(self.residual_change[att]),
                "verification_norm": stats(self.verification_norm[att]),
            }
        return out

    def to_dict(self) -> dict:
        d = {
            "meta": self.meta,
            "site_ids": list(self.site_ids),
            "pair_ids": [list(p) for p in self.pair_ids],
            "summary": self.summary(),
            "series": {
                "t": self.times,
                "lnr": self.lnr, "lnr_flag": self.lnr_flag,
                "chi2": self.chi2, "chi2_flag": self.chi2_flag,
                "attacked": self.attacked,
                "site_metrics": self.site_metrics, "pair_metrics": self.pair_metrics,
                "site_alarm": self.site_alarm, "pair_alarm": self.pair_alarm,
            },
        }
        if self.lnr_clean is not None:
            d["series"].update(lnr_clean=self.lnr_clean, chi2_clean=self.chi2_clean,
                               state_shift=self.state_shift, residual_change=self.residual_change,
                               verification_norm=self.verification_norm)
        return _jsonable(d)

    def to_json(self) -> str:
        return dumps_canonical(self.to_dict())

    def write(self, out_dir, fmt: str = "json") -> list[Path]:
        """Write ``scenario.json`` (and, for ``fmt='csv'``, the per-metric CSV files)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "scenario.json"]
        paths[0].write_text(self.to_json())
        if fmt == "csv":
            paths += self.write_csv(out)
        return paths

    def write_csv(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tables = {
            "site_metrics.csv": ([f"site_{s}" for s in self.site_ids], self.site_metrics),
            "pair_metrics.csv": ([f"pair_{i}_{j}" for i, j in self.pair_ids], self.pair_metrics),
            "site_rolling_min.csv": ([f"site_{s}" for s in self.site_ids], self.site_rolling_min),
            "pair_rolling_min.csv": ([f"pair_{i}_{j}" for i, j in self.pair_ids], self.pair_rolling_min),
        }
        det_cols = ["lnr", "lnr_flag", "chi2", "chi2_flag", "attacked"]
        det = np.column_stack([self.lnr, self.lnr_flag, self.chi2, self.chi2_flag, self.attacked])
        if self.lnr_clean is not None:
            det_cols += ["lnr_clean", "chi2_clean", "state_shift", "residual_change"]
            det = np.column_stack([det, self.lnr_clean, self.chi2_clean, self.state_shift, self.residual_change])
        tables["detection.csv"] = (det_cols, det)
        paths = []
        for name, (cols, data) in tables.items():
            p = out / name
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t"] + cols)
                for t, row in zip(self.times, np.asarray(data, dtype=float)):
                    w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
            paths.append(p)
        return paths


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def rolling_min(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing-window minimum along axis 0 (NaN entries ignored)."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] == 0:
        return x.copy()
    filled = np.where(np.isnan(x), np.inf, x)
    pad = np.full((window - 1,) + x.shape[1:], np.inf)
    view = np.lib.stride_tricks.sliding_window_view(np.concatenate([pad, filled]), window, axis=0)
    out = view.min(axis=-1)
    return np.where(np.isinf(out), np.nan, out)


def _attack_u(plan: AttackPlan, F: np.ndarray, z: np.ndarray, sets: list) -> np.ndarray:
    if not plan.synthesize:
        return offsets_to_u(AttackSpec(plan.sites, plan.offsets_d, plan.frequency_f)).u
    if len(sets) == 2:
        return synthesize_pair(F, z, sets[0], sets[1], plan.alpha2_hint).u
    return synthesize_multi(F, z, sets, plan.free_angles, plan.alpha2_hint).u


def analyze_frames(grid: GridModel, Z: np.ndarray, times: np.ndarray | None = None,
                   detector: DetectorConfig | None = None, attack: AttackPlan | None = None,
                   meta: dict | None = None) -> ScenarioResult:
    """Run detectors and vulnerability metrics on every frame of ``Z``.

    With an attack plan, frames in the attack window are attacked before they
    reach the operator; detector values on the clean frame and the attack
    impact (evaluated with the clean frame's WLS operators) are kept alongside.
    """
    detector = detector or DetectorConfig()
    T = build_topology(grid)
    require_observable(T)
    F = compute_F(T)
    Z = np.asarray(Z, dtype=complex)
    if Z.ndim != 2 or Z.shape[1] != T.m:
        raise FrameError(f"frames must have shape (T, {T.m}), got {Z.shape}")
    nT = Z.shape[0]
    times = np.arange(nT) * DEFAULT_DT if times is None else np.asarray(times, dtype=float)
    mon = VulnerabilityMonitor().fit(grid)
    sites = mon.sites_
    site_ids, pair_ids = mon.site_ids_, mon.pairs_
    multi = {s: len(sites[s]) >= 2 for s in site_ids}
    pair_critical = np.array([numerical_rank(F[:, sites[i] + sites[j]], scale=1.0) < len(sites[i]) + len(sites[j])
                              for i, j in pair_ids], dtype=bool)
    dof = chi2_dof(T)
    chi2_thr = chi2_threshold(dof, detector.chi2_significance)
    pm = T.pseudo_mask

    S_n, P_n = len(site_ids), len(pair_ids)
    site_m = np.full((nT, S_n), np.nan)
    pair_m = np.full((nT, P_n), np.nan)
    site_v = np.zeros((nT, S_n), dtype=bool)
    lnr = np.empty(nT)
    chi2 = np.empty(nT)
    attacked = np.zeros(nT, dtype=bool)
    if attack is not None:
        phi = attack_indicator(grid, attack.sites)
        sets = [sites[s] for s in attack.sites]
        stop = nT if attack.stop is None else attack.stop
        lnr_c, chi2_c = np.full(nT, np.nan), np.full(nT, np.nan)
        shift, rchange, vnorm = np.full(nT, np.nan), np.full(nT, np.nan), np.full(nT, np.nan)

    for k in range(nT):
        z = Z[k]
        if attack is not None and attack.start <= k < stop:
            Vc = compute_wls_verification(T, compute_Cbox(z, grid))
            u = _attack_u(attack, F, z, sets)
            out = evaluate_attack(T, Vc, z, AttackVector(u), phi, F, detector.lnr_threshold)
            lnr_c[k], chi2_c[k] = out.lnr_before, out.chi2_before
            shift[k], rchange[k], vnorm[k] = out.state_shift, out.residual_change_norm, out.detection_delta_norm
            z = out.z_attacked
            attacked[k] = True
        V = compute_wls_verification(T, compute_Cbox(z, grid))
        res = wls_residuals(V, z, pm)
        lnr[k] = lnr_test(res, detector.lnr_threshold).max_value
        chi2[k] = res.chi2_statistic
        s_vals, p_vals = mon.frame_metrics(z, V.R)
        for c, sid in enumerate(site_ids):
            S = sites[sid]
            zs = z[S]
            if not np.any(zs != 0):
                s_vals[c] = np.nan
            elif multi[sid]:
                site_v[k, c] = np.linalg.norm(F[:, S] @ zs) <= TAU_ABS_REL * np.linalg.norm(zs)
        site_m[k] = s_vals
        pair_m[k] = p_vals

    pair_v = pair_critical[None, :] & (np.nan_to_num(pair_m, nan=0.0) >= 1.0 - TAU_COL)
    site_rm = rolling_min(site_m, detector.window)
    pair_rm = rolling_min(1.0 - pair_m, detector.window)
    result = ScenarioResult(
        times=times, site_ids=site_ids, pair_ids=pair_ids,
        site_metrics=site_m, pair_metrics=pair_m, site_vulnerable=site_v, pair_vulnerable=pair_v,
        lnr=lnr, lnr_flag=lnr > detector.lnr_threshold, chi2=chi2, chi2_flag=chi2 > chi2_thr,
        attacked=attacked, site_rolling_min=site_rm, pair_rolling_min=pair_rm,
        site_alarm=np.nan_to_num(site_m, nan=np.inf) < detector.site_band,
        pair_alarm=np.nan_to_num(1.0 - pair_m, nan=np.inf) < detector.pair_band,
        meta={"grid": grid.name, "chi2_dof": dof, "chi2_threshold": chi2_thr,
              "detector": asdict(detector), **(meta or {})},
    )
    if attack is not None:
        result.lnr_clean, result.chi2_clean = lnr_c, chi2_c
        result.lnr_flag_clean = np.nan_to_num(lnr_c) > detector.lnr_threshold
        result.chi2_flag_clean = np.nan_to_num(chi2_c) > chi2_thr
        result.state_shift, result.residual_change, result.verification_norm = shift, rchange, vnorm
        result.meta["attack"] = _jsonable(asdict(attack))
    return result


def run_scenario(grid: GridModel, series: StateSeries, attack: AttackPlan | None = None,
                 detector: DetectorConfig | None = None, seed: int = 0, noise_scale: float = 1.0) -> ScenarioResult:
    """Measure ``series`` with seeded noise and run :func:`analyze_frames` on it."""
    Z = measure_series(grid, series, seed=seed, noise_scale=noise_scale)
    return analyze_frames(grid, Z, series.times, detector, attack,
                          meta={"seed": int(seed), "noise_scale": float(noise_scale), "dt": series.dt})


def simulate(grid: GridModel, T: int = 100, seed: int = 0, profile: ProfileConfig | None = None,
             attack: AttackPlan | None = None, detector: DetectorConfig | None = None,
             noise_scale: float = 1.0) -> ScenarioResult:
    profile = profile or ProfileConfig()
    series = generate_states(grid, profile, T, seed)
    res = run_scenario(grid, series, attack, detector, seed, noise_scale)
    res.meta["profile"] = _jsonable(asdict(profile))
    return res
