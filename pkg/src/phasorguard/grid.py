"""Grid model, PMU allocation and the measurement-to-state matrices.

Measurement rows are ordered as the PMU phasors (by ``PhasorPoint.index``)
followed by one zero-injection pseudo-row per zero-injection bus, in bus order.
Pseudo-rows belong to no site and are never attack targets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .exceptions import ModelError, ObservabilityError
from .linalg import numerical_rank, rect_matrix

VOLTAGE = "voltage"
BRANCH_CURRENT = "branch_current"
INJECTION_CURRENT = "injection_current"
PHASOR_KINDS = (VOLTAGE, BRANCH_CURRENT, INJECTION_CURRENT)

# Pseudo-measurement noise std (p.u.); keeps zero-injection rows in both LS and WLS.
PSEUDO_SIGMA = 1e-6
DEFAULT_SIGMA_MAG = 1e-3
DEFAULT_SIGMA_PHASE = 1e-3


@dataclass(frozen=True)
class Bus:
    id: int
    shunt_admittance: complex = 0j
    zero_injection: bool = False
    name: str | None = None
    v_nominal: complex | None = None


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    series_admittance: complex
    shunt_half: complex = 0j


@dataclass(frozen=True)
class PhasorPoint:
    """One PMU phasor channel.

    ``bus`` is set for voltage and injection-current channels; ``branch`` and
    ``end`` ("from" or "to") for branch-current channels. ``sigma_mag`` is the
    relative magnitude noise std and ``sigma_phase`` the phase noise std (rad).
    """

    index: int
    kind: str
    site: int
    bus: int | None = None
    branch: int | None = None
    end: str | None = None
    sigma_mag: float = DEFAULT_SIGMA_MAG
    sigma_phase: float = DEFAULT_SIGMA_PHASE

    def descriptor(self) -> tuple:
        """Identity of the measured quantity, independent of its row index."""
        if self.kind == BRANCH_CURRENT:
            return (self.kind, self.branch, self.end)
        return (self.kind, self.bus)


@dataclass(frozen=True)
class Site:
    """Group of PMUs sharing one time reference.

    ``buses`` lists every bus of the group, including buses without a PMU;
    it is what the hardening step draws new channels from.
    """

    id: int
    phasors: tuple[int, ...]
    buses: tuple[int, ...] = ()
    name: str | None = None


@dataclass(frozen=True)
class TopologyMatrices:
    H: np.ndarray
    H_box: np.ndarray
    n_phasors: int

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def pseudo_mask(self) -> np.ndarray:
        mask = np.zeros(self.m, dtype=bool)
        mask[self.n_phasors:] = True
        return mask


@dataclass(frozen=True)
class GridModel:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    phasors: tuple[PhasorPoint, ...]
    sites: tuple[Site, ...]
    name: str = ""
    _site_lookup: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "phasors", tuple(sorted(self.phasors, key=lambda p: p.index)))
        sites = []
        for s in sorted(self.sites, key=lambda s: s.id):
            buses = s.buses or tuple(sorted({self._phasor_bus(self.phasors[i]) for i in s.phasors}))
            sites.append(replace(s, phasors=tuple(s.phasors), buses=tuple(buses)))
        object.__setattr__(self, "sites", tuple(sites))
        self._validate()
        object.__setattr__(self, "_site_lookup", {s.id: s for s in self.sites})

    # -- validation -------------------------------------------------------
    def _validate(self) -> None:
        n = len(self.buses)
        if [b.id for b in self.buses] != list(range(n)):
            raise ModelError("bus ids must be unique and contiguous from 0")
        for b in self.buses:
            if not _finite(b.shunt_admittance):
                raise ModelError(f"bus {b.id}: non-finite shunt admittance")
        if [br.id for br in self.branches] != list(range(len(self.branches))):
            raise ModelError("branch ids must be unique and contiguous from 0")
        for br in self.branches:
            if not (0 <= br.from_bus < n and 0 <= br.to_bus < n):
                raise ModelError(f"branch {br.id}: dangling bus reference")
            if br.from_bus == br.to_bus:
                raise ModelError(f"branch {br.id}: from_bus equals to_bus")
            if not (_finite(br.series_admittance) and _finite(br.shunt_half)):
                raise ModelError(f"branch {br.id}: non-finite admittance")
            if br.series_admittance == 0:
                raise ModelError(f"branch {br.id}: zero series admittance")
        if [p.index for p in self.phasors] != list(range(len(self.phasors))):
            raise ModelError("phasor indices must be unique and contiguous from 0")
        seen = set()
        for p in self.phasors:
            if p.kind not in PHASOR_KINDS:
                raise ModelError(f"phasor {p.index}: unknown kind {p.kind!r}")
            if p.kind == BRANCH_CURRENT:
                if p.branch is None or not 0 <= p.branch < len(self.branches):
                    raise ModelError(f"phasor {p.index}: dangling branch reference")
                if p.end not in ("from", "to"):
                    raise ModelError(f"phasor {p.index}: end must be 'from' or 'to'")
            elif p.bus is None or not 0 <= p.bus < n:
                raise ModelError(f"phasor {p.index}: dangling bus reference")
            if not (p.sigma_mag >= 0 and p.sigma_phase >= 0):
                raise ModelError(f"phasor {p.index}: negative noise std")
            if p.descriptor() in seen:
                raise ModelError(f"phasor {p.index}: duplicate measured quantity {p.descriptor()}")
            seen.add(p.descriptor())
        covered: dict[int, int] = {}
        site_ids = set()
        for s in self.sites:
            if s.id in site_ids:
                raise ModelError(f"duplicate site id {s.id}")
            site_ids.add(s.id)
            if not s.phasors:
                raise ModelError(f"site {s.id} has no phasors")
            for i in s.phasors:
                if not 0 <= i < len(self.phasors):
                    raise ModelError(f"site {s.id}: unknown phasor {i}")
                if i in covered:
                    raise ModelError(f"phasor {i} belongs to sites {covered[i]} and {s.id}")
                covered[i] = s.id
            for b in s.buses:
                if not 0 <= b < n:
                    raise ModelError(f"site {s.id}: dangling bus reference {b}")
        if len(covered) != len(self.phasors):
            missing = sorted(set(range(len(self.phasors))) - set(covered))
            raise ModelError(f"phasors {missing} belong to no site")
        for p in self.phasors:
            if covered[p.index] != p.site:
                raise ModelError(f"phasor {p.index} declares site {p.site} but is listed in {covered[p.index]}")

    # -- sizes and lookups ----------------------------------------------
    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def n_phasors(self) -> int:
        return len(self.phasors)

    @property
    def pseudo_buses(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses if b.zero_injection)

    @property
    def m(self) -> int:
        return self.n_phasors + len(self.pseudo_buses)

    @property
    def site_ids(self) -> tuple[int, ...]:
        return tuple(s.id for s in self.sites)

    def site(self, site_id: int) -> Site:
        try:
            return self._site_lookup[site_id]
        except KeyError:
            raise ModelError(f"unknown site {site_id}") from None

    def site_indices(self, site_id: int) -> list[int]:
        return list(self.site(site_id).phasors)

    def site_index_sets(self) -> dict[int, list[int]]:
        return {s.id: list(s.phasors) for s in self.sites}

    def site_of_bus_name(self, name: str) -> int:
        """Site id containing the bus whose ``name`` is given."""
        for s in self.sites:
            if any(self.buses[b].name == name for b in s.buses):
                return s.id
        raise ModelError(f"no site contains bus named {name!r}")

    def bus_label(self, bus: int) -> str:
        return self.buses[bus].name or str(bus)

    def _phasor_bus(self, p: PhasorPoint) -> int:
        if p.kind == BRANCH_CURRENT:
            br = self.branches[p.branch]
            return br.from_bus if p.end == "from" else br.to_bus
        return p.bus

    def phasor_bus(self, index: int) -> int:
        """Bus at which a phasor is physically measured."""
        return self._phasor_bus(self.phasors[index])

    def incident_branches(self, bus: int) -> list[Branch]:
        return [br for br in self.branches if bus in (br.from_bus, br.to_bus)]

    def noise_sigmas(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-row (sigma_mag, sigma_phase) for the PMU phasors."""
        sm = np.array([p.sigma_mag for p in self.phasors], dtype=float)
        sp = np.array([p.sigma_phase for p in self.phasors], dtype=float)
        return sm, sp

    def admittance_matrix(self) -> np.ndarray:
        n = self.n
        Y = np.zeros((n, n), dtype=complex)
        for b in self.buses:
            Y[b.id, b.id] += b.shunt_admittance
        for br in self.branches:
            i, j, y, ys = br.from_bus, br.to_bus, br.series_admittance, br.shunt_half
            Y[i, i] += y + ys
            Y[j, j] += y + ys
            Y[i, j] -= y
            Y[j, i] -= y
        return Y

    def nominal_voltages(self) -> np.ndarray:
        return np.array([1.0 + 0j if b.v_nominal is None else b.v_nominal for b in self.buses])

    def with_phasor(self, site_id: int, kind: str, *, bus: int | None = None,
                    branch: int | None = None, end: str | None = None,
                    sigma_mag: float | None = None, sigma_phase: float | None = None) -> "GridModel":
        """Return a new grid with one extra phasor appended to ``site_id``.

        Noise std defaults to those of the site's first phasor.
        """
        site = self.site(site_id)
        ref = self.phasors[site.phasors[0]]
        p = PhasorPoint(
            index=self.n_phasors, kind=kind, site=site_id, bus=bus, branch=branch, end=end,
            sigma_mag=ref.sigma_mag if sigma_mag is None else sigma_mag,
            sigma_phase=ref.sigma_phase if sigma_phase is None else sigma_phase,
        )
        new_sites = tuple(
            replace(s, phasors=s.phasors + (p.index,)) if s.id == site_id else s for s in self.sites
        )
        return GridModel(self.buses, self.branches, self.phasors + (p,), new_sites, self.name)


def _finite(c: complex) -> bool:
    return math.isfinite(c.real) and math.isfinite(c.imag)


# -- topology ------------------------------------------------------------

def phasor_row(grid: GridModel, p: PhasorPoint, Y: np.ndarray | None = None) -> np.ndarray:
    row = np.zeros(grid.n, dtype=complex)
    if p.kind == VOLTAGE:
        row[p.bus] = 1.0
    elif p.kind == INJECTION_CURRENT:
        row[:] = (grid.admittance_matrix() if Y is None else Y)[p.bus]
    else:
        br = grid.branches[p.branch]
        i, j = (br.from_bus, br.to_bus) if p.end == "from" else (br.to_bus, br.from_bus)
        row[i] += br.series_admittance + br.shunt_half
        row[j] -= br.series_admittance
    return row


def build_topology(grid: GridModel) -> TopologyMatrices:
    """Complex H (m x n) and its rectangular embedding H_box (2m x 2n)."""
    Y = grid.admittance_matrix()
    rows = [phasor_row(grid, p, Y) for p in grid.phasors]
    rows += [Y[b] for b in grid.pseudo_buses]
    H = np.array(rows, dtype=complex).reshape(len(rows), grid.n)
    return TopologyMatrices(H=H, H_box=rect_matrix(H), n_phasors=grid.n_phasors)


def is_observable(T: TopologyMatrices | np.ndarray) -> bool:
    H = T.H if isinstance(T, TopologyMatrices) else np.asarray(T)
    if H.shape[0] < H.shape[1]:
        return False
    return numerical_rank(H) == H.shape[1]


def require_observable(T: TopologyMatrices) -> None:
    if not is_observable(T):
        raise ObservabilityError(
            f"topology matrix has rank {numerical_rank(T.H)} < n = {T.n}; grid is not observable"
        )


# -- JSON ----------------------------------------------------------------

def _c(z: complex) -> dict:
    return {"re": float(z.real), "im": float(z.imag)}


def _from_c(d: Any, what: str) -> complex:
    if d is None:
        return 0j
    try:
        return complex(float(d["re"]), float(d["im"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"{what}: expected {{'re', 'im'}} object, got {d!r}") from exc


def grid_to_dict(grid: GridModel) -> dict:
    buses = []
    for b in grid.buses:
        d = {"id": b.id, "shunt": _c(b.shunt_admittance), "zero_injection": b.zero_injection}
        if b.name is not None:
            d["name"] = b.name
        if b.v_nominal is not None:
            d["v_nominal"] = _c(b.v_nominal)
        buses.append(d)
    branches = [
        {"id": br.id, "from": br.from_bus, "to": br.to_bus,
         "y": _c(br.series_admittance), "y_shunt_half": _c(br.shunt_half)}
        for br in grid.branches
    ]
    phasors = []
    for p in grid.phasors:
        d = {"index": p.index, "kind": p.kind, "site": p.site,
             "sigma_mag": p.sigma_mag, "sigma_phase": p.sigma_phase}
        if p.kind == BRANCH_CURRENT:
            d["branch"], d["end"] = p.branch, p.end
        else:
            d["bus"] = p.bus
        phasors.append(d)
    sites = []
    for s in grid.sites:
        d = {"id": s.id, "phasors": list(s.phasors), "buses": list(s.buses)}
        if s.name is not None:
            d["name"] = s.name
        sites.append(d)
    out = {"buses": buses, "branches": branches, "phasors": phasors, "sites": sites}
    if grid.name:
        out["name"] = grid.name
    return out


def grid_from_dict(d: dict) -> GridModel:
    try:
        buses = []
        for b in d["buses"]:
            vn = b.get("v_nominal")
            buses.append(Bus(
                id=int(b["id"]),
                shunt_admittance=_from_c(b.get("shunt"), f"bus {b.get('id')} shunt"),
                zero_injection=bool(b.get("zero_injection", False)),
                name=b.get("name"),
                v_nominal=None if vn is None else _from_c(vn, f"bus {b.get('id')} v_nominal"),
            ))
        branches = [
            Branch(id=int(br["id"]), from_bus=int(br["from"]), to_bus=int(br["to"]),
                   series_admittance=_from_c(br["y"], f"branch {br.get('id')} y"),
                   shunt_half=_from_c(br.get("y_shunt_half"), f"branch {br.get('id')} y_shunt_half"))
            for br in d.get("branches", [])
        ]
        phasors = [
            PhasorPoint(
                index=int(p["index"]), kind=p["kind"], site=int(p["site"]),
                bus=None if p.get("bus") is None else int(p["bus"]),
                branch=None if p.get("branch") is None else int(p["branch"]),
                end=p.get("end"),
                sigma_mag=float(p.get("sigma_mag", DEFAULT_SIGMA_MAG)),
                sigma_phase=float(p.get("sigma_phase", DEFAULT_SIGMA_PHASE)),
            )
            for p in d["phasors"]
        ]
        sites = [
            Site(id=int(s["id"]), phasors=tuple(int(i) for i in s["phasors"]),
                 buses=tuple(int(b) for b in s.get("buses", ())), name=s.get("name"))
            for s in d["sites"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"malformed grid document: {exc!r}") from exc
    return GridModel(buses, branches, phasors, sites, name=d.get("name", ""))


def dumps_canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def load_grid(path: str | Path) -> GridModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: invalid JSON ({exc})") from exc
    return grid_from_dict(doc)


def save_grid(grid: GridModel, path: str | Path) -> None:
    Path(path).write_text(dumps_canonical(grid_to_dict(grid)))


def make_grid(n_buses: int, branches: Iterable[tuple[int, int, complex]] | Iterable[tuple[int, int, complex, complex]],
              phasors: Iterable[tuple], sites: Iterable[Iterable[int]] | None = None,
              zero_injection: Iterable[int] = (), name: str = "") -> GridModel:
    """Convenience constructor for small hand-built grids.

    ``phasors`` entries are ``("V", bus)``, ``("Iinj", bus)`` or
    ``("I", branch, "from"|"to")``. ``sites`` lists phasor indices per site;
    by default every phasor is its own site.
    """
    zi = set(zero_injection)
    buses = [Bus(i, zero_injection=i in zi) for i in range(n_buses)]
    brs = []
    for k, b in enumerate(branches):
        i, j, y, *rest = b
        brs.append(Branch(k, i, j, complex(y), complex(rest[0]) if rest else 0j))
    spec = list(phasors)
    site_lists = [list(s) for s in sites] if sites is not None else [[i] for i in range(len(spec))]
    owner = {i: sid for sid, s in enumerate(site_lists) for i in s}
    pts = []
    for idx, ph in enumerate(spec):
        tag = ph[0]
        if tag == "V":
            pts.append(PhasorPoint(idx, VOLTAGE, owner[idx], bus=ph[1]))
        elif tag == "Iinj":
            pts.append(PhasorPoint(idx, INJECTION_CURRENT, owner[idx], bus=ph[1]))
        elif tag == "I":
            pts.append(PhasorPoint(idx, BRANCH_CURRENT, owner[idx], branch=ph[1], end=ph[2]))
        else:
            raise ModelError(f"unknown phasor tag {tag!r}")
    site_objs = [Site(sid, tuple(s)) for sid, s in enumerate(site_lists)]
    return GridModel(buses, brs, pts, site_objs, name=name)
