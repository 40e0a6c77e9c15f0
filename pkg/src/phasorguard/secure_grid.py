"""Greedy hardening of a PMU allocation against structural rank-1 vulnerability.

Each round collects the site pairs whose structural ERR reaches ``eta``,
repeatedly adds one phasor at the site that appears in most remaining pairs
and drops the pairs it covers, then re-checks the augmented allocation.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_unit_interval
from .estimation import compute_F
from .exceptions import ConfigurationError, HardeningInfeasibleError, IterationGuardError, ModelError
from .grid import BRANCH_CURRENT, INJECTION_CURRENT, VOLTAGE, GridModel, build_topology, is_observable
from .linalg import numerical_rank
from .vulnerability import err

CANDIDATE_POLICIES = ("branch_first", "voltage_first")


@dataclass(frozen=True)
class SecurityConfig:
    """``eta``: structural ERR threshold; ``candidate_policy``: order in which new phasors are tried."""

    eta: float = 0.95
    candidate_policy: str = "branch_first"
    max_iterations: int = 100

    def __post_init__(self):
        check_unit_interval(self.eta, "eta")
        if self.candidate_policy not in CANDIDATE_POLICIES:
            raise ConfigurationError(f"candidate_policy must be one of {CANDIDATE_POLICIES}")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be positive")


@dataclass(frozen=True)
class Addition:
    site: int
    kind: str
    bus: int | None = None
    branch: int | None = None
    end: str | None = None

    def descriptor(self) -> tuple:
        if self.kind == BRANCH_CURRENT:
            return (self.kind, self.branch, self.end)
        return (self.kind, self.bus)


@dataclass(frozen=True)
class HardeningReport:
    added: tuple[Addition, ...]
    iterations: int
    final_max_err: float
    eta: float
    initial_pairs: tuple = ()
    added_buses: tuple[int, ...] = field(default=())

    def to_dict(self, grid: GridModel | None = None) -> dict:
        label = (lambda b: grid.bus_label(b)) if grid is not None else str
        return {
            "eta": self.eta,
            "iterations": self.iterations,
            "final_max_err": self.final_max_err,
            "initial_pairs": [{"ids": [i, j], "err": e} for i, j, e in self.initial_pairs],
            "added": [
                {"site": a.site, "kind": a.kind, "bus": a.bus, "branch": a.branch, "end": a.end,
                 "bus_label": label(a.bus) if a.bus is not None else None}
                for a in self.added
            ],
            "added_buses": [label(b) for b in self.added_buses],
        }


def measurement_plan(grid: GridModel) -> dict[int, list[tuple]]:
    """Site id -> descriptors of the phasors it measures."""
    return {s.id: [grid.phasors[i].descriptor() for i in s.phasors] for s in grid.sites}


def find_structural_pairs(F: np.ndarray, sites: dict, eta: float) -> list[tuple[int, int, float]]:
    """Site pairs with ``ERR(F^{[Si,Sj]}) >= eta``, by descending ERR then ids."""
    out = []
    for i, j in itertools.combinations(sorted(sites), 2):
        e = err(F[:, list(sites[i]) + list(sites[j])])
        if e >= eta:
            out.append((i, j, e))
    return sorted(out, key=lambda t: (-t[2], t[0], t[1]))


def max_pair_err(F: np.ndarray, sites: dict) -> float:
    vals = [err(F[:, list(sites[i]) + list(sites[j])]) for i, j in itertools.combinations(sorted(sites), 2)]
    return max(vals) if vals else 0.0


def _candidates(grid: GridModel, site_id: int, policy: str) -> list[Addition]:
    site = grid.site(site_id)
    buses = sorted(site.buses)
    branch_at = lambda b: [
        Addition(site_id, BRANCH_CURRENT, bus=b, branch=br.id, end="from" if br.from_bus == b else "to")
        for br in sorted(grid.incident_branches(b), key=lambda br: br.id)
    ]
    volts = [Addition(site_id, VOLTAGE, bus=b) for b in buses]
    injections = [Addition(site_id, INJECTION_CURRENT, bus=b) for b in buses]
    if policy == "branch_first":
        out = branch_at(buses[0])
        for b in buses[1:]:
            out += branch_at(b)
        return out + volts + injections
    measured = {grid.phasor_bus(i) for i in site.phasors}
    out = [a for a in volts if a.bus in measured]
    for b in buses:
        if b in measured:
            out += branch_at(b)
    return out + volts + [a for b in buses if b not in measured for a in branch_at(b)] + injections


def next_candidate(grid: GridModel, site_id: int, policy: str = "branch_first") -> Addition:
    """First candidate phasor at ``site_id`` that the grid does not measure yet."""
    have = {p.descriptor() for p in grid.phasors}
    for a in _candidates(grid, site_id, policy):
        if a.descriptor() not in have:
            return a
    raise HardeningInfeasibleError(f"site {site_id}: every candidate phasor is already measured")


def add_phasor(grid: GridModel, a: Addition) -> GridModel:
    return grid.with_phasor(a.site, a.kind, bus=a.bus if a.kind != BRANCH_CURRENT else None,
                            branch=a.branch, end=a.end)


def most_frequent_site(pairs) -> int:
    cnt = Counter(s for p in pairs for s in p[:2])
    top = max(cnt.values())
    return min(s for s, c in cnt.items() if c == top)


def secure(grid: GridModel, cfg: SecurityConfig | None = None) -> tuple[GridModel, HardeningReport]:
    """Augment ``grid`` until no site pair has structural ERR at or above ``cfg.eta``."""
    cfg = cfg or SecurityConfig()
    T = build_topology(grid)
    if not is_observable(T):
        raise ModelError("input plan is not observable")
    added: list[Addition] = []
    initial: tuple = ()
    for it in range(1, cfg.max_iterations + 1):
        F = compute_F(build_topology(grid))
        sites = grid.site_index_sets()
        found = find_structural_pairs(F, sites, cfg.eta)
        if it == 1:
            initial = tuple(found)
        if not found:
            buses = tuple(sorted({a.bus for a in added if a.bus is not None}))
            return grid, HardeningReport(tuple(added), it - 1, max_pair_err(F, sites), cfg.eta, initial, buses)
        pairs = [(i, j) for i, j, _ in found]
        while pairs:
            s = most_frequent_site(pairs)
            a = next_candidate(grid, s, cfg.candidate_policy)
            grid = add_phasor(grid, a)
            added.append(a)
            pairs = [p for p in pairs if s not in p]
    raise IterationGuardError(f"no secure plan within {cfg.max_iterations} rounds")


@dataclass(frozen=True)
class HardeningCheck:
    secure: bool
    max_err: float
    structural_pairs: tuple
    critical_pair_fraction: float


def verify_hardened(grid: GridModel, cfg: SecurityConfig | None = None) -> HardeningCheck:
    """Recompute ``F`` and check that no site pair reaches ``eta``.

    Also reports the share of site pairs whose combined measurement set is
    still critical, which can stay large even on a secure plan.
    """
    cfg = cfg or SecurityConfig()
    T = build_topology(grid)
    if not is_observable(T):
        raise ModelError("plan is not observable")
    F = compute_F(T)
    sites = grid.site_index_sets()
    found = find_structural_pairs(F, sites, cfg.eta)
    pairs = list(itertools.combinations(sorted(sites), 2))
    crit = sum(numerical_rank(F[:, sites[i] + sites[j]], scale=1.0) < len(sites[i]) + len(sites[j])
               for i, j in pairs)
    return HardeningCheck(
        secure=not found, max_err=max_pair_err(F, sites), structural_pairs=tuple(found),
        critical_pair_fraction=crit / len(pairs) if pairs else 0.0,
    )


class SecureGrid(BaseEstimator):
    """Estimator wrapper: ``fit(grid)`` stores ``hardened_grid_`` and ``report_``."""

    def __init__(self, eta: float = 0.95, candidate_policy: str = "branch_first", max_iterations: int = 100):
        self.eta = eta
        self.candidate_policy = candidate_policy
        self.max_iterations = max_iterations

    def fit(self, grid: GridModel, y=None):
        cfg = SecurityConfig(self.eta, self.candidate_policy, self.max_iterations)
        self.hardened_grid_, self.report_ = secure(grid, cfg)
        return self

    def transform(self, grid: GridModel) -> GridModel:
        """Add the fitted phasors to ``grid`` (which must match the fitted input)."""
        check_is_fitted(self, "report_")
        for a in self.report_.added:
            grid = add_phasor(grid, a)
        return grid
