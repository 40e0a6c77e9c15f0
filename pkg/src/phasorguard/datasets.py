"""Bundled and synthetic grids."""

from __future__ import annotations

from importlib import resources

import numpy as np

from .grid import GridModel, build_topology, grid_from_dict, is_observable, make_grid
import json


def ieee39() -> GridModel:
    """IEEE-39 bus benchmark with the PMU allocation and time-reference sites of the study."""
    text = resources.files("phasorguard").joinpath("data/ieee39.json").read_text()
    return grid_from_dict(json.loads(text))


def two_bus(phasors=(("V", 0), ("I", 0, "from"))) -> GridModel:
    """Two buses joined by a lossless line y = -10j."""
    return make_grid(2, [(0, 1, -10j)], phasors, name="two-bus")


def three_bus_chain() -> GridModel:
    """Chain 0-1-2 with y = -10j per line; phasors V0, I01, I12, V2 (one site each)."""
    return make_grid(
        3, [(0, 1, -10j), (1, 2, -10j)],
        [("V", 0), ("I", 0, "from"), ("I", 1, "from"), ("V", 2)],
        name="three-bus chain",
    )


def random_grid(rng: np.random.Generator, n_buses: int = 4, max_rows: int = 12,
                single_phasor_sites: bool = True, extra_edges: int = 1,
                max_tries: int = 200) -> GridModel:
    """Random observable grid with at most ``max_rows`` PMU phasors.

    Lines get admittance ``g - jb`` with ``g`` in [0.5, 2] and ``b`` in [5, 20].
    With ``single_phasor_sites`` every phasor is its own site; otherwise
    phasors measured at the same bus share a site.
    """
    for _ in range(max_tries):
        edges = set()
        for k in range(1, n_buses):
            edges.add((int(rng.integers(0, k)), k))
        for _ in range(extra_edges):
            i, j = sorted(rng.choice(n_buses, size=2, replace=False).tolist())
            edges.add((i, j))
        edges = sorted(edges)
        branches = [(i, j, complex(rng.uniform(0.5, 2.0), -rng.uniform(5.0, 20.0))) for i, j in edges]
        pool = [("V", b) for b in range(n_buses)] + [("Iinj", b) for b in range(n_buses)]
        pool += [("I", k, end) for k in range(len(edges)) for end in ("from", "to")]
        k = int(rng.integers(n_buses + 1, min(max_rows, len(pool)) + 1))
        chosen = [pool[i] for i in sorted(rng.choice(len(pool), size=k, replace=False))]
        if single_phasor_sites:
            sites = None
        else:
            by_bus: dict[int, list[int]] = {}
            for idx, ph in enumerate(chosen):
                bus = ph[1] if ph[0] != "I" else (edges[ph[1]][0] if ph[2] == "from" else edges[ph[1]][1])
                by_bus.setdefault(bus, []).append(idx)
            sites = list(by_bus.values())
        grid = make_grid(n_buses, branches, chosen, sites, name="random")
        if is_observable(build_topology(grid)):
            return grid
    raise RuntimeError("could not draw an observable random grid")
