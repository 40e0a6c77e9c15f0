"""Regenerate src/phasorguard/data/ieee39.json.

Branch impedances and the nominal operating point are the MATPOWER ``case39``
tables. Transformer taps are not modeled (branches are plain pi-sections).
Current PMUs measure the injection current of their bus; voltage+current PMUs
add the bus voltage. Buses with neither load nor generation in the classic
New England data are zero-injection.

    python scripts/make_ieee39.py
"""

from __future__ import annotations

import math
from pathlib import Path

from phasorguard.grid import (
    INJECTION_CURRENT, VOLTAGE, Branch, Bus, GridModel, PhasorPoint, Site, save_grid,
)

# fbus, tbus, r, x, b  (p.u. on 100 MVA)
BRANCHES = [
    (1, 2, 0.0035, 0.0411, 0.6987), (1, 39, 0.001, 0.025, 0.75), (2, 3, 0.0013, 0.0151, 0.2572),
    (2, 25, 0.007, 0.0086, 0.146), (2, 30, 0, 0.0181, 0), (3, 4, 0.0013, 0.0213, 0.2214),
    (3, 18, 0.0011, 0.0133, 0.2138), (4, 5, 0.0008, 0.0128, 0.1342), (4, 14, 0.0008, 0.0129, 0.1382),
    (5, 6, 0.0002, 0.0026, 0.0434), (5, 8, 0.0008, 0.0112, 0.1476), (6, 7, 0.0006, 0.0092, 0.113),
    (6, 11, 0.0007, 0.0082, 0.1389), (6, 31, 0, 0.025, 0), (7, 8, 0.0004, 0.0046, 0.078),
    (8, 9, 0.0023, 0.0363, 0.3804), (9, 39, 0.001, 0.025, 1.2), (10, 11, 0.0004, 0.0043, 0.0729),
    (10, 13, 0.0004, 0.0043, 0.0729), (10, 32, 0, 0.02, 0), (12, 11, 0.0016, 0.0435, 0),
    (12, 13, 0.0016, 0.0435, 0), (13, 14, 0.0009, 0.0101, 0.1723), (14, 15, 0.0018, 0.0217, 0.366),
    (15, 16, 0.0009, 0.0094, 0.171), (16, 17, 0.0007, 0.0089, 0.1342), (16, 19, 0.0016, 0.0195, 0.304),
    (16, 21, 0.0008, 0.0135, 0.2548), (16, 24, 0.0003, 0.0059, 0.068), (17, 18, 0.0007, 0.0082, 0.1319),
    (17, 27, 0.0013, 0.0173, 0.3216), (19, 20, 0.0007, 0.0138, 0), (19, 33, 0.0007, 0.0142, 0),
    (20, 34, 0.0009, 0.018, 0), (21, 22, 0.0008, 0.014, 0.2565), (22, 23, 0.0006, 0.0096, 0.1846),
    (22, 35, 0, 0.0143, 0), (23, 24, 0.0022, 0.035, 0.361), (23, 36, 0.0005, 0.0272, 0),
    (25, 26, 0.0032, 0.0323, 0.531), (25, 37, 0.0006, 0.0232, 0), (26, 27, 0.0014, 0.0147, 0.2396),
    (26, 28, 0.0043, 0.0474, 0.7802), (26, 29, 0.0057, 0.0625, 1.029), (28, 29, 0.0014, 0.0151, 0.249),
    (29, 38, 0.0008, 0.0156, 0),
]

# Solved operating point (Vm p.u., Va deg), buses 1..39.
VM_VA = [
    (1.0393836, -13.536602), (1.0484941, -9.7852666), (1.0307077, -12.276384), (1.00446, -12.626734),
    (1.0060063, -11.192339), (1.0082256, -10.40833), (0.99839728, -12.755626), (0.99787232, -13.335844),
    (1.038332, -14.178442), (1.0178431, -8.170875), (1.0133858, -8.9369663), (1.000815, -8.9988236),
    (1.014923, -8.9299272), (1.012319, -10.715295), (1.0161854, -11.345399), (1.0325203, -10.033348),
    (1.0342365, -11.116436), (1.0315726, -11.986168), (1.0501068, -5.4100729), (0.99101054, -6.8211783),
    (1.0323192, -7.6287461), (1.0501427, -3.1831199), (1.0451451, -3.3812763), (1.038001, -9.9137585),
    (1.0576827, -8.3692354), (1.0525613, -9.4387696), (1.0383449, -11.362152), (1.0503737, -5.9283592),
    (1.0501149, -3.1698741), (1.0499, -7.3704746), (0.982, 0.0), (0.9841, -0.1884374),
    (0.9972, -0.19317445), (1.0123, -1.631119), (1.0494, 1.7765069), (1.0636, 4.4684374),
    (1.0275, -1.5828988), (1.0265, 3.8928177), (1.03, -14.535256),
]

ZERO_INJECTION = [1, 2, 5, 6, 9, 10, 11, 13, 14, 17, 19, 22]
VOLTAGE_AND_CURRENT = [30, 37, 28, 38, 18, 39, 12, 16, 7, 31, 32, 34, 33, 20, 25, 26, 29]
CURRENT_ONLY = [24, 35, 15, 21, 4, 23, 36]
MULTI_BUS_SITES = [(2, 30), (6, 31), (10, 32), (11, 12, 13), (19, 20, 33, 34), (22, 35), (23, 36),
                   (25, 37), (29, 38)]


def build() -> GridModel:
    buses = [
        Bus(id=k - 1, zero_injection=k in ZERO_INJECTION, name=str(k),
            v_nominal=complex(vm * math.cos(math.radians(va)), vm * math.sin(math.radians(va))))
        for k, (vm, va) in enumerate(VM_VA, start=1)
    ]
    branches = [
        Branch(id=k, from_bus=f - 1, to_bus=t - 1, series_admittance=1 / complex(r, x),
               shunt_half=complex(0, b / 2))
        for k, (f, t, r, x, b) in enumerate(BRANCHES)
    ]
    groups = {b: g for g in MULTI_BUS_SITES for b in g}
    pmu_buses = sorted(VOLTAGE_AND_CURRENT + CURRENT_ONLY)
    phasors: list[PhasorPoint] = []
    members: dict[int, list[int]] = {}
    for b in pmu_buses:
        group = groups.get(b, (b,))
        sid = min(group)
        if b in VOLTAGE_AND_CURRENT:
            phasors.append(PhasorPoint(len(phasors), VOLTAGE, sid, bus=b - 1))
            members.setdefault(sid, []).append(len(phasors) - 1)
        phasors.append(PhasorPoint(len(phasors), INJECTION_CURRENT, sid, bus=b - 1))
        members.setdefault(sid, []).append(len(phasors) - 1)
    sites = []
    for sid, idx in sorted(members.items()):
        group = groups.get(sid, None) or next((g for g in MULTI_BUS_SITES if sid in g), (sid,))
        sites.append(Site(id=sid, phasors=tuple(idx), buses=tuple(b - 1 for b in group),
                          name=",".join(str(b) for b in group)))
    return GridModel(buses, branches, phasors, sites, name="IEEE-39 (reference PMU allocation)")


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "phasorguard" / "data" / "ieee39.json"
    save_grid(build(), out)
    print(f"wrote {out}")
