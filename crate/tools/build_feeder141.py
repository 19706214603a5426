#!/usr/bin/env python3
"""Build the bundled 141-bus feeder document from MATPOWER's case141.m.

Usage: build_feeder141.py <path/to/case141.m> <out.json>

Impedances are converted from ohms to per-unit on a 10 MVA / 12.47 kV base.
Loads are given in kVA at 0.85 power factor. PV (22 x 1.5 MW) and shunt
capacitor (5 x 0.1 MVAr) placements are drawn from the load buses with
random.Random(PLACEMENT_SEED), PVs first, then SCs from the remaining buses.
"""
import json
import math
import random
import re
import sys

PLACEMENT_SEED = 20250141
NUM_PV = 22
PV_MW = 1.5
NUM_SC = 5
SC_MVAR = 0.1
BASE_MVA = 10.0
BASE_KV = 12.47
PF = 0.85


def matrix(src, name):
    m = re.search(r"mpc\.%s = \[[^\n]*\n(.*?)\];" % name, src, re.S)
    rows = []
    for line in m.group(1).splitlines():
        line = line.split("%")[0].strip().rstrip(";")
        if line:
            rows.append([float(v) for v in line.split()])
    return rows


def main():
    src = open(sys.argv[1]).read()
    buses = matrix(src, "bus")
    branches = matrix(src, "branch")
    zbase = BASE_KV ** 2 / BASE_MVA
    sin_phi = math.sin(math.acos(PF))

    load_buses = [int(b[0]) for b in buses if b[2] > 0]
    rng = random.Random(PLACEMENT_SEED)
    pv = sorted(rng.sample(load_buses, NUM_PV))
    rest = [b for b in load_buses if b not in pv]
    sc = sorted(rng.sample(rest, NUM_SC))

    out_buses = []
    for b in buses:
        bid = int(b[0])
        kva = b[2]
        entry = {
            "id": bid,
            "kind": "slack" if int(b[1]) == 3 else "load",
            "p_load_nom": round(kva * PF / 1e3, 9),
            "q_load_nom": round(kva * sin_phi / 1e3, 9),
            "pv_capacity": PV_MW if bid in pv else 0.0,
        }
        if bid in sc:
            entry["sc"] = {"q_mvar": SC_MVAR}
        out_buses.append(entry)

    out_branches = [
        {
            "from": int(br[0]),
            "to": int(br[1]),
            "r": round(br[2] / zbase, 12),
            "x": round(br[3] / zbase, 12),
        }
        for br in branches
    ]

    doc = {
        "name": "ieee-141-bus (Khodr et al. Caracas feeder)",
        "base_mva": BASE_MVA,
        "buses": out_buses,
        "branches": out_branches,
    }
    with open(sys.argv[2], "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
