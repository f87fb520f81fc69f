#!/usr/bin/env python3
"""Convert a MATPOWER-style case (as shipped with PYPOWER) into the gnnopf JSON case schema.

Powers are written in per-unit on baseMVA; generator cost coefficients are
rescaled so the quadratic is evaluated on per-unit active power. Bus shunts,
transformer taps, phase shifts and thermal ratings are dropped (the schema
has no place for them).

    python3 tools/convert_matpower.py case30 data/ieee30.json
"""
import argparse
import importlib
import json


def convert(name):
    mod = importlib.import_module(f"pypower.{name}")
    ppc = getattr(mod, name)()
    base = float(ppc["baseMVA"])
    bus, gen, branch, gencost = ppc["bus"], ppc["gen"], ppc["branch"], ppc["gencost"]

    index = {int(row[0]): i for i, row in enumerate(bus)}
    kinds = {1: "load", 2: "generator", 3: "slack"}
    buses = []
    for i, row in enumerate(bus):
        buses.append({
            "id": i,
            "kind": kinds[int(row[1])],
            "v_min": float(row[12]),
            "v_max": float(row[11]),
            "p_load_ref": float(row[2]) / base,
            "q_load_ref": float(row[3]) / base,
        })

    branches = []
    for row in branch:
        if int(row[10]) == 0:
            continue
        branches.append({
            "from": index[int(row[0])],
            "to": index[int(row[1])],
            "r": float(row[2]),
            "x": float(row[3]),
            "b_shunt": float(row[4]),
        })

    generators = []
    for row, cost in zip(gen, gencost):
        if int(row[7]) == 0:
            continue
        assert int(cost[0]) == 2 and int(cost[3]) == 3, "only quadratic polynomial costs"
        c2, c1, c0 = (float(c) for c in cost[4:7])
        generators.append({
            "bus": index[int(row[0])],
            "p_min": float(row[9]) / base,
            "p_max": float(row[8]) / base,
            "q_min": float(row[4]) / base,
            "q_max": float(row[3]) / base,
            "cost": [c2 * base * base, c1 * base, c0],
        })

    return {"base_mva": base, "buses": buses, "branches": branches, "generators": generators}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("case", help="PYPOWER case module name, e.g. case30")
    parser.add_argument("output")
    args = parser.parse_args()
    with open(args.output, "w") as f:
        json.dump(convert(args.case), f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
