"""Write src/fcopf_engine/data/cigre_lv.json.

A 400 V residential feeder in the style of the CIGRE low-voltage microgrid
benchmark: a 20/0.4 kV Dyn1 transformer, a 35 m-segment main feeder that
forks at bus 103, six service connections, five loads (199 kVA at pf 0.9)
and six DGs (93 kW).  Segment data are the benchmark's 4x120 mm2 Al and
4x25 mm2 Cu cables.

    python scripts/make_cigre_fixture.py
"""
import json
import math
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "fcopf_engine" / "data" / "cigre_lv.json"

# ohm/km: positive and zero sequence
CABLES = {
    "4x120Al": {"z1": (0.284, 0.083), "z0": (1.136, 0.417), "amp": 400.0},
    "4x25Cu": {"z1": (0.871, 0.081), "z0": (3.48, 0.40), "amp": 180.0},
}

SOURCE = {"sc3_mva": 100.0, "sc1_mva": 100.0, "z": (0.1, 1.0)}
TRANSFORMER = {"r_pu": 0.01, "x_pu": 0.06, "rating_kva": 400.0, "vector_group": "Dyn1"}

MAIN = [
    ("L1", "100", "101"), ("L2", "101", "102"), ("L3", "102", "103"),
    ("L4", "103", "104"), ("L5", "104", "105"), ("L6", "105", "106"),
    ("L7", "103", "107"), ("L8", "107", "108"), ("L9", "108", "109"),
    ("L10", "109", "110"), ("L11", "110", "111"), ("L12", "111", "112"),
]
SEGMENT_M = 35.0
SERVICES = [  # id, parent, service bus, length m
    ("L13", "106", "Svc1", 30.0),
    ("L14", "109", "Svc2", 30.0),
    ("L15", "111", "Svc3", 30.0),
    ("L16", "112", "Svc4", 70.0),
    ("L17", "102", "Svc5", 30.0),
    ("L18", "101", "Svc6", 30.0),
]
LOADS = [  # id, bus, kVA, phase split
    ("Load1", "Svc1", 44.0, (0.34, 0.33, 0.33)),
    ("Load2", "Svc2", 45.0, (0.36, 0.32, 0.32)),
    ("Load3", "Svc3", 30.0, (0.33, 0.35, 0.32)),
    ("Load4", "Svc4", 30.0, (0.35, 0.33, 0.32)),
    ("Load5", "Svc5", 50.0, (0.32, 0.33, 0.35)),
]
LOAD_PF = 0.90
DGS = [  # id, bus, kW
    ("Microturbine", "Svc1", 30.0),
    ("Wind", "Svc4", 10.0),
    ("Battery", "Svc6", 30.0),
    ("PV1", "Svc3", 3.0),
    ("FuelCell", "Svc2", 10.0),
    ("PV2", "Svc5", 10.0),
]
DG_COST = 0.80
DG_PF = 0.90
KF = 5.0
FAULT_BUSES = ["102", "103", "107", "108", "109", "110", "111", "112"]


def phase_matrix(cable: str, length_m: float):
    (r1, x1), (r0, x0) = CABLES[cable]["z1"], CABLES[cable]["z0"]
    km = length_m / 1000.0
    rs, xs = (r0 + 2 * r1) / 3 * km, (x0 + 2 * x1) / 3 * km
    rm, xm = (r0 - r1) / 3 * km, (x0 - x1) / 3 * km
    r = [[rs if i == j else rm for j in range(3)] for i in range(3)]
    x = [[xs if i == j else xm for j in range(3)] for i in range(3)]
    return r, x


def line(lid, a, b, cable, length_m):
    r, x = phase_matrix(cable, length_m)
    return {"id": lid, "from": a, "to": b, "phases": ["A", "B", "C"], "r_ohm": r, "x_ohm": x,
            "ampacity_a": CABLES[cable]["amp"]}


def build() -> dict:
    abc = ["A", "B", "C"]
    lv_buses = ["100"] + sorted({b for _, a, b in MAIN}) + [s[2] for s in SERVICES]
    buses = [{"id": "11", "phases": abc, "vmin_pu": 0.9, "vmax_pu": 1.1, "grounding": None}]
    buses += [{"id": b, "phases": abc, "vmin_pu": 0.9, "vmax_pu": 1.1, "grounding": None} for b in lv_buses]
    lines = [line(lid, a, b, "4x120Al", SEGMENT_M) for lid, a, b in MAIN]
    lines += [line(lid, a, b, "4x25Cu", m) for lid, a, b, m in SERVICES]
    q_ratio = math.tan(math.acos(LOAD_PF))
    loads = []
    for lid, bus, kva, split in LOADS:
        p = [kva * LOAD_PF * s for s in split]
        loads.append({"id": lid, "bus": bus, "p_kw": p, "q_kvar": [v * q_ratio for v in p],
                      "model": "ConstantPower"})
    gens = [{
        "id": "Substation", "bus": "11", "kind": "Reference", "cost_per_kwh": 0.0, "pmax_kw": 0.0,
        "pf_min": 1.0, "kf": 1.0, "z_r_pu": SOURCE["z"][0], "z_i_pu": SOURCE["z"][1], "vset_pu": 1.0,
        "theta_deg": 0.0, "sc3_mva": SOURCE["sc3_mva"], "sc1_mva": SOURCE["sc1_mva"],
    }]
    for gid, bus, kw in DGS:
        gens.append({
            "id": gid, "bus": bus, "kind": "Dispatchable", "cost_per_kwh": DG_COST, "pmax_kw": [kw / 3] * 3,
            "pf_min": DG_PF, "kf": KF, "z_r_pu": 0.01, "z_i_pu": 0.1, "vset_pu": None, "theta_deg": None,
            "sc3_mva": None, "sc1_mva": None,
        })
    faults = [[{"id": f"F{b}", "bus": b, "type": "ThreePhaseGround", "phases": abc,
                "r_phase_ohm": 0.0, "r_ground_ohm": 0.0}] for b in FAULT_BUSES]
    return {
        "name": "cigre-lv",
        "base": {"frequency_hz": 50.0, "power_base_kva": 100.0,
                 "voltage_bases": [{"zone": "11", "kv_ll": 20.0}, {"zone": "100", "kv_ll": 0.4}]},
        "buses": buses,
        "lines": lines,
        "transformers": [{"id": "T1", "from": "11", "to": "100", "tap": 1.0, **TRANSFORMER}],
        "generators": gens,
        "loads": loads,
        "fault_scenarios": faults,
    }


if __name__ == "__main__":
    OUT.write_text(json.dumps(build(), indent=1) + "\n")
    print(f"wrote {OUT}")
