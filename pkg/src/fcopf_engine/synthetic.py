"""Seeded random feeders for tests, benchmarks and ``--fixture random``."""
from __future__ import annotations

from typing import Any

import numpy as np

from .netmodel import FAULT_TYPES, PHASES, Network, parse_network

VECTOR_GROUPS = ("Dyn1", "Dyn11", "Dyn5", "Yy0", "YNyn0", "Yy6")


def _phase_matrix(rng, n: int, length_km: float):
    r1, x1 = rng.uniform(0.1, 0.8), rng.uniform(0.05, 0.35)
    r0, x0 = r1 * rng.uniform(2.0, 4.0), x1 * rng.uniform(2.0, 4.0)
    rs, rm = (r0 + 2 * r1) / 3, (r0 - r1) / 3
    xs, xm = (x0 + 2 * x1) / 3, (x0 - x1) / 3
    r = np.full((n, n), rm) + np.eye(n) * (rs - rm)
    x = np.full((n, n), xm) + np.eye(n) * (xs - xm)
    return (r * length_km).tolist(), (x * length_km).tolist()


def random_document(seed: int, n_buses: int | None = None, *, transformer: bool | None = None,
                    n_dg: int | None = None, n_scenarios: int = 3) -> dict[str, Any]:
    """A radial low-voltage feeder with mixed phasing, loads, DGs and faults.

    ``n_buses`` counts the low-voltage buses; a transformer adds one more
    (medium-voltage) bus in front of them.
    """
    rng = np.random.default_rng(seed)
    n = int(n_buses if n_buses is not None else rng.integers(3, 12))
    transformer = bool(rng.random() < 0.6) if transformer is None else transformer
    abc = list(PHASES)
    buses, lines, loads, gens, xfmrs = [], [], [], [], []

    def bus(bid, phases):
        buses.append({"id": bid, "phases": phases, "vmin_pu": 0.85, "vmax_pu": 1.15, "grounding": None})

    bases = [{"zone": "b0", "kv_ll": 0.4}]
    source_bus = "b0"
    if transformer:
        bus("mv", abc)
        bases.append({"zone": "mv", "kv_ll": 11.0})
        xfmrs.append({"id": "T1", "from": "mv", "to": "b0", "vector_group": str(rng.choice(VECTOR_GROUPS)),
                      "tap": float(rng.choice([0.975, 1.0, 1.025])), "r_pu": float(rng.uniform(0.005, 0.02)),
                      "x_pu": float(rng.uniform(0.03, 0.06)), "rating_kva": float(rng.choice([250, 400, 630]))})
        source_bus = "mv"
    bus("b0", abc)
    phases_of = {"b0": abc}
    for k in range(1, n):
        parent = f"b{int(rng.integers(0, k))}"
        pp = phases_of[parent]
        if len(pp) == 3 and rng.random() < 0.7:
            ph = abc
        else:
            size = int(rng.integers(1, len(pp) + 1))
            ph = sorted(rng.choice(pp, size=size, replace=False).tolist())
        bid = f"b{k}"
        bus(bid, ph)
        phases_of[bid] = ph
        r, x = _phase_matrix(rng, len(ph), rng.uniform(0.02, 0.12))
        lines.append({"id": f"L{k}", "from": parent, "to": bid, "phases": ph, "r_ohm": r, "x_ohm": x,
                      "ampacity_a": float(rng.uniform(150, 400))})
    for k in range(1, n):
        if rng.random() < 0.7:
            ph = phases_of[f"b{k}"]
            p = rng.uniform(1.0, 8.0, size=len(ph))
            loads.append({"id": f"D{k}", "bus": f"b{k}", "p_kw": p.tolist(), "q_kvar": (p * rng.uniform(0.1, 0.5)).tolist(),
                          "model": str(rng.choice(["ConstantPower", "ConstantImpedance"]))})
    if not loads:
        loads.append({"id": "D1", "bus": "b1", "p_kw": [3.0] * len(phases_of["b1"]),
                      "q_kvar": [1.0] * len(phases_of["b1"]), "model": "ConstantPower"})
    gens.append({"id": "grid", "bus": source_bus, "kind": "Reference", "cost_per_kwh": 0.0, "pmax_kw": 0.0,
                 "pf_min": 1.0, "kf": 1.0, "z_r_pu": 0.1, "z_i_pu": 1.0, "vset_pu": 1.0,
                 "theta_deg": float(rng.uniform(-5, 5)), "sc3_mva": float(rng.uniform(20, 200)),
                 "sc1_mva": float(rng.uniform(15, 150))})
    n_dg = int(rng.integers(0, 4)) if n_dg is None else n_dg
    for k in range(n_dg):
        b = f"b{int(rng.integers(1, n))}"
        ph = phases_of[b]
        gens.append({"id": f"G{k}", "bus": b, "kind": "Dispatchable", "cost_per_kwh": float(rng.uniform(0.1, 1.0)),
                     "pmax_kw": float(rng.uniform(3, 15)) * len(ph) / 3, "pf_min": float(rng.uniform(0.85, 1.0)),
                     "kf": float(rng.uniform(1.5, 6.0)), "z_r_pu": float(rng.uniform(0.0, 0.05)),
                     "z_i_pu": float(rng.uniform(0.05, 0.3)), "vset_pu": None, "theta_deg": None,
                     "sc3_mva": None, "sc1_mva": None})
    scenarios = []
    for k in range(n_scenarios):
        b = f"b{int(rng.integers(0, n))}"
        ph = phases_of[b]
        types = [t for t, need in FAULT_TYPES.items() if need <= len(ph)]
        ftype = str(rng.choice(types))
        fph = sorted(rng.choice(ph, size=FAULT_TYPES[ftype], replace=False).tolist())
        r_phase: Any = float(rng.uniform(0.0, 0.2))
        if ftype == "LL" and rng.random() < 0.5:
            r_phase = [float(rng.uniform(0, 0.1)), float(rng.uniform(0, 0.1))]
        scenarios.append([{"id": f"F{k}", "bus": b, "type": ftype, "phases": fph, "r_phase_ohm": r_phase,
                           "r_ground_ohm": float(rng.uniform(0.0, 0.5))}])
    return {
        "name": f"random-{seed}",
        "base": {"frequency_hz": 50.0, "power_base_kva": 100.0, "voltage_bases": bases},
        "buses": buses,
        "lines": lines,
        "transformers": xfmrs,
        "generators": gens,
        "loads": loads,
        "fault_scenarios": scenarios,
    }


def random_network(seed: int, n_buses: int | None = None, **kwargs) -> Network:
    return parse_network(random_document(seed, n_buses, **kwargs))


def dispatch_fraction(network: Network, fraction: float = 0.5) -> dict[str, np.ndarray]:
    """Every DG at ``fraction`` of capacity at its lagging power-factor limit."""
    return {g.id: np.asarray(g.pmax) * fraction * (1 + 1j * g.q_ratio) for g in network.dispatchable_generators}


__all__ = ["random_document", "random_network", "dispatch_fraction", "VECTOR_GROUPS"]
