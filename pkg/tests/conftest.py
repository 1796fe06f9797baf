import copy
import json
from pathlib import Path

import numpy as np
import pytest

from fcopf_engine import build_cigre_lv_fixture, parse_network, run_power_flow, solve_fcopf, solve_opf
from fcopf_engine.fcopf import max_dg_state
from fcopf_engine.shortcircuit import fault_studies

CIGRE_JSON = Path(__file__).resolve().parents[1] / "src" / "fcopf_engine" / "data" / "cigre_lv.json"
FAULT_BUSES = ["102", "103", "107", "108", "109", "110", "111", "112"]

# acceptance criterion number -> (passed, title, detail)
CRITERIA: dict[int, tuple[bool, str, str]] = {}


def record(number: int, title: str, passed: bool, detail: str = "") -> None:
    CRITERIA[number] = (bool(passed), title, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 15):
        if n in CRITERIA:
            ok, title, detail = CRITERIA[n]
            terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title}  [{detail}]")
        else:
            terminalreporter.write_line(f"criterion {n:2d} FAIL: not evaluated (test errored or was deselected)")


def _seq_matrix(r1, x1, r0, x0, km):
    zs_r, zm_r = (r0 + 2 * r1) / 3, (r0 - r1) / 3
    zs_x, zm_x = (x0 + 2 * x1) / 3, (x0 - x1) / 3
    r = [[(zs_r if i == j else zm_r) * km for j in range(3)] for i in range(3)]
    x = [[(zs_x if i == j else zm_x) * km for j in range(3)] for i in range(3)]
    return r, x


def toy_document(pmax_g2: float = 30.934, **gen_overrides) -> dict:
    """Three-bus feeder: cheap DG mid-way, dear DG at the loaded end.

    Without DG the end bus sits at 0.911 pu against a 0.95 pu floor.  G2's
    capacity puts the min-cost dispatch just below a node of a 41-point grid.
    """
    r, x = _seq_matrix(0.284, 0.083, 1.136, 0.417, 0.25)
    abc = ["A", "B", "C"]
    gens = [
        {"id": "grid", "bus": "b0", "kind": "Reference", "vset_pu": 1.0, "theta_deg": 0.0,
         "sc3_mva": 50.0, "sc1_mva": 50.0, "z_r_pu": 0.1, "z_i_pu": 1.0},
        {"id": "G1", "bus": "b1", "kind": "Dispatchable", "cost_per_kwh": 0.3, "pmax_kw": 20.0, "pf_min": 1.0,
         "kf": 3.0, "z_r_pu": 0.0, "z_i_pu": 0.2},
        {"id": "G2", "bus": "b2", "kind": "Dispatchable", "cost_per_kwh": 0.9, "pmax_kw": pmax_g2, "pf_min": 1.0,
         "kf": 3.0, "z_r_pu": 0.0, "z_i_pu": 0.2},
    ]
    for g in gens:
        g.update(gen_overrides.get(g["id"], {}))
    return {
        "name": "toy3",
        "base": {"frequency_hz": 50.0, "power_base_kva": 100.0, "voltage_bases": [{"zone": "b0", "kv_ll": 0.4}]},
        "buses": [{"id": b, "phases": abc, "vmin_pu": 0.95, "vmax_pu": 1.05} for b in ("b0", "b1", "b2")],
        "lines": [
            {"id": "L1", "from": "b0", "to": "b1", "phases": abc, "r_ohm": r, "x_ohm": x, "ampacity_a": 400.0},
            {"id": "L2", "from": "b1", "to": "b2", "phases": abc, "r_ohm": r, "x_ohm": x, "ampacity_a": 400.0},
        ],
        "transformers": [],
        "generators": gens,
        "loads": [{"id": "D2", "bus": "b2", "p_kw": [28.0] * 3, "q_kvar": [8.0] * 3}],
        "fault_scenarios": [[{"id": "F2", "bus": "b2", "type": "ThreePhaseGround", "phases": abc}]],
    }


@pytest.fixture
def toy_doc():
    return toy_document()


@pytest.fixture(scope="session")
def cigre_doc():
    return json.loads(CIGRE_JSON.read_text())


@pytest.fixture
def cigre_doc_copy(cigre_doc):
    return copy.deepcopy(cigre_doc)


@pytest.fixture(scope="session")
def cigre():
    return build_cigre_lv_fixture()


@pytest.fixture(scope="session")
def no_dg_state(cigre):
    return run_power_flow(cigre)


@pytest.fixture(scope="session")
def no_dg_studies(cigre, no_dg_state):
    return fault_studies(cigre, no_dg_state)


@pytest.fixture(scope="session")
def max_dg_studies(cigre):
    return fault_studies(cigre, max_dg_state(cigre))


@pytest.fixture(scope="session")
def cigre_opf(cigre):
    return solve_opf(cigre)


@pytest.fixture(scope="session")
def cigre_fcopf(cigre):
    return solve_fcopf(cigre)


@pytest.fixture(scope="session")
def cigre_fcopf_cost_only(cigre):
    return solve_fcopf(cigre, (1.0, 0.0))


def phase_a(studies, buses=FAULT_BUSES):
    """Phase-A fault current (A) per fault bus."""
    out = {}
    for st in studies:
        for f in st.faults:
            if f.bus in buses and "A" in f.phases:
                out[f.bus] = float(f.current_a[f.phases.index("A")])
    return np.array([out[b] for b in buses])


@pytest.fixture
def toy():
    return parse_network(toy_document())
