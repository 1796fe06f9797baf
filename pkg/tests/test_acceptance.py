"""Acceptance criteria 1-14.

Each test records a pass/fail line (printed in the terminal summary) before
asserting, so the report lists every criterion even when some fail.
"""
import itertools
import time

import numpy as np
import pytest

from conftest import phase_a, record, toy_document
from oracles import dense_fault_currents, star_terminal_currents
from fcopf_engine import parse_network, run_power_flow, solve_fcopf, solve_opf
from fcopf_engine.fcopf import build_fcopf, compute_objective_scaling
from fcopf_engine.opf import build_opf, max_cost
from fcopf_engine.phasor import star_to_mesh
from fcopf_engine.shortcircuit import fault_studies, operating_current
from fcopf_engine.synthetic import dispatch_fraction, random_document, random_network

REF_NO_DG_102 = 5967.0
REF_NO_DG_TOTAL = 27677.0
REF_MAX_DG_TOTAL = 30846.0
# published phase-A fault currents, No-DG study, buses 102 to 112
REF_NO_DG_ROW = np.array([5967, 4890, 4097, 3502, 3031, 2673, 2368, 2077], dtype=float)


def test_criterion_01_short_circuit_oracle():
    t0 = time.perf_counter()
    worst, types = 0.0, set()
    for seed in range(50):
        doc = random_document(seed, n_buses=3 + seed % 17)
        net = parse_network(doc)
        st = run_power_flow(net, dispatch_fraction(net, 0.5))
        v = {b.id: st.voltage(b.id) for b in net.buses}
        for k, res in enumerate(fault_studies(net, st)):
            ref = dense_fault_currents(doc, v, st.gen_power, k)
            for f in res.faults:
                types.add(net.fault_scenarios[k][[g.id for g in net.fault_scenarios[k]].index(f.fault_id)].type)
                worst = max(worst, float(np.max(np.abs(f.current_a - ref[f.fault_id]) / ref[f.fault_id])))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 10.0 and {"LG", "LL", "LLG", "ThreePhaseGround"} <= types
    record(1, "short-circuit vs dense SI oracle, 50 networks", ok,
           f"max rel err {worst:.1e}, {elapsed:.1f} s, types {sorted(types)}")
    assert ok


def test_criterion_02_star_mesh():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 7))
        z = rng.uniform(0.01, 10, n) + 1j * rng.uniform(0, 5, n)
        v = rng.normal(size=n) + 1j * rng.normal(size=n)
        mesh = star_to_mesh(z)
        # terminal currents of the mesh: I_k = sum_j y_kj (V_k - V_j)
        i_mesh = mesh.sum(axis=1) * v - mesh @ v
        i_ref = star_terminal_currents(z, v)
        worst = max(worst, float(np.max(np.abs(i_mesh - i_ref)) / np.max(np.abs(i_ref))))
    ok = worst < 1e-12
    record(2, "star-mesh vs node elimination, 100 stars", ok, f"max rel err {worst:.1e}")
    assert ok


def _family_rows(labels):
    fam = {}
    for k, (family, _) in enumerate(labels):
        fam.setdefault(family, []).append(k)
    return fam


def _problems(cigre):
    yield "opf", build_opf(cigre)
    relaxed = build_fcopf(cigre, hard_cap=6000.0)
    yield "fcopf-relaxed", relaxed.problem
    yield "fcopf-exact", build_fcopf(cigre, idle={"PV1"}, exact=True).problem
    # a random feeder with a Yy transformer and mixed loads/phasing
    net = random_network(7, 8, transformer=True, n_dg=2)
    yield "random", build_fcopf(net).problem


def test_criterion_03_jacobians(cigre):
    rng = np.random.default_rng(3)
    worst, families = 0.0, 0
    for _, prob in _problems(cigre):
        for system, labels in ((prob.equalities, prob.eq_labels), (prob.inequalities, prob.ineq_labels)):
            for family, rows in _family_rows(labels).items():
                families += 1
                rows = np.asarray(rows)
                for _ in range(10):
                    x = prob.x0 + rng.normal(scale=0.1, size=prob.n)
                    J = system.jacobian(x)[rows]
                    h = 1e-4  # rows are at most quadratic, so central differences carry no truncation error
                    for _ in range(3):  # random directions cover every column at once
                        d = rng.normal(size=prob.n)
                        fd = (system.residual(x + h * d)[rows] - system.residual(x - h * d)[rows]) / (2 * h)
                        an = J @ d
                        err = np.max(np.abs(fd - an)) / max(np.max(np.abs(an)), 1e-3)
                        worst = max(worst, float(err))
    ok = worst < 1e-6
    record(3, "analytic vs central-difference Jacobians", ok, f"{families} families x 10 points, max rel err {worst:.1e}")
    assert ok


def test_criterion_04_opf_degeneracy(cigre_doc_copy):
    doc = cigre_doc_copy
    doc["generators"] = [g for g in doc["generators"] if g["kind"] == "Reference"]
    for b in doc["buses"]:
        b["vmin_pu"], b["vmax_pu"] = 0.5, 1.5
    for ln in doc["lines"]:
        ln["ampacity_a"] = 1e4
    for t in doc["transformers"]:
        t["rating_kva"] = 1e4
    net = parse_network(doc)
    pf = run_power_flow(net)
    opf = solve_opf(net)
    diff = float(np.max(np.abs(opf.state.v - pf.v)))
    ok = opf.status == "Optimal" and diff < 1e-6
    record(4, "OPF without DG equals power flow", ok, f"{opf.status}, max |dV| {diff:.1e} pu")
    assert ok


def test_criterion_05_fcopf_reduction(cigre_opf, cigre_fcopf_cost_only):
    f, o = cigre_fcopf_cost_only, cigre_opf
    d_scaled = abs(f.objective["scaled"] - o.objective["scaled"])
    d_cost = abs(f.objective["cost"] - o.objective["cost"]) / max(1.0, abs(o.objective["cost"]))
    ok = f.status == o.status == "Optimal" and d_scaled < 1e-6 and d_cost < 1e-6
    record(5, "FC-OPF with weights (1, 0) equals OPF", ok,
           f"scaled {f.objective['scaled']:.10f} vs {o.objective['scaled']:.10f}, cost diff {d_cost:.1e}")
    assert ok


def test_criterion_06_bounding(cigre_fcopf, no_dg_studies, max_dg_studies):
    worst = -np.inf
    for fc, lo_st, hi_st in zip(cigre_fcopf.fault_results, no_dg_studies, max_dg_studies):
        for f, a, b in zip(fc.faults, lo_st.faults, hi_st.faults):
            lo = np.minimum(a.current_a, b.current_a) * 0.995
            hi = np.maximum(a.current_a, b.current_a) * 1.005
            worst = max(worst, float(np.max(np.maximum(lo - f.current_a, f.current_a - hi) / f.current_a)))
    ok = cigre_fcopf.status == "Optimal" and worst <= 0
    record(6, "FC-OPF fault currents between No-DG and max-DG (0.5% slack)", ok,
           f"worst margin {worst:+.2e} (<= 0 is inside)")
    assert ok


def test_criterion_07_consistency(cigre, cigre_fcopf):
    standalone = fault_studies(cigre, cigre_fcopf.state)
    worst = 0.0
    for inner, outer in zip(cigre_fcopf.fault_results, standalone):
        for a, b in zip(inner.faults, outer.faults):
            worst = max(worst, float(np.max(np.abs(a.current_pu - b.current_pu) / np.abs(b.current_pu))))
    ok = worst < 1e-6
    record(7, "FC-OPF fault currents equal a standalone short-circuit run", ok, f"max rel err {worst:.1e}")
    assert ok


def test_criterion_08_generator_cap(cigre, cigre_fcopf):
    st = cigre_fcopf.state
    worst = -np.inf
    for res in cigre_fcopf.fault_results:
        for g in cigre.dispatchable_generators:
            cap = g.kf * operating_current(st.voltage(g.bus), st.gen_power[g.id])
            worst = max(worst, float(np.max(np.abs(res.gen_currents[g.id]) - cap)))
    ok = worst <= 1e-6
    record(8, "DG fault current <= K_f x operating current", ok, f"max excess {worst:.1e} pu")
    assert ok


def test_criterion_09_toy_grid_search():
    net = parse_network(toy_document())
    opf = solve_opf(net)
    g1, g2 = net.dispatchable_generators
    base = net.phase_power_base_kw
    best, v0 = np.inf, None
    for a, b in itertools.product(np.linspace(0, 1, 41), repeat=2):
        d = {"G1": np.asarray(g1.pmax) * a, "G2": np.asarray(g2.pmax) * b}
        st = run_power_flow(net, d, v0=v0)
        v0 = st.v
        feasible = all(
            np.all((np.abs(st.voltage(bus.id)) >= bus.vmin_pu) & (np.abs(st.voltage(bus.id)) <= bus.vmax_pu))
            for bus in net.buses
        ) and all(np.all(np.abs(st.line_currents[ln.id]) <= ln.ampacity) for ln in net.lines)
        if feasible:
            best = min(best, sum(g.cost_per_kwh * float(np.sum(d[g.id])) * base for g in (g1, g2)))
    rel = (opf.objective["cost"] - best) / best
    ok = opf.status == "Optimal" and abs(rel) <= 0.01
    record(9, "3-bus OPF vs 41x41 grid search", ok,
           f"OPF {opf.objective['cost']:.4f}, grid {best:.4f}, rel {rel:+.2e}")
    assert ok


def test_criterion_10_monotonic_decay(no_dg_studies, max_dg_studies, cigre_fcopf):
    rows = {"No-DG": phase_a(no_dg_studies), "max-DG": phase_a(max_dg_studies),
            "FC-OPF": phase_a(cigre_fcopf.fault_results)}
    ok = all(np.all(np.diff(r) < 0) for r in rows.values())
    detail = "; ".join(f"{k} {r[0]:.0f} -> {r[-1]:.0f} A" for k, r in rows.items())
    record(10, "fault current decreases along 102 -> 112 in all studies", ok, detail)
    assert ok


def test_criterion_11_reproduction(no_dg_studies, max_dg_studies):
    no_dg, max_dg = phase_a(no_dg_studies), phase_a(max_dg_studies)
    checks = {
        "bus 102": (no_dg[0], REF_NO_DG_102),
        "No-DG total": (no_dg.sum(), REF_NO_DG_TOTAL),
        "max-DG total": (max_dg.sum(), REF_MAX_DG_TOTAL),
    }
    errs = {k: a / b - 1 for k, (a, b) in checks.items()}
    tier_a = all(abs(e) <= 0.10 for e in errs.values())
    ratio_err = np.max(np.abs((no_dg[1:] / no_dg[0]) / (REF_NO_DG_ROW[1:] / REF_NO_DG_ROW[0]) - 1))
    tier_b = ratio_err <= 0.15
    ok = tier_a or tier_b
    detail = ", ".join(f"{k} {checks[k][0]:.0f} A ({e:+.1%})" for k, e in errs.items())
    record(11, f"fault-current reproduction (tier {'A' if tier_a else 'B' if tier_b else '-'})", ok,
           f"{detail}; ratio err {ratio_err:.1%}")
    assert ok


def test_criterion_12_costs(cigre, cigre_fcopf):
    full = max_cost(cigre)
    full_ok = full == pytest.approx(74.40, abs=1e-9)
    fc = cigre_fcopf
    units = sorted(sum(r.p_kw) for r in fc.dispatch if r.generator != "Substation")
    ref_point = abs(fc.objective["cost"] - 48.0) <= 4.8 and np.allclose(units[-2:], [30, 30], rtol=0.1)
    # the published point (Microturbine + Battery at 30 kW); its best scaled objective over Q choices
    scaling = compute_objective_scaling(cigre)
    ref_scaled = np.inf
    for q in (0.0, 1.0):
        d = {g.id: np.asarray(g.pmax) * (1 + 1j * q * g.q_ratio) if g.id in ("Microturbine", "Battery") else 0.0
             for g in cigre.dispatchable_generators}
        st = run_power_flow(cigre, d)
        cost = sum(g.cost_per_kwh * float(np.sum(np.real(d[g.id]))) * cigre.phase_power_base_kw
                   for g in cigre.dispatchable_generators)
        faults = sum(s.squared_sum_pu for s in fault_studies(cigre, st))
        ref_scaled = min(ref_scaled, cost / scaling.cost_max + faults / scaling.fault_max)
    lower = fc.objective["scaled"] < ref_scaled
    ok = full_ok and fc.status == "Optimal" and (ref_point or lower)
    branch = "published point" if ref_point else "strictly lower scaled objective" if lower else "neither"
    record(12, f"costs: full dispatch 74.40, FC-OPF tier ({branch})", ok,
           f"full {full:.2f}, FC-OPF cost {fc.objective['cost']:.2f} scaled {fc.objective['scaled']:.4f} "
           f"vs published point {ref_scaled:.4f}")
    assert ok


def test_criterion_13_voltage_profile(no_dg_state, cigre_opf, cigre_fcopf):
    v_no_dg = float(np.abs(no_dg_state.v).min())
    v_opf, v_fc = cigre_opf.min_voltage()[0], cigre_fcopf.min_voltage()[0]
    ok = v_no_dg < 0.9 and v_opf >= 0.9 - 1e-6 and v_fc >= 0.9 - 1e-6
    record(13, "voltage profile", ok, f"No-DG min {v_no_dg:.4f}, OPF min {v_opf:.6f}, FC-OPF min {v_fc:.6f}")
    assert ok


def test_criterion_14_runtime(cigre):
    t0 = time.perf_counter()
    res = solve_fcopf(cigre)
    elapsed = time.perf_counter() - t0
    blocks = 1 + len(cigre.fault_scenarios)
    ok = res.status == "Optimal" and elapsed < 10.0 and blocks == 9
    record(14, "FC-OPF on the CIGRE fixture solves to Optimal in < 10 s", ok,
           f"{blocks} networks, {elapsed:.2f} s, {res.diagnostics['iterations']} iterations")
    assert ok
