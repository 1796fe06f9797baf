import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from fcopf_engine import parse_network, run_power_flow, solve_short_circuit
from fcopf_engine.netmodel import FaultSpec, from_per_unit, network_to_document, to_per_unit
from fcopf_engine.phasor import assemble_admittance, build_fault_admittance, star_to_mesh, winding_matrix
from fcopf_engine.shortcircuit import fault_studies, generator_sc_model
from fcopf_engine.synthetic import dispatch_fraction, random_document, random_network

from oracles import star_terminal_currents

SETTINGS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
seeds = st.integers(0, 10_000)
resist = st.floats(1e-4, 10.0)
reactance = st.floats(0.0, 10.0)
phasor = st.builds(complex, st.floats(-2, 2), st.floats(-2, 2))


@SETTINGS
@given(st.lists(st.builds(complex, resist, reactance), min_size=2, max_size=6), st.data())
def test_star_mesh_equals_explicit_star(z, data):
    v = np.array(data.draw(st.lists(phasor, min_size=len(z), max_size=len(z))))
    y = star_to_mesh(z)
    mesh = y.sum(axis=1) * v - y @ v
    np.testing.assert_allclose(mesh, star_terminal_currents(np.array(z), v), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(y, y.T)


@SETTINGS
@given(
    st.sampled_from(["LG", "LL", "LLG", "ThreePhase", "ThreePhaseGround"]),
    st.lists(resist, min_size=3, max_size=3),
    resist,
)
def test_fault_admittance_invariants(kind, r, rg):
    n = {"LG": 1, "LL": 2, "LLG": 2}.get(kind, 3)
    G = build_fault_admittance(FaultSpec("F", "b", kind, ("A", "B", "C")[:n], tuple(r[:n]), rg)).G
    assert np.isrealobj(G)
    np.testing.assert_array_equal(G, G.T)
    assert np.all(np.linalg.eigvalsh(G) >= -1e-9 * np.abs(G).max())
    if kind in ("LL", "ThreePhase"):
        assert np.abs(G.sum(axis=1)).max() <= 1e-14 * np.abs(G).max()
    else:
        assert np.all(G.sum(axis=1) > 0)


def _check_types(net):
    for b in net.buses:
        assert 0 < b.vmin_pu < b.vmax_pu
        assert b.phases == tuple(sorted(b.phases))
    for ln in net.lines:
        assert ln.r.shape == (len(ln.phases),) * 2
        np.testing.assert_array_equal(ln.r, ln.r.T)
        assert np.all(np.diag(ln.r) > 0) and ln.ampacity > 0
        assert set(ln.phases) <= set(net.bus(ln.from_bus).phases) & set(net.bus(ln.to_bus).phases)
    for g in net.generators:
        assert 0 < g.pf_min <= 1 and g.kf >= 1 and min(g.pmax, default=0) >= 0
        assert len(g.pmax) in (0, len(g.phases))
    assert net.reference_generators
    for scen in net.fault_scenarios:
        for f in scen:
            assert min(f.r_phase) > 0 and set(f.phases) <= set(net.bus(f.bus).phases)
    assert set(net.bus_kv) == {b.id for b in net.buses}


@SETTINGS
@given(seeds, st.integers(2, 10), st.booleans())
def test_parsed_documents_satisfy_invariants(seed, n, transformer):
    net = parse_network(random_document(seed, n, transformer=transformer))
    _check_types(net)


@SETTINGS
@given(seeds)
def test_per_unit_round_trip(seed):
    net = random_network(seed)
    again = to_per_unit(from_per_unit(net))
    for a, b in zip(net.lines, again.lines):
        np.testing.assert_allclose(b.z, a.z, rtol=1e-12)
        assert math.isclose(a.ampacity, b.ampacity, rel_tol=1e-12)
    for a, b in zip(net.generators, again.generators):
        np.testing.assert_allclose(b.pmax, a.pmax, rtol=1e-12)
    for a, b in zip(net.loads, again.loads):
        np.testing.assert_allclose(b.s, a.s, rtol=1e-12)
    for sa, sb in zip(net.fault_scenarios, again.fault_scenarios):
        for a, b in zip(sa, sb):
            np.testing.assert_allclose(b.r_phase, a.r_phase, rtol=1e-12)
    assert parse_network(network_to_document(net)).bus_kv == net.bus_kv


@SETTINGS
@given(seeds)
def test_admittance_symmetric_without_transformer(seed):
    net = random_network(seed, transformer=False)
    for scen in (None, *net.fault_scenarios):
        Y = assemble_admittance(net, scen).dense()
        np.testing.assert_allclose(Y, Y.T, atol=1e-12 * np.abs(Y).max())


@SETTINGS
@given(seeds, st.data())
def test_two_sided_power_balance(seed, data):
    """Power drawn by the passive network equals its series losses."""
    net = random_network(seed, transformer=True)
    Ym = assemble_admittance(net, loads="none")
    n = len(Ym.nodes)
    v = np.array(data.draw(st.lists(phasor, min_size=n, max_size=n)))
    drawn = np.sum(v * np.conj(Ym.matrix @ v))
    losses = 0j
    for ln in net.lines:
        dv = v[Ym.nodes.of(ln.from_bus, ln.phases)] - v[Ym.nodes.of(ln.to_bus, ln.phases)]
        losses += dv @ np.conj(np.linalg.solve(ln.z, dv))
    for tr in net.transformers:
        dv = winding_matrix(tr.vector_group, tr.tap) @ v[Ym.nodes.of(tr.from_bus, "ABC")] - v[
            Ym.nodes.of(tr.to_bus, "ABC")]
        losses += dv @ np.conj(dv / tr.z_system(net.power_base_kva))
    assert abs(drawn - losses) <= 1e-9 * max(1.0, abs(losses))


@SETTINGS
@given(seeds)
def test_power_flow_balance(seed):
    net = random_network(seed)
    s = run_power_flow(net, dispatch_fraction(net, 0.5))
    gen = sum(p.sum() for p in s.gen_power.values())
    load = sum(np.sum(s.voltage(ld.bus) * np.conj(s.load_currents[ld.id])) for ld in net.loads)
    losses = sum(s.line_currents[ln.id].conj() @ ln.z @ s.line_currents[ln.id] for ln in net.lines)
    losses += sum(np.sum(np.abs(s.transformer_currents[t.id]) ** 2) * t.z_system(net.power_base_kva)
                  for t in net.transformers)
    assert abs(gen - load - losses) < 1e-6


@SETTINGS
@given(seeds)
def test_constant_impedance_power_flow_is_linear(seed):
    doc = random_document(seed)
    for ld in doc["loads"]:
        ld["model"] = "ConstantImpedance"
    for g in doc["generators"]:
        if g["kind"] != "Reference":
            g["pmax_kw"] = 0.0
    s = run_power_flow(parse_network(doc))
    assert s.iterations == 1


@SETTINGS
@given(seeds, st.integers(3, 12), st.floats(0.05, 0.5), st.floats(0.0, 0.5))
def test_monotonic_decay_on_chains(seed, n, length, load_kw):
    rng = np.random.default_rng(seed)
    abc = ["A", "B", "C"]
    ids = [f"n{k}" for k in range(n)]
    lines = []
    for k in range(n - 1):
        r1, x1 = rng.uniform(0.1, 1.0), rng.uniform(0.05, 0.5)
        zs, zm = (3 * r1, 3 * x1), (r1, x1)  # zero sequence about three times positive
        r = [[(zs[0] + 2 * r1) / 3 * length if i == j else (zs[0] - r1) / 3 * length for j in range(3)]
             for i in range(3)]
        x = [[(zs[1] + 2 * x1) / 3 * length if i == j else (zs[1] - x1) / 3 * length for j in range(3)]
             for i in range(3)]
        lines.append({"id": f"L{k}", "from": ids[k], "to": ids[k + 1], "phases": abc, "r_ohm": r, "x_ohm": x,
                      "ampacity_a": 300.0})
    doc = {
        "base": {"frequency_hz": 50.0, "power_base_kva": 100.0, "voltage_bases": [{"zone": "n0", "kv_ll": 0.4}]},
        "buses": [{"id": b, "phases": abc, "vmin_pu": 0.8, "vmax_pu": 1.2} for b in ids],
        "lines": lines,
        "generators": [{"id": "src", "bus": "n0", "kind": "Reference", "vset_pu": 1.0, "theta_deg": 0.0,
                        "sc3_mva": 20.0, "sc1_mva": 15.0, "z_r_pu": 0.1, "z_i_pu": 1.0}],
        "loads": [{"id": f"D{k}", "bus": b, "p_kw": [load_kw + 0.01] * 3, "q_kvar": [0.0] * 3}
                  for k, b in enumerate(ids)],
        "fault_scenarios": [[{"id": f"F{k}", "bus": b, "type": "ThreePhaseGround", "phases": abc}]
                            for k, b in enumerate(ids)],
    }
    net = parse_network(doc)
    i = [s.faults[0].current_a.max() for s in fault_studies(net, run_power_flow(net))]
    assert np.all(np.diff(i) <= 1e-9 * i[0])


@SETTINGS
@given(seeds)
def test_superposition(seed):
    """Doubling every source voltage doubles every fault current."""
    net = random_network(seed)
    state = run_power_flow(net, dispatch_fraction(net, 0.5))
    models = {g.id: generator_sc_model(g, state.voltage(g.bus), state.gen_power[g.id])
              for g in net.dispatchable_generators}
    doubled = {gid: type(m)(2 * m.e, m.y) for gid, m in models.items()}
    refs = {g.id for g in net.reference_generators}
    net2 = net.replace(generators=tuple(
        type(g)(**{**g.__dict__, "vset_pu": 2 * g.vset_pu}) if g.id in refs else g for g in net.generators))
    for k in range(len(net.fault_scenarios)):
        a = solve_short_circuit(net, state, k, models=models)
        b = solve_short_circuit(net2, state, k, models=doubled)
        for fa, fb in zip(a.faults, b.faults):
            np.testing.assert_allclose(fb.current_pu, 2 * fa.current_pu, rtol=1e-10, atol=1e-14)


@SETTINGS
@given(seeds, st.floats(0.1, 1.0))
def test_dg_does_not_reduce_fault_current(seed, fraction):
    """Adding DG raises fault currents, up to a small model-induced dip.

    The DG internal voltage is the power-flow terminal voltage, while the
    fault network has constant-impedance loads and a Thevenin reference, so
    the added source can partly oppose the fault current.  Over 2000 random
    feeders the total per fault dipped by at most 1.5e-4 and a single phase of
    a multi-phase fault by at most 3.3e-3.
    """
    net = random_network(seed)
    lo = fault_studies(net, run_power_flow(net))
    hi = fault_studies(net, run_power_flow(net, dispatch_fraction(net, fraction)))
    for a, b in zip(lo, hi):
        for fa, fb in zip(a.faults, b.faults):
            assert fb.current_a.sum() >= fa.current_a.sum() * (1 - 1e-3)
            assert np.all(fb.current_a >= fa.current_a * (1 - 1e-2))
