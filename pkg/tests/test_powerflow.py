import numpy as np
import pytest

from fcopf_engine import PowerFlowError, parse_network, run_power_flow
from fcopf_engine.phasor import winding_matrix
from fcopf_engine.powerflow import full_dispatch, normalize_dispatch

from conftest import toy_document


def test_cigre_no_dg_converges(cigre, no_dg_state):
    st = no_dg_state
    assert st.max_residual < 1e-8
    v11 = st.voltage("11")
    assert v11[0] == pytest.approx(1.0 + 0j, abs=1e-12)
    assert np.abs(v11) == pytest.approx([1.0] * 3)
    vm = np.abs(st.v)
    assert vm.min() < 0.9  # the feeder needs DG support
    assert vm.max() <= 1.0 + 1e-9


def test_voltage_drop_identity(cigre, no_dg_state):
    st = no_dg_state
    for ln in cigre.lines:
        dv = st.voltage(ln.from_bus) - st.voltage(ln.to_bus)
        np.testing.assert_allclose(dv, ln.z @ st.line_currents[ln.id], atol=1e-10)
    for tr in cigre.transformers:
        M = winding_matrix(tr.vector_group, tr.tap)
        z = tr.z_system(cigre.power_base_kva)
        dv = M @ st.voltage(tr.from_bus) - st.voltage(tr.to_bus)
        np.testing.assert_allclose(dv, z * st.transformer_currents[tr.id], atol=1e-10)


def test_power_balance(cigre, no_dg_state):
    st = no_dg_state
    gen = sum(s.sum() for s in st.gen_power.values())
    load = sum(ld.s.sum() for ld in cigre.loads)
    losses = gen - load
    assert losses.real > 0
    line_losses = sum(
        (st.line_currents[ln.id].conj() @ ln.r @ st.line_currents[ln.id]).real
        for ln in cigre.lines
    )
    tr_losses = sum(
        np.sum(np.abs(st.transformer_currents[t.id]) ** 2) * t.z_system(cigre.power_base_kva).real
        for t in cigre.transformers
    )
    assert losses.real == pytest.approx(line_losses + tr_losses, rel=1e-8)


def test_dg_dispatch_raises_voltage(cigre, no_dg_state):
    st = run_power_flow(cigre, full_dispatch(cigre))
    assert np.abs(st.v).min() > np.abs(no_dg_state.v).min()
    for g in cigre.dispatchable_generators:
        np.testing.assert_allclose(st.gen_power[g.id], np.asarray(g.pmax, dtype=complex), atol=1e-9)


def test_normalize_dispatch(toy):
    g1 = toy.generator("G1")
    out = normalize_dispatch(toy, {"G1": (np.asarray(g1.pmax), 0.0)})
    np.testing.assert_allclose(out["G1"], g1.pmax)
    np.testing.assert_allclose(out["G2"], 0)
    with pytest.raises(ValueError, match="outside"):
        normalize_dispatch(toy, {"G1": np.asarray(g1.pmax) * 2})
    with pytest.raises(ValueError, match="power-factor"):
        normalize_dispatch(toy, {"G1": (np.asarray(g1.pmax), 0.01)})
    with pytest.raises(ValueError, match="unknown"):
        normalize_dispatch(toy, {"nope": 0.0})


def test_iteration_limit_raises(cigre):
    with pytest.raises(PowerFlowError) as exc:
        run_power_flow(cigre, max_iter=1, tol=1e-14)
    assert exc.value.worst_residual > 0


def test_unsolvable_load_raises():
    doc = toy_document()
    doc["loads"][0]["p_kw"] = [5000.0] * 3
    with pytest.raises(PowerFlowError):
        run_power_flow(parse_network(doc))


def test_revert_flags_generators():
    doc = toy_document(pmax_g2=300.0)
    doc["loads"][0]["p_kw"] = [1.0] * 3
    doc["loads"][0]["q_kvar"] = [0.0] * 3
    net = parse_network(doc)
    st = run_power_flow(net, {"G2": np.asarray(net.generator("G2").pmax)})
    assert "G2" in st.flagged_generators
    fixed = run_power_flow(net, {"G2": np.asarray(net.generator("G2").pmax)}, revert=True)
    assert fixed.flagged_generators == sorted(st.flagged_generators)
    # a reverted generator is an impedance that delivers its set point at the bound
    vm = np.abs(fixed.voltage("b2"))
    s2 = np.asarray(net.generator("G2").pmax) * vm**2 / net.bus("b2").vmax_pu ** 2
    np.testing.assert_allclose(fixed.gen_power["G2"], s2, atol=1e-9)
