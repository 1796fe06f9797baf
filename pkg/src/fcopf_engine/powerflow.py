"""Newton current-injection power flow in rectangular coordinates."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .netmodel import CONSTANT_IMPEDANCE, PHASES, Network
from .phasor import (
    NodeIndex,
    assemble_admittance,
    flat_start,
    load_admittance,
    reference_voltages,
    transformer_impedance_matrix,
    winding_matrix,
)

log = logging.getLogger(__name__)


class PowerFlowError(RuntimeError):
    def __init__(self, message: str, worst_residual: float = float("nan")):
        self.worst_residual = worst_residual
        super().__init__(message)


@dataclass(eq=False)
class PhasorState:
    """Per-unit phasors of one solved network.

    Line currents flow from ``from_bus`` to ``to_bus``; transformer currents
    are secondary-side currents entering ``to_bus``; generator currents are
    injections and load currents are withdrawals.
    """

    network: Network
    nodes: NodeIndex
    v: np.ndarray
    line_currents: dict[str, np.ndarray] = field(default_factory=dict)
    transformer_currents: dict[str, np.ndarray] = field(default_factory=dict)
    gen_currents: dict[str, np.ndarray] = field(default_factory=dict)
    gen_power: dict[str, np.ndarray] = field(default_factory=dict)
    load_currents: dict[str, np.ndarray] = field(default_factory=dict)
    iterations: int = 0
    max_residual: float = 0.0
    flagged_generators: list[str] = field(default_factory=list)

    def voltage(self, bus: str) -> np.ndarray:
        return self.v[self.nodes.of(bus, self.network.bus(bus).phases)]

    def dispatch(self) -> dict[str, np.ndarray]:
        """Complex per-phase power of the dispatchable generators."""
        return {g.id: self.gen_power[g.id] for g in self.network.dispatchable_generators}


def normalize_dispatch(network: Network, dispatch: Mapping | None, check_limits: bool = True) -> dict[str, np.ndarray]:
    """Complex per-phase pu injections for every dispatchable generator.

    Values may be complex arrays or ``(p, q)`` pairs of arrays.
    """
    out = {}
    dispatch = dict(dispatch or {})
    for g in network.dispatchable_generators:
        raw = dispatch.pop(g.id, None)
        if raw is None:
            s = np.zeros(len(g.phases), dtype=complex)
        elif isinstance(raw, tuple) and len(raw) == 2:
            s = np.asarray(raw[0], dtype=float) + 1j * np.asarray(raw[1], dtype=float)
        else:
            s = np.asarray(raw, dtype=complex)
        s = np.broadcast_to(s, (len(g.phases),)).astype(complex)
        if check_limits:
            tol = 1e-9
            pmax = np.asarray(g.pmax)
            if np.any(s.real < -tol) or np.any(s.real > pmax + tol):
                raise ValueError(f"dispatch of {g.id!r} outside [0, pmax]")
            if np.any(np.abs(s.imag) > s.real * g.q_ratio + tol):
                raise ValueError(f"dispatch of {g.id!r} violates its power-factor limit")
        out[g.id] = s
    if dispatch:
        raise ValueError(f"unknown generators in dispatch: {sorted(dispatch)}")
    return out


def full_dispatch(network: Network, reactive: bool = False) -> dict[str, np.ndarray]:
    """Every DG at its active-power limit, optionally at its reactive limit too."""
    return {
        g.id: np.asarray(g.pmax) * (1 + (1j * g.q_ratio if reactive else 0))
        for g in network.dispatchable_generators
    }


def _injection_and_jacobian(v: np.ndarray, s: np.ndarray):
    """Constant-power injection ``conj(s / v)`` and its real-split derivatives."""
    a, b = v.real, v.imag
    d = a * a + b * b
    p, q = s.real, s.imag
    ir = (p * a + q * b) / d
    ii = (p * b - q * a) / d
    d2 = d * d
    dir_da = (p * d - (p * a + q * b) * 2 * a) / d2
    dir_db = (q * d - (p * a + q * b) * 2 * b) / d2
    dii_da = (-q * d - (p * b - q * a) * 2 * a) / d2
    dii_db = (p * d - (p * b - q * a) * 2 * b) / d2
    return ir + 1j * ii, (dir_da, dir_db, dii_da, dii_db)


def run_power_flow(
    network: Network,
    dispatch: Mapping | None = None,
    *,
    tol: float = 1e-8,
    max_iter: int = 50,
    revert: bool = False,
    v0: np.ndarray | None = None,
) -> PhasorState:
    """Solve the pre-fault network with the given DG set points.

    Reference sources pin their bus voltages to the set point.  With
    ``revert=True`` generators whose bus voltage ends outside its bounds are
    re-solved as constant impedances sized at the violated bound.
    """
    dispatch = normalize_dispatch(network, dispatch)
    state = _solve(network, dispatch, {}, tol, max_iter, v0)
    if revert and state.flagged_generators:
        shunts = {}
        for gid in state.flagged_generators:
            gen = network.generator(gid)
            bus = network.bus(gen.bus)
            vm = np.abs(state.voltage(gen.bus))
            bound = np.where(vm < bus.vmin_pu, bus.vmin_pu, bus.vmax_pu)
            shunts[gid] = -np.conj(dispatch[gid]) / bound**2
            dispatch[gid] = np.zeros_like(dispatch[gid])
        state = _solve(network, dispatch, shunts, tol, max_iter, state.v)
        state.flagged_generators = sorted(shunts)
    return state


def _solve(network, dispatch, shunts, tol, max_iter, v0) -> PhasorState:
    Ym = assemble_admittance(network, loads="model", sources=shunts)
    nodes = Ym.nodes
    Y = Ym.matrix
    n = len(nodes)

    s_inj = np.zeros(n, dtype=complex)
    for g in network.dispatchable_generators:
        s_inj[nodes.of(g.bus, g.phases)] += dispatch[g.id]
    for ld in network.loads:
        if ld.model != CONSTANT_IMPEDANCE:
            s_inj[nodes.of(ld.bus, ld.phases)] -= ld.s

    v = flat_start(network) if v0 is None else np.array(v0, dtype=complex)
    fixed = np.zeros(n, dtype=bool)
    for g in network.reference_generators:
        idx = nodes.of(g.bus, g.phases)
        v[idx] = reference_voltages(g)
        fixed[idx] = True
    free = np.flatnonzero(~fixed)
    fix = np.flatnonzero(fixed)
    Yff = Y[free][:, free]
    Yfx = Y[free][:, fix]
    G, B = Yff.real, Yff.imag
    Yreal = sp.bmat([[G, -B], [B, G]], format="csc")
    const_inj = np.flatnonzero(s_inj[free] != 0)

    it = 0
    worst = np.inf
    for it in range(max_iter + 1):
        inj, (dra, drb, dia, dib) = _injection_and_jacobian(v[free], s_inj[free])
        mis = Yff @ v[free] + Yfx @ v[fix] - inj
        worst = float(np.abs(np.concatenate([mis.real, mis.imag])).max(initial=0.0))
        if worst < tol:
            break
        if it == max_iter:
            raise PowerFlowError(f"power flow did not converge in {max_iter} iterations "
                                 f"(worst residual {worst:.3e} pu)", worst)
        nf = free.size
        k = const_inj
        dJ = sp.csc_matrix(
            (np.concatenate([dra[k], drb[k], dia[k], dib[k]]),
             (np.concatenate([k, k, k + nf, k + nf]), np.concatenate([k, k + nf, k, k + nf]))),
            shape=(2 * nf, 2 * nf),
        )
        J = (Yreal - dJ).tocsc()
        step = spla.spsolve(J, -np.concatenate([mis.real, mis.imag]))
        v[free] += step[:nf] + 1j * step[nf:]
    log.debug("power flow converged in %d iterations (residual %.2e)", it, worst)
    return _element_currents(network, nodes, v, dispatch, shunts, it, worst)


def _element_currents(network, nodes, v, dispatch, shunts, iterations, worst) -> PhasorState:
    st = PhasorState(network, nodes, v, iterations=iterations, max_residual=worst)
    net_out = np.zeros(len(nodes), dtype=complex)  # branch outflow per node
    for ln in network.lines:
        f = nodes.of(ln.from_bus, ln.phases)
        t = nodes.of(ln.to_bus, ln.phases)
        i = np.linalg.solve(ln.z, v[f] - v[t])
        st.line_currents[ln.id] = i
        net_out[f] += i
        net_out[t] -= i
    for tr in network.transformers:
        M = winding_matrix(tr.vector_group, tr.tap)
        Z = transformer_impedance_matrix(network, tr)
        f = nodes.of(tr.from_bus, PHASES)
        t = nodes.of(tr.to_bus, PHASES)
        i = np.linalg.solve(Z, M @ v[f] - v[t])
        st.transformer_currents[tr.id] = i
        net_out[f] += M.T @ i
        net_out[t] -= i
    for ld in network.loads:
        idx = nodes.of(ld.bus, ld.phases)
        if ld.model == CONSTANT_IMPEDANCE:
            i = load_admittance(ld) * v[idx]
        else:
            i = np.conj(ld.s / v[idx])
        st.load_currents[ld.id] = i
        net_out[idx] += i
    for g in network.dispatchable_generators:
        idx = nodes.of(g.bus, g.phases)
        if g.id in shunts:
            i = -shunts[g.id] * v[idx]  # the shunt is stamped as a withdrawal
        else:
            i = np.conj(dispatch[g.id] / v[idx])
        st.gen_currents[g.id] = i
        st.gen_power[g.id] = v[idx] * np.conj(i)
        net_out[idx] -= i
    seen: set[str] = set()
    for g in network.reference_generators:
        idx = nodes.of(g.bus, g.phases)
        i = np.zeros(len(idx), dtype=complex) if g.bus in seen else net_out[idx]
        seen.add(g.bus)
        st.gen_currents[g.id] = i
        st.gen_power[g.id] = v[idx] * np.conj(i)
    for g in network.dispatchable_generators:
        bus = network.bus(g.bus)
        vm = np.abs(st.voltage(g.bus))
        if np.any(vm < bus.vmin_pu) or np.any(vm > bus.vmax_pu):
            st.flagged_generators.append(g.id)
    return st
