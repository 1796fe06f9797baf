"""Optimal power flow in current-voltage rectangular form.

Each network is written onto a :class:`~fcopf_engine.nlp.ModelBuilder` as a
block of variables and rows.  Node voltages, branch currents and generator
and load currents are all explicit variables, which keeps every row at most
quadratic.  The same block builder serves the fault networks of the
fault-constrained problem (see :mod:`fcopf_engine.fcopf`).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .netmodel import CONSTANT_IMPEDANCE, PHASES, FaultSpec, Network
from .nlp import ModelBuilder, NlpProblem, NlpSolution, SolveDiagnostics, solve_nlp
from .phasor import (
    NodeIndex,
    build_fault_admittance,
    load_admittance,
    reference_voltages,
    source_impedance_matrix,
    transformer_impedance_matrix,
    winding_matrix,
)
from .powerflow import PhasorState, run_power_flow

log = logging.getLogger(__name__)

BALANCE_BAND = 0.05


class OpfBuildError(ValueError):
    pass


def _pair(mb: ModelBuilder, name: str, n: int, x0=None, group=None):
    """``n`` complex variables as real and imaginary column arrays."""
    x0 = np.zeros(n, dtype=complex) if x0 is None else np.asarray(x0, dtype=complex)
    re = np.array([mb.var(f"{name}[{k}].r", x0=float(x0[k].real), group=group and group + ".r") for k in range(n)])
    im = np.array([mb.var(f"{name}[{k}].i", x0=float(x0[k].imag), group=group and group + ".i") for k in range(n)])
    return re, im


@dataclass
class BlockLayout:
    """Column indices of one network block."""

    tag: str
    nodes: NodeIndex
    vr: np.ndarray
    vi: np.ndarray
    lines: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    transformers: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    gens: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    loads: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    p: dict[str, np.ndarray] = field(default_factory=dict)
    q: dict[str, np.ndarray] = field(default_factory=dict)
    faults: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict)

    @staticmethod
    def value(x: np.ndarray, cols: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
        return x[cols[0]] + 1j * x[cols[1]]

    def voltages(self, x: np.ndarray) -> np.ndarray:
        return x[self.vr] + 1j * x[self.vi]

    def bus_cols(self, bus: str, phases) -> tuple[np.ndarray, np.ndarray]:
        idx = self.nodes.of(bus, phases)
        return self.vr[idx], self.vi[idx]


class NetworkBlock:
    """Writes the physics of one network onto a model builder.

    KCL rows are collected while elements are added and emitted by
    :meth:`close`, so elements may be added in any order.
    """

    def __init__(self, mb: ModelBuilder, network: Network, tag: str, v0: np.ndarray | None = None):
        if not network.per_unit:
            raise OpfBuildError("network must be in per-unit")
        self.mb = mb
        self.net = network
        self.tag = tag
        nodes = NodeIndex(network)
        v0 = np.ones(len(nodes), dtype=complex) if v0 is None else v0
        vr, vi = _pair(mb, f"{tag}.V", len(nodes), v0, group=f"{tag}.V")
        self.layout = BlockLayout(tag, nodes, vr, vi)
        n = len(nodes)
        self._kcl_r: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        self._kcl_i: list[list[tuple[int, float]]] = [[] for _ in range(n)]

    # complex stamping: row(node) += coef * (x_r + j x_i)
    def _stamp(self, node: int, col_r: int, col_i: int, coef: complex):
        a, b = coef.real, coef.imag
        self._kcl_r[node] += [(col_r, a), (col_i, -b)]
        self._kcl_i[node] += [(col_r, b), (col_i, a)]

    def _inject(self, idx, cols, sign=1.0):
        for k, node in enumerate(idx):
            self._stamp(node, int(cols[0][k]), int(cols[1][k]), complex(sign))

    def _shunt(self, idx, Y: np.ndarray):
        """Withdrawal ``Y @ V`` at the nodes ``idx``."""
        L = self.layout
        for a, na in enumerate(idx):
            for b, nb in enumerate(idx):
                if Y[a, b] != 0:
                    self._stamp(na, int(L.vr[nb]), int(L.vi[nb]), -complex(Y[a, b]))

    def _drop_rows(self, family, element, lhs_r, lhs_i, Zr, Zi, ir, ii, const=None):
        """Rows ``lhs - Z I (+ const) = 0`` with ``lhs`` given as linear terms per phase."""
        const = np.zeros(len(ir), dtype=complex) if const is None else const
        for k in range(len(ir)):
            re = list(lhs_r[k]) + [(int(ir[j]), -Zr[k, j]) for j in range(len(ir))] + [
                (int(ii[j]), Zi[k, j]) for j in range(len(ir))]
            im = list(lhs_i[k]) + [(int(ii[j]), -Zr[k, j]) for j in range(len(ir))] + [
                (int(ir[j]), -Zi[k, j]) for j in range(len(ir))]
            self.mb.add_eq(family, f"{element}[{k}].r", lin=re, const=const[k].real)
            self.mb.add_eq(family, f"{element}[{k}].i", lin=im, const=const[k].imag)

    def add_lines(self, thermal: bool, currents: dict | None = None):
        L, mb, tag = self.layout, self.mb, self.tag
        for ln in self.net.lines:
            f = L.nodes.of(ln.from_bus, ln.phases)
            t = L.nodes.of(ln.to_bus, ln.phases)
            cols = _pair(mb, f"{tag}.line.{ln.id}.I", len(f), (currents or {}).get(ln.id))
            L.lines[ln.id] = cols
            lhs_r = [[(int(L.vr[f[k]]), 1.0), (int(L.vr[t[k]]), -1.0)] for k in range(len(f))]
            lhs_i = [[(int(L.vi[f[k]]), 1.0), (int(L.vi[t[k]]), -1.0)] for k in range(len(f))]
            self._drop_rows(f"{tag}.line_drop", ln.id, lhs_r, lhs_i, ln.z.real, ln.z.imag, *cols)
            self._inject(f, cols, -1.0)
            self._inject(t, cols, 1.0)
            if thermal:
                for k in range(len(f)):
                    ir, ii = int(cols[0][k]), int(cols[1][k])
                    mb.add_ineq(f"{tag}.line_thermal", f"{ln.id}[{k}]", quad=[(ir, ir, 1.0), (ii, ii, 1.0)],
                                const=-ln.ampacity**2)

    def add_transformers(self, thermal: bool, currents: dict | None = None):
        L, mb, tag = self.layout, self.mb, self.tag
        for tr in self.net.transformers:
            M = winding_matrix(tr.vector_group, tr.tap)
            Z = transformer_impedance_matrix(self.net, tr)
            f = L.nodes.of(tr.from_bus, PHASES)
            t = L.nodes.of(tr.to_bus, PHASES)
            cols = _pair(mb, f"{tag}.xfmr.{tr.id}.I", 3, (currents or {}).get(tr.id))
            L.transformers[tr.id] = cols
            lhs_r = [[(int(L.vr[f[j]]), M[k, j]) for j in range(3)] + [(int(L.vr[t[k]]), -1.0)] for k in range(3)]
            lhs_i = [[(int(L.vi[f[j]]), M[k, j]) for j in range(3)] + [(int(L.vi[t[k]]), -1.0)] for k in range(3)]
            self._drop_rows(f"{tag}.xfmr_drop", tr.id, lhs_r, lhs_i, Z.real, Z.imag, *cols)
            self._inject(t, cols, 1.0)
            for k in range(3):  # primary current M^T I leaves the from-bus
                for j in range(3):
                    if M[j, k] != 0:
                        self._stamp(f[k], int(cols[0][j]), int(cols[1][j]), complex(-M[j, k]))
            if thermal:
                limit = tr.current_limit_pu(self.net.power_base_kva)
                for k in range(3):
                    ir, ii = int(cols[0][k]), int(cols[1][k])
                    mb.add_ineq(f"{tag}.xfmr_thermal", f"{tr.id}[{k}]", quad=[(ir, ir, 1.0), (ii, ii, 1.0)],
                                const=-limit**2)

    def add_ideal_references(self, currents: dict | None = None):
        """Reference sources pin their terminal voltages."""
        L, mb, tag = self.layout, self.mb, self.tag
        for g in self.net.reference_generators:
            idx = L.nodes.of(g.bus, g.phases)
            e = reference_voltages(g)
            cols = _pair(mb, f"{tag}.gen.{g.id}.I", len(idx), (currents or {}).get(g.id))
            L.gens[g.id] = cols
            for k, node in enumerate(idx):
                mb.add_eq(f"{tag}.reference", f"{g.id}[{k}].r", lin=[(int(L.vr[node]), 1.0)], const=-e[k].real)
                mb.add_eq(f"{tag}.reference", f"{g.id}[{k}].i", lin=[(int(L.vi[node]), 1.0)], const=-e[k].imag)
            self._inject(idx, cols)

    def add_thevenin_references(self, currents: dict | None = None):
        """Reference sources as set-point voltages behind their impedance."""
        L, tag = self.layout, self.tag
        for g in self.net.reference_generators:
            idx = L.nodes.of(g.bus, g.phases)
            Z = source_impedance_matrix(self.net, g)
            cols = _pair(self.mb, f"{tag}.gen.{g.id}.I", len(idx), (currents or {}).get(g.id))
            L.gens[g.id] = cols
            # E - V - Z I = 0
            lhs_r = [[(int(L.vr[node]), -1.0)] for node in idx]
            lhs_i = [[(int(L.vi[node]), -1.0)] for node in idx]
            self._drop_rows(f"{tag}.reference", g.id, lhs_r, lhs_i, Z.real, Z.imag, *cols,
                            const=reference_voltages(g))
            self._inject(idx, cols)

    def add_constant_power_loads(self, currents: dict | None = None):
        L, mb, tag = self.layout, self.mb, self.tag
        for ld in self.net.loads:
            idx = L.nodes.of(ld.bus, ld.phases)
            if ld.model == CONSTANT_IMPEDANCE:
                self._shunt(idx, np.diag(load_admittance(ld)))
                continue
            cols = _pair(mb, f"{tag}.load.{ld.id}.I", len(idx), (currents or {}).get(ld.id))
            L.loads[ld.id] = cols
            for k, node in enumerate(idx):
                vr, vi, ir, ii = int(L.vr[node]), int(L.vi[node]), int(cols[0][k]), int(cols[1][k])
                s = ld.s[k]
                mb.add_eq(f"{tag}.load_power", f"{ld.id}[{k}].p", quad=[(vr, ir, 1.0), (vi, ii, 1.0)], const=-s.real)
                mb.add_eq(f"{tag}.load_power", f"{ld.id}[{k}].q", quad=[(vi, ir, 1.0), (vr, ii, -1.0)], const=-s.imag)
            self._inject(idx, cols, -1.0)

    def add_impedance_loads(self):
        for ld in self.net.loads:
            self._shunt(self.layout.nodes.of(ld.bus, ld.phases), np.diag(load_admittance(ld)))

    def add_dispatchable(self, currents: dict | None = None, power: dict | None = None,
                         idle: frozenset = frozenset()):
        """DG currents, P/Q variables and the generator-side rows of the OPF.

        Generators in ``idle`` (and phases with no capacity) are pinned to zero
        output by equality rows instead of bounds.
        """
        L, mb, tag = self.layout, self.mb, self.tag
        for g in self.net.dispatchable_generators:
            idx = L.nodes.of(g.bus, g.phases)
            n = len(idx)
            cols = _pair(mb, f"{tag}.gen.{g.id}.I", n, (currents or {}).get(g.id))
            L.gens[g.id] = cols
            s0 = (power or {}).get(g.id, np.zeros(n, dtype=complex))
            pmax = np.zeros(n) if g.id in idle else np.asarray(g.pmax)
            if g.id in idle:
                s0 = np.zeros(n, dtype=complex)
            p = np.array([mb.var(f"{tag}.gen.{g.id}.P[{k}]", *((0.0, pmax[k]) if pmax[k] > 0 else (-math.inf, math.inf)),
                                 x0=float(s0[k].real), group="P") for k in range(n)])
            q = np.array([mb.var(f"{tag}.gen.{g.id}.Q[{k}]", x0=float(s0[k].imag), group="Q") for k in range(n)])
            L.p[g.id], L.q[g.id] = p, q
            tan = g.q_ratio
            for k, node in enumerate(idx):
                vr, vi, ir, ii = int(L.vr[node]), int(L.vi[node]), int(cols[0][k]), int(cols[1][k])
                pk, qk = int(p[k]), int(q[k])
                mb.add_eq(f"{tag}.gen_power", f"{g.id}[{k}].p", lin=[(pk, -1.0)], quad=[(vr, ir, 1.0), (vi, ii, 1.0)])
                mb.add_eq(f"{tag}.gen_power", f"{g.id}[{k}].q", lin=[(qk, -1.0)], quad=[(vi, ir, 1.0), (vr, ii, -1.0)])
                if pmax[k] <= 0:
                    mb.add_eq(f"{tag}.gen_idle", f"{g.id}[{k}].p", lin=[(pk, 1.0)])
                if tan <= 0 or pmax[k] <= 0:
                    mb.add_eq(f"{tag}.gen_idle", f"{g.id}[{k}].q", lin=[(qk, 1.0)])
                else:
                    mb.add_ineq(f"{tag}.gen_pf", f"{g.id}[{k}].hi", lin=[(qk, 1.0), (pk, -tan)])
                    mb.add_ineq(f"{tag}.gen_pf", f"{g.id}[{k}].lo", lin=[(qk, -1.0), (pk, -tan)])
            if n > 1 and np.any(pmax > 0):
                for name, arr, ref in (("p", p, p), ("q", q, p)):
                    # |x_k - mean(x)| <= band * mean(P); Q uses the P mean so the band stays non-empty
                    for k in range(n):
                        dev = [(int(arr[j]), (1.0 if j == k else 0.0) - 1.0 / n) for j in range(n)]
                        band = [(int(ref[j]), -BALANCE_BAND / n) for j in range(n)]
                        mb.add_ineq(f"{tag}.gen_balance", f"{g.id}[{k}].{name}.hi", lin=_merge(dev, band))
                        mb.add_ineq(f"{tag}.gen_balance", f"{g.id}[{k}].{name}.lo",
                                    lin=_merge([(c, -v) for c, v in dev], band))
            self._inject(idx, cols)

    def add_faults(self, scenario, currents: dict | None = None):
        """Fault current variables ``I = G V`` and their squared magnitudes."""
        L, mb, tag = self.layout, self.mb, self.tag
        for f in scenario:
            G = build_fault_admittance(f).G
            idx = L.nodes.of(f.bus, f.phases)
            i0 = (currents or {}).get(f.id)
            cols = _pair(mb, f"{tag}.fault.{f.id}.I", len(idx), i0)
            mag0 = np.abs(i0) ** 2 if i0 is not None else np.zeros(len(idx))
            mag = np.array([mb.var(f"{tag}.fault.{f.id}.If[{k}]", 0.0, x0=float(mag0[k]), group="If")
                            for k in range(len(idx))])
            L.faults[f.id] = (cols[0], cols[1], mag)
            for k in range(len(idx)):
                for part, vcols in (("r", L.vr), ("i", L.vi)):
                    c = cols[0] if part == "r" else cols[1]
                    lin = [(int(c[k]), -1.0)] + [(int(vcols[idx[j]]), G[k, j]) for j in range(len(idx))]
                    mb.add_eq(f"{tag}.fault_current", f"{f.id}[{k}].{part}", lin=lin)
                ir, ii = int(cols[0][k]), int(cols[1][k])
                mb.add_eq(f"{tag}.fault_magnitude", f"{f.id}[{k}]", lin=[(int(mag[k]), 1.0)],
                          quad=[(ir, ir, -1.0), (ii, ii, -1.0)])
            self._inject(idx, cols, -1.0)

    def add_voltage_bounds(self):
        L = self.layout
        for b in self.net.buses:
            for p, node in zip(b.phases, L.nodes.of(b.id, b.phases)):
                vr, vi = int(L.vr[node]), int(L.vi[node])
                sq = [(vr, vr, 1.0), (vi, vi, 1.0)]
                self.mb.add_ineq(f"{self.tag}.voltage", f"{b.id}.{p}.min", quad=[(a, c, -w) for a, c, w in sq],
                                 const=b.vmin_pu**2)
                self.mb.add_ineq(f"{self.tag}.voltage", f"{b.id}.{p}.max", quad=sq, const=-b.vmax_pu**2)

    def close(self):
        for node, (bus, phase) in enumerate(self.layout.nodes.nodes):
            self.mb.add_eq(f"{self.tag}.kcl", f"{bus}.{phase}.r", lin=_merge(self._kcl_r[node]))
            self.mb.add_eq(f"{self.tag}.kcl", f"{bus}.{phase}.i", lin=_merge(self._kcl_i[node]))
        return self.layout


def _merge(*terms):
    out: dict[int, float] = {}
    for group in terms:
        for col, val in group:
            out[col] = out.get(col, 0.0) + val
    return list(out.items())


def _check_buildable(network: Network):
    if not network.reference_generators:
        raise OpfBuildError("network has no Reference generator")
    for b in network.buses:
        if b.vmin_pu > b.vmax_pu:
            raise OpfBuildError(f"bus {b.id!r}: vmin_pu > vmax_pu")
    for g in network.reference_generators:
        b = network.bus(g.bus)
        if not (b.vmin_pu <= g.vset_pu <= b.vmax_pu):
            raise OpfBuildError(f"reference {g.id!r} set point {g.vset_pu} outside bus {b.id!r} voltage bounds")


def add_opf_block(mb: ModelBuilder, network: Network, start: PhasorState | None = None,
                  tag: str = "n0", idle: frozenset = frozenset()) -> BlockLayout:
    """OPF constraints of ``network`` (without objective) on ``mb``."""
    _check_buildable(network)
    if start is None:
        start = run_power_flow(network)
    blk = NetworkBlock(mb, network, tag, start.v)
    blk.add_ideal_references(start.gen_currents)
    blk.add_dispatchable(start.gen_currents, start.gen_power, idle)
    blk.add_constant_power_loads(start.load_currents)
    blk.add_lines(thermal=True, currents=start.line_currents)
    blk.add_transformers(thermal=True, currents=start.transformer_currents)
    blk.add_voltage_bounds()
    return blk.close()


def cost_terms(network: Network, layout: BlockLayout) -> list[tuple[int, float]]:
    """Linear objective terms of the generation cost (currency per hour)."""
    base = network.phase_power_base_kw
    return [(int(c), g.cost_per_kwh * base) for g in network.dispatchable_generators for c in layout.p[g.id]]


def max_cost(network: Network) -> float:
    """Generation cost with every DG at capacity."""
    return float(sum(g.cost_per_kwh * sum(g.pmax) * network.phase_power_base_kw
                     for g in network.dispatchable_generators))


def build_opf(network: Network, start: PhasorState | None = None) -> NlpProblem:
    """Minimum-cost OPF as a quadratic NLP.

    The start point is a power flow with no DG output unless ``start`` is
    given.  ``problem.meta["layout"]`` maps variables back to the network.
    """
    mb = ModelBuilder()
    layout = add_opf_block(mb, network, start)
    mb.add_objective(cost_terms(network, layout))
    return mb.build(layout=layout, network=network)


def extract_state(network: Network, layout: BlockLayout, x: np.ndarray, iterations: int = 0,
                  residual: float = 0.0) -> PhasorState:
    """Phasor state of the OPF block at the point ``x``."""
    st = PhasorState(network, layout.nodes, layout.voltages(x), iterations=iterations, max_residual=residual)
    val = BlockLayout.value
    st.line_currents = {k: val(x, c) for k, c in layout.lines.items()}
    st.transformer_currents = {k: val(x, c) for k, c in layout.transformers.items()}
    st.gen_currents = {k: val(x, c) for k, c in layout.gens.items()}
    for g in network.generators:
        if g.id in layout.p:
            st.gen_power[g.id] = x[layout.p[g.id]] + 1j * x[layout.q[g.id]]
        else:
            st.gen_power[g.id] = st.voltage(g.bus) * np.conj(st.gen_currents[g.id])
    for ld in network.loads:
        idx = layout.nodes.of(ld.bus, ld.phases)
        if ld.id in layout.loads:
            st.load_currents[ld.id] = val(x, layout.loads[ld.id])
        else:
            st.load_currents[ld.id] = load_admittance(ld) * st.v[idx]
    return st


def solve_opf_problem(problem: NlpProblem, *, tol: float = 1e-6, max_iter: int = 150
                      ) -> tuple[PhasorState, SolveDiagnostics, NlpSolution]:
    sol = solve_nlp(problem, tol=tol, max_iter=max_iter)
    net = problem.meta["network"]
    st = extract_state(net, problem.meta["layout"], sol.x, sol.diagnostics.iterations,
                       sol.diagnostics.primal_feasibility)
    return st, sol.diagnostics, sol


def solve_opf(network: Network, *, tol: float = 1e-6, max_iter: int = 150):
    """Minimum-cost dispatch; returns a :class:`~fcopf_engine.results.StudyResult`."""
    from .results import StudyResult

    problem = build_opf(network)
    st, diag, _ = solve_opf_problem(problem, tol=tol, max_iter=max_iter)
    log.info("opf: %s in %d iterations, cost %.4f", diag.status.value, diag.iterations, diag.objective)
    # same scaling as the FC-OPF cost term, so weights (1, 0) report the same numbers
    cost_max = max_cost(network)
    scaled = diag.objective / cost_max if cost_max > 0 else 0.0
    objective = {"cost": diag.objective, "cost_scaled": scaled, "scaled": scaled, "cost_max": cost_max}
    return StudyResult.from_state("opf", network, st, diagnostics=diag, objective=objective)
