"""Fault-current constrained OPF.

One NLP holds the operating network (tag ``n0``) and a copy of the network
per fault scenario (``n1``, ``n2``, ...).  DGs in the fault copies are
voltages behind impedances whose internal voltage is the ``n0`` terminal
voltage and whose admittance scales with the ``n0`` apparent power::

    m = |V|^2,   s^2 = P^2 + Q^2,   g m = K_f s,   I = g u (E - V)

with ``u`` the unit phasor of the generator's admittance angle, so a bolted
terminal fault draws ``K_f |S| / |V|``, i.e. K_f times the operating
current.

The ``s`` row is degenerate at ``S = 0``, so :func:`solve_fcopf` works in two
passes: a relaxed pass where ``s`` only sits between tangent cuts of ``|S|``
and ``P / pf``, then an exact pass with the DGs that came out idle pinned to
zero output.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .netmodel import PHASES, Network
from .nlp import ModelBuilder, NlpProblem, SolveDiagnostics, SolveStatus, solve_nlp
from .opf import BlockLayout, NetworkBlock, _pair, add_opf_block, cost_terms, extract_state, max_cost
from .phasor import transformer_impedance_matrix, winding_matrix
from .powerflow import PhasorState, full_dispatch, run_power_flow
from .shortcircuit import (
    FaultCurrent,
    FaultStudyResult,
    ShortCircuitError,
    fault_studies,
    impedance_direction,
)

log = logging.getLogger(__name__)

DEFAULT_WEIGHTS = (1.0, 1.0)
# keeps the relaxed cap strictly above the outermost cut at the power-factor limit
APPARENT_MARGIN = 1e-3
# a DG is taken as idle after the relaxed pass below this fraction of capacity
IDLE_FRACTION = 1e-4
RELAXED_CUTS = 5
RELAXED_TOL = 1e-5
WARM_BARRIER = 1e-8
MAX_RELEASES = 3


class ObjectiveScaling(NamedTuple):
    """Denominators of the two objective terms.

    ``fault_max`` is the sum of squared per-unit fault-current magnitudes of
    the max-DG study; ``fault_max_a`` is the same study summed in amperes.
    """

    cost_max: float
    fault_max: float
    fault_max_a: float = math.nan


def max_dg_state(network: Network) -> PhasorState:
    """Power flow with every DG at its active and reactive limits."""
    return run_power_flow(network, full_dispatch(network, reactive=True))


def compute_objective_scaling(network: Network) -> ObjectiveScaling:
    cost_max = max_cost(network)
    studies = fault_studies(network, max_dg_state(network))
    fault_max = sum(st.squared_sum_pu for st in studies)
    fault_max_a = sum(float(np.sum(f.current_a)) for st in studies for f in st.faults)
    if fault_max <= 0:
        raise ShortCircuitError("max-DG study produced no fault current")
    return ObjectiveScaling(float(cost_max), float(fault_max), float(fault_max_a))


@dataclass(eq=False)
class DgAux:
    m: np.ndarray  # |V|^2 at the terminal
    s: np.ndarray  # apparent power
    g: np.ndarray  # fault admittance magnitude


@dataclass(eq=False)
class MultiNetworkProblem:
    problem: NlpProblem
    network: Network
    opf: BlockLayout
    faults: list[BlockLayout]
    aux: dict[str, DgAux]
    coupling: dict[str, dict[str, dict[str, np.ndarray]]]
    weights: tuple[float, float]
    scaling: ObjectiveScaling
    hard_cap_a: float | None = None
    fault_gen_cols: list[dict[str, tuple[np.ndarray, np.ndarray]]] = field(default_factory=list)

    def shared_variables(self) -> set[int]:
        """Columns of ``n0`` that appear in at least one fault block."""
        out: set[int] = set()
        for per_gen in self.coupling.values():
            for cols in per_gen.values():
                for key in ("P", "Q", "V_r", "V_i"):
                    out.update(int(c) for c in cols[key])
        return out

    def objective_parts(self, x: np.ndarray) -> dict[str, float]:
        w_cost, w_fault = self.weights
        cost = float(sum(c * x[k] for k, c in cost_terms(self.network, self.opf)))
        fault_sq = float(sum(x[lay.faults[f][2]].sum() for lay in self.faults for f in lay.faults))
        cost_scaled = cost / self.scaling.cost_max if self.scaling.cost_max > 0 else 0.0
        fault_scaled = fault_sq / self.scaling.fault_max
        return {
            "cost": cost,
            "fault_squared_pu": fault_sq,
            "cost_scaled": cost_scaled,
            "fault_scaled": fault_scaled,
            "scaled": w_cost * cost_scaled + w_fault * fault_scaled,
        }

    def fault_results(self, x: np.ndarray) -> list[FaultStudyResult]:
        net = self.network
        out = []
        for k, (lay, scen) in enumerate(zip(self.faults, net.fault_scenarios)):
            faults = []
            for f in scen:
                ir, ii, _ = lay.faults[f.id]
                i = x[ir] + 1j * x[ii]
                faults.append(FaultCurrent(f.id, f.bus, f.phases, i, np.abs(i) * net.i_base(f.bus)))
            gens = {gid: BlockLayout.value(x, cols) for gid, cols in lay.gens.items()}
            out.append(FaultStudyResult(k, faults, lay.nodes, lay.voltages(x), gens))
        return out


def _fault_block_start(network: Network, study: FaultStudyResult):
    v = study.v
    nodes = study.nodes
    lines = {ln.id: np.linalg.solve(ln.z, v[nodes.of(ln.from_bus, ln.phases)] - v[nodes.of(ln.to_bus, ln.phases)])
             for ln in network.lines}
    xf = {}
    for tr in network.transformers:
        M = winding_matrix(tr.vector_group, tr.tap)
        Z = transformer_impedance_matrix(network, tr)
        xf[tr.id] = np.linalg.solve(Z, M @ v[nodes.of(tr.from_bus, PHASES)] - v[nodes.of(tr.to_bus, PHASES)])
    faults = {f.fault_id: f.current_pu for f in study.faults}
    return v, lines, xf, study.gen_currents, faults


def build_fcopf(
    network: Network,
    weights: Sequence[float] = DEFAULT_WEIGHTS,
    *,
    hard_cap: float | None = None,
    scaling: ObjectiveScaling | None = None,
    start: PhasorState | None = None,
    idle: Iterable[str] = (),
    exact: bool = False,
) -> MultiNetworkProblem:
    """Assemble the operating network and every fault scenario into one NLP.

    ``hard_cap`` (amperes) adds ``|I_f| <= hard_cap`` for every faulted phase.
    DGs named in ``idle`` are pinned to zero output.  ``exact`` writes the
    apparent-power rows as equalities, which needs every other DG producing.
    The variable layout does not depend on ``idle`` or ``exact``.
    """
    if not network.fault_scenarios:
        raise ValueError("network has no fault scenarios")
    for k, scen in enumerate(network.fault_scenarios):
        for f in scen:
            if not network.has_bus(f.bus):
                raise ValueError(f"fault scenario {k} references unknown bus {f.bus!r}")
    w_cost, w_fault = (float(w) for w in weights)
    if w_cost < 0 or w_fault < 0:
        raise ValueError("objective weights must be non-negative")
    scaling = scaling or compute_objective_scaling(network)
    if start is None:
        start = run_power_flow(network)

    mb = ModelBuilder()
    idle = frozenset(idle)
    n0 = add_opf_block(mb, network, start, idle=idle)

    aux: dict[str, DgAux] = {}
    for g in network.dispatchable_generators:
        idx = n0.nodes.of(g.bus, g.phases)
        n = len(idx)
        v0 = start.voltage(g.bus)
        s0 = np.zeros(n) if g.id in idle else np.abs(start.gen_power[g.id])
        pmax = np.asarray(g.pmax)
        pf = 1.0 / math.hypot(1.0, g.q_ratio)
        m = np.array([mb.var(f"n0.dg.{g.id}.m[{k}]", x0=float(abs(v0[k]) ** 2)) for k in range(n)])
        s = np.array([mb.var(f"n0.dg.{g.id}.s[{k}]", *((-math.inf, math.inf) if g.id in idle or pmax[k] <= 0
                                                       else (0.0, float(pmax[k] / pf * 1.1 + 1e-6))),
                             x0=float(s0[k])) for k in range(n)])
        gy = np.array([mb.var(f"n0.dg.{g.id}.g[{k}]", x0=float(g.kf * s0[k] / abs(v0[k]) ** 2)) for k in range(n)])
        for k, node in enumerate(idx):
            vr, vi = int(n0.vr[node]), int(n0.vi[node])
            p, q = int(n0.p[g.id][k]), int(n0.q[g.id][k])
            mk, sk, gk = int(m[k]), int(s[k]), int(gy[k])
            el = f"{g.id}[{k}]"
            mb.add_eq("n0.dg_vsq", el, lin=[(mk, 1.0)], quad=[(vr, vr, -1.0), (vi, vi, -1.0)])
            if g.id in idle or pmax[k] <= 0:
                mb.add_eq("n0.dg_apparent", el, lin=[(sk, 1.0)])
            elif g.q_ratio <= 0:
                mb.add_eq("n0.dg_apparent", el, lin=[(sk, 1.0), (p, -1.0)])
            elif exact:
                mb.add_eq("n0.dg_apparent", el, quad=[(sk, sk, 1.0), (p, p, -1.0), (q, q, -1.0)])
            else:
                # tangent cuts of |S| over the power-factor band, and s <= P / pf;
                # unlike the cone these stay regular at S = 0
                phi = math.atan(g.q_ratio)
                for j, th in enumerate(np.linspace(-phi, phi, RELAXED_CUTS)):
                    mb.add_ineq("n0.dg_apparent", f"{el}.{j}", lin=[(p, math.cos(th)), (q, math.sin(th)), (sk, -1.0)])
                mb.add_ineq("n0.dg_apparent_cap", el, lin=[(sk, 1.0), (p, -(1.0 + APPARENT_MARGIN) / pf)])
            mb.add_eq("n0.dg_admittance", el, lin=[(sk, -g.kf)], quad=[(gk, mk, 1.0)])
        aux[g.id] = DgAux(m, s, gy)

    base_studies = fault_studies(network, start)
    fault_layouts: list[BlockLayout] = []
    coupling: dict[str, dict[str, dict[str, np.ndarray]]] = {}
    fault_gen_cols = []
    for k, scen in enumerate(network.fault_scenarios):
        tag = f"n{k + 1}"
        v, lines, xf, gens, faults = _fault_block_start(network, base_studies[k])
        blk = NetworkBlock(mb, network, tag, v)
        blk.add_thevenin_references(gens)
        blk.add_impedance_loads()
        blk.add_lines(thermal=False, currents=lines)
        blk.add_transformers(thermal=False, currents=xf)
        blk.add_faults(scen, faults)
        lay = blk.layout
        coupling[tag] = {}
        for g in network.dispatchable_generators:
            idx = lay.nodes.of(g.bus, g.phases)
            n0_idx = n0.nodes.of(g.bus, g.phases)
            cols = _pair(mb, f"{tag}.gen.{g.id}.I", len(idx), gens.get(g.id))
            lay.gens[g.id] = cols
            u = 1.0 / impedance_direction(g)  # admittance angle
            ur, ui = u.real, u.imag
            for j, (node, node0) in enumerate(zip(idx, n0_idx)):
                er, ei = int(n0.vr[node0]), int(n0.vi[node0])
                vr, vi = int(lay.vr[node]), int(lay.vi[node])
                gk = int(aux[g.id].g[j])
                # I = g u (E - V)
                mb.add_eq(f"{tag}.dg_fault", f"{g.id}[{j}].r", lin=[(int(cols[0][j]), -1.0)],
                          quad=[(gk, er, ur), (gk, vr, -ur), (gk, ei, -ui), (gk, vi, ui)])
                mb.add_eq(f"{tag}.dg_fault", f"{g.id}[{j}].i", lin=[(int(cols[1][j]), -1.0)],
                          quad=[(gk, ei, ur), (gk, vi, -ur), (gk, er, ui), (gk, vr, -ui)])
            blk._inject(idx, cols)
            coupling[tag][g.id] = {
                "P": n0.p[g.id], "Q": n0.q[g.id],
                "V_r": n0.vr[n0_idx], "V_i": n0.vi[n0_idx],
                "g": aux[g.id].g,
            }
        if hard_cap is not None:
            for f in scen:
                cap_pu = hard_cap / network.i_base(f.bus)
                for j, c in enumerate(lay.faults[f.id][2]):
                    mb.add_ineq(f"{tag}.fault_cap", f"{f.id}[{j}]", lin=[(int(c), 1.0)], const=-cap_pu**2)
        blk.close()
        fault_layouts.append(lay)
        fault_gen_cols.append(dict(lay.gens))

    if w_cost and scaling.cost_max > 0:
        mb.add_objective([(c, v * w_cost / scaling.cost_max) for c, v in cost_terms(network, n0)])
    if w_fault:
        mb.add_objective([(int(c), w_fault / scaling.fault_max)
                          for lay in fault_layouts for f in lay.faults for c in lay.faults[f][2]])
    problem = mb.build(layout=n0, network=network)
    return MultiNetworkProblem(problem, network, n0, fault_layouts, aux, coupling, (w_cost, w_fault), scaling,
                               hard_cap, fault_gen_cols)


def _idle_generators(network: Network, mp: MultiNetworkProblem, x: np.ndarray) -> set[str]:
    out = set()
    for g in network.dispatchable_generators:
        cap = max(g.pmax, default=0.0)
        if cap <= 0 or np.max(x[mp.opf.p[g.id]]) <= IDLE_FRACTION * cap:
            out.add(g.id)
    return out


def _pinned_descent(network: Network, mp: MultiNetworkProblem, sol, idle: set[str]) -> dict[str, float]:
    """First-order change of the objective when an idle DG starts producing.

    Uses the multipliers of the rows pinning P, Q and s, along directions at
    unity power factor and at either power-factor limit.  Negative values
    mean the pin is holding the DG back.
    """
    rows = {lab: i for i, lab in enumerate(mp.problem.eq_labels)}
    out = {}
    for g in network.dispatchable_generators:
        if g.id not in idle or max(g.pmax, default=0.0) <= 0:
            continue
        best = math.inf
        for tq in {0.0, g.q_ratio, -g.q_ratio}:
            d = 0.0
            for k in range(len(g.phases)):
                lp = sol.lam[rows[("n0.gen_idle", f"{g.id}[{k}].p")]]
                lq = sol.lam[rows[("n0.gen_idle", f"{g.id}[{k}].q")]]
                ls = sol.lam[rows[("n0.dg_apparent", f"{g.id}[{k}]")]]
                d -= lp + lq * tq + ls * math.hypot(1.0, tq)
            best = min(best, d)
        out[g.id] = best
    return out


def solve_fcopf(
    network: Network,
    weights: Sequence[float] = DEFAULT_WEIGHTS,
    *,
    hard_cap: float | None = None,
    tol: float = 1e-6,
    max_iter: int = 200,
):
    """Solve the fault-constrained OPF; returns a :class:`~fcopf_engine.results.StudyResult`.

    A relaxed pass fixes which DGs stay idle; the exact pass then pins those
    to zero and solves with every apparent-power row as an equality.  A pinned
    DG whose multipliers show the objective would fall if it produced is
    released and the exact pass repeated.
    """
    from .results import StudyResult, fault_table

    scaling = compute_objective_scaling(network)
    start = run_power_flow(network)
    mp = build_fcopf(network, weights, hard_cap=hard_cap, scaling=scaling, start=start)
    sol = solve_nlp(mp.problem, tol=max(tol, RELAXED_TOL), max_iter=max_iter)
    passes = [sol.diagnostics]
    if sol.diagnostics.status in (SolveStatus.OPTIMAL, SolveStatus.ITERATION_LIMIT):
        idle = _idle_generators(network, mp, sol.x)
        x_relaxed = sol.x
        for _ in range(MAX_RELEASES + 1):
            exact = build_fcopf(network, weights, hard_cap=hard_cap, scaling=scaling, start=start,
                                idle=idle, exact=True)
            x0 = x_relaxed.copy()
            for gid in idle:
                for cols in (exact.opf.p[gid], exact.opf.q[gid], exact.aux[gid].s, exact.aux[gid].g):
                    x0[cols] = 0.0
            trial = solve_nlp(exact.problem, tol=tol, max_iter=max_iter, x0=x0, barrier=WARM_BARRIER)
            passes.append(trial.diagnostics)
            if trial.diagnostics.status != SolveStatus.OPTIMAL:
                # keep the exact pass only when it converged
                break
            mp, sol = exact, trial
            held = {k for k, d in _pinned_descent(network, mp, sol, idle).items() if d < -tol}
            if not held:
                break
            log.info("fcopf: releasing %s", ", ".join(sorted(held)))
            idle -= held
    diag: SolveDiagnostics = sol.diagnostics
    diag.iterations = sum(d.iterations for d in passes)
    diag.seconds = sum(d.seconds for d in passes)
    st = extract_state(network, mp.opf, sol.x, diag.iterations, diag.primal_feasibility)
    studies = mp.fault_results(sol.x)
    parts = mp.objective_parts(sol.x)
    parts.update(weights=list(mp.weights), cost_max=mp.scaling.cost_max, fault_max=mp.scaling.fault_max,
                 fault_max_a=mp.scaling.fault_max_a)
    log.info("fcopf: %s in %d iterations (%.2f s), scaled objective %.6f", diag.status.value, diag.iterations,
             diag.seconds, parts["scaled"])
    meta = {"hard_cap_a": hard_cap, "scenarios": len(network.fault_scenarios), "passes": len(passes)}
    res = StudyResult.from_state("fcopf", network, st, diagnostics=diag, objective=parts,
                                 fault_rows=fault_table(studies), meta=meta)
    res.fault_results = studies
    res.artifacts.update(problem=mp, solution=sol)
    return res
