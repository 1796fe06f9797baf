"""Fixed-dispatch short-circuit studies.

Every source becomes a voltage behind an impedance, loads become constant
impedances at nominal voltage, and each fault scenario is one linear solve.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .netmodel import FaultSpec, Generator, Network
from .phasor import (
    NodeIndex,
    assemble_admittance,
    build_fault_admittance,
    reference_voltages,
    source_impedance_matrix,
)
from .powerflow import PhasorState


class ShortCircuitError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class GeneratorFaultModel:
    """Internal voltage and admittance of a DG during a fault (per phase)."""

    e: np.ndarray
    y: np.ndarray

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.y == 0, complex(np.inf, 0), 1.0 / np.where(self.y == 0, 1, self.y))


def impedance_direction(gen: Generator) -> complex:
    """Unit phasor with the angle of the generator's internal impedance."""
    return cmath.exp(1j * cmath.phase(gen.z))


def generator_sc_model(gen: Generator, v_opf, s_opf) -> GeneratorFaultModel:
    """Voltage-behind-impedance model at an operating point.

    The internal voltage equals the pre-fault terminal voltage and the
    impedance magnitude ``|V|^2 / (Kf |S|)`` makes a bolted terminal fault
    draw ``Kf`` times the operating current.  An idle generator (S = 0)
    contributes nothing.
    """
    v = np.asarray(v_opf, dtype=complex)
    s = np.asarray(s_opf, dtype=complex)
    vm2 = np.abs(v) ** 2
    if np.any((np.abs(s) > 0) & (vm2 == 0)):
        raise ValueError(f"generator {gen.id!r} has power at zero voltage")
    with np.errstate(divide="ignore", invalid="ignore"):
        y_mag = np.where(np.abs(s) > 0, gen.kf * np.abs(s) / np.where(vm2 > 0, vm2, 1.0), 0.0)
    y = y_mag / impedance_direction(gen)
    return GeneratorFaultModel(v.copy(), y)


@dataclass(eq=False)
class FaultCurrent:
    fault_id: str
    bus: str
    phases: tuple[str, ...]
    current_pu: np.ndarray  # complex, over ``phases``
    current_a: np.ndarray  # magnitudes in amperes


@dataclass(eq=False)
class FaultStudyResult:
    scenario_index: int
    faults: list[FaultCurrent]
    nodes: NodeIndex
    v: np.ndarray  # faulted node voltages (pu)
    gen_currents: dict[str, np.ndarray] = field(default_factory=dict)  # pu injections
    residual: float = 0.0

    @property
    def scenario_id(self) -> str:
        return "+".join(f.fault_id for f in self.faults)

    def magnitude_a(self, bus: str, phase: str) -> float:
        for f in self.faults:
            if f.bus == bus and phase in f.phases:
                return float(f.current_a[f.phases.index(phase)])
        raise KeyError((bus, phase))

    @property
    def squared_sum_pu(self) -> float:
        """Sum over faulted phases of |I|^2 in pu."""
        return float(sum(np.sum(np.abs(f.current_pu) ** 2) for f in self.faults))


def source_models(network: Network, operating_point: PhasorState) -> dict[str, GeneratorFaultModel]:
    models = {}
    for g in network.dispatchable_generators:
        models[g.id] = generator_sc_model(g, operating_point.voltage(g.bus), operating_point.gen_power[g.id])
    return models


def solve_short_circuit(
    network: Network,
    operating_point: PhasorState,
    scenario: Sequence[FaultSpec] | int,
    *,
    models: dict[str, GeneratorFaultModel] | None = None,
) -> FaultStudyResult:
    """Fault currents for one scenario at a fixed operating point."""
    if isinstance(scenario, int):
        index = scenario
        scenario = network.fault_scenarios[scenario]
    else:
        index = next((k for k, s in enumerate(network.fault_scenarios) if s is scenario), -1)
    for f in scenario:
        if not network.has_bus(f.bus):
            raise ShortCircuitError(f"fault {f.id!r} references unknown bus {f.bus!r}")
    if models is None:
        models = source_models(network, operating_point)

    ref_y = {g.id: np.linalg.inv(source_impedance_matrix(network, g)) for g in network.reference_generators}
    sources = dict(ref_y)
    sources.update({gid: m.y for gid, m in models.items()})
    Ym = assemble_admittance(network, scenario, sources=sources, loads="all")
    nodes = Ym.nodes
    inj = np.zeros(len(nodes), dtype=complex)
    e_ref = {}
    for g in network.reference_generators:
        e_ref[g.id] = reference_voltages(g)
        inj[nodes.of(g.bus, g.phases)] += ref_y[g.id] @ e_ref[g.id]
    for gid, m in models.items():
        g = network.generator(gid)
        inj[nodes.of(g.bus, g.phases)] += m.y * m.e

    Y = Ym.matrix.tocsc()
    try:
        v = spla.splu(Y).solve(inj)
    except RuntimeError as exc:
        raise ShortCircuitError(f"singular fault network (isolated island without a source?): {exc}") from None
    if not np.all(np.isfinite(v)):
        raise ShortCircuitError("singular fault network (isolated island without a source?)")
    residual = float(np.abs(Y @ v - inj).max())

    faults = []
    for f in scenario:
        G = build_fault_admittance(f).G
        i = G @ v[nodes.of(f.bus, f.phases)]
        faults.append(FaultCurrent(f.id, f.bus, f.phases, i, np.abs(i) * network.i_base(f.bus)))
    gen_currents = {}
    for g in network.reference_generators:
        gen_currents[g.id] = ref_y[g.id] @ (e_ref[g.id] - v[nodes.of(g.bus, g.phases)])
    for gid, m in models.items():
        g = network.generator(gid)
        gen_currents[gid] = m.y * (m.e - v[nodes.of(g.bus, g.phases)])
    return FaultStudyResult(index, faults, nodes, v, gen_currents, residual)


def fault_studies(network: Network, operating_point: PhasorState) -> list[FaultStudyResult]:
    """Every declared fault scenario at one operating point."""
    models = source_models(network, operating_point)
    return [solve_short_circuit(network, operating_point, k, models=models) for k in range(len(network.fault_scenarios))]


def operating_current(v_opf, s_opf) -> np.ndarray:
    """Magnitude of the generator current at its operating point."""
    v = np.abs(np.asarray(v_opf, dtype=complex))
    return np.abs(np.asarray(s_opf, dtype=complex)) / np.where(v > 0, v, math.inf)
