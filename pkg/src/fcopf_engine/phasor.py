"""Phasor algebra: admittance assembly, fault admittances, star-mesh reduction.

All matrices here are complex and indexed by (bus, phase) nodes.  Ground is
the implicit reference node.
"""
from __future__ import annotations

import cmath
import itertools
import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .netmodel import (
    CONSTANT_IMPEDANCE,
    PHASES,
    SQRT3,
    FaultSpec,
    Generator,
    Network,
    phase_positions,
)

_A = cmath.exp(2j * math.pi / 3)
_POSITIVE_SEQUENCE = np.array([1.0, _A**2, _A])  # A, B lagging 120, C leading 120
_GROUP_RE = re.compile(r"^(D|Y|YN)(d|y|yn)(\d{1,2})$")


def _parse_group(vector_group: str) -> tuple[bool, int]:
    m = _GROUP_RE.match(vector_group)
    if not m:
        raise ValueError(f"unsupported vector group {vector_group!r}")
    hv, lv, clock = m.group(1), m.group(2), int(m.group(3))
    if lv == "d":
        raise ValueError(f"delta secondary not supported ({vector_group!r})")
    delta = hv == "D"
    if clock > 11 or (clock % 2 == 1) != delta:
        raise ValueError(f"clock number {clock} incompatible with {vector_group!r}")
    return delta, clock


def rotation_factor(vector_group: str) -> complex:
    """Unit complex factor W by which the secondary positive sequence is rotated."""
    _, clock = _parse_group(vector_group)
    return cmath.exp(-1j * math.radians(30 * clock))


def winding_matrix(vector_group: str, tap: float = 1.0) -> np.ndarray:
    """Real 3x3 map from primary to (open-circuit) secondary phase voltages.

    Primary currents follow from the transpose, which keeps the ideal
    transformer lossless.  Delta primaries block zero sequence.
    """
    delta, clock = _parse_group(vector_group)
    target = cmath.exp(-1j * math.radians(30 * clock))
    if delta:
        candidates = [
            (np.eye(3)[p] - np.eye(3)[q]) * s / SQRT3
            for p, q in itertools.permutations(range(3), 2)
            for s in (1.0, -1.0)
        ]
    else:
        candidates = [np.eye(3)[p] * s for p in range(3) for s in (1.0, -1.0)]
    for row in candidates:
        if abs(row @ _POSITIVE_SEQUENCE - target) < 1e-9:
            break
    else:  # pragma: no cover - the enumerations above are complete
        raise ValueError(vector_group)
    m = np.array([np.roll(row, k) for k in range(3)])
    return m / tap


def star_to_mesh(branch_impedances: Sequence[complex]) -> np.ndarray:
    """Eliminate the centre node of a star of impedances.

    Returns the symmetric mesh admittance matrix ``y`` with zero diagonal and
    ``y[j, k] = y_j * y_k / sum(y)`` where ``y_j = 1 / z_j``.
    """
    z = np.asarray(branch_impedances, dtype=complex)
    if z.size < 2:
        raise ValueError("a star needs at least two branches")
    if np.any(np.abs(z) == 0):
        raise ValueError("zero-impedance star branch")
    y = 1.0 / z
    mesh = np.outer(y, y) / y.sum()
    np.fill_diagonal(mesh, 0.0)
    return mesh


@dataclass(frozen=True, eq=False)
class FaultAdmittance:
    bus: str
    phases: tuple[str, ...]
    G: np.ndarray  # real conductance matrix over ``phases``


def build_fault_admittance(fault: FaultSpec) -> FaultAdmittance:
    """Conductance matrix G with ``I_fault = G @ V_bus`` over the faulted phases."""
    kind = fault.type
    r = list(fault.r_phase)
    if kind == "LG":
        G = np.array([[1.0 / (r[0] + fault.r_ground)]])
    elif kind == "LL":
        g = 1.0 / sum(r) if len(r) > 1 else 1.0 / r[0]
        G = np.array([[g, -g], [-g, g]])
    elif kind in ("LLG", "ThreePhase", "ThreePhaseGround"):
        grounded = kind != "ThreePhase"
        branches = r + ([fault.r_ground] if grounded else [])
        mesh = star_to_mesh(branches).real
        n = len(r)
        G = -mesh[:n, :n]
        np.fill_diagonal(G, mesh[:n].sum(axis=1))
    else:
        raise ValueError(f"unsupported fault type {kind!r}")
    if not np.all(np.isfinite(G)):
        raise ValueError(f"fault {fault.id!r} has a zero-resistance path")
    return FaultAdmittance(fault.bus, fault.phases, G)


# ---------------------------------------------------------------------------
# node indexing and assembly


class NodeIndex:
    """Ordered (bus, phase) nodes of a network."""

    def __init__(self, network: Network):
        self.nodes: list[tuple[str, str]] = [(b.id, p) for b in network.buses for p in b.phases]
        self._index = {node: k for k, node in enumerate(self.nodes)}

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, node: tuple[str, str]) -> int:
        return self._index[node]

    def of(self, bus: str, phases: Sequence[str]) -> list[int]:
        return [self._index[(bus, p)] for p in phases]


@dataclass(eq=False)
class AdmittanceMatrix:
    matrix: sp.csr_matrix
    nodes: NodeIndex

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def transformer_impedance_matrix(network: Network, tr) -> np.ndarray:
    """Series impedance on the secondary, with the secondary neutral grounding."""
    z = tr.z_system(network.power_base_kva)
    Z = np.eye(3, dtype=complex) * z
    grounding = network.bus(tr.to_bus).grounding
    if grounding is not None:
        Z = Z + grounding
    return Z


def source_impedance_matrix(network: Network, gen: Generator) -> np.ndarray:
    """Phase-domain internal impedance of a reference source (per-unit).

    With short-circuit powers the positive-sequence impedance comes from the
    three-phase level and the zero-sequence one from the single-phase level;
    the impedance angle is taken from the generator impedance data, or X/R = 10
    when none is given.
    """
    n = len(gen.phases)
    if gen.sc3_mva is None:
        Z = np.eye(n, dtype=complex) * gen.z
    else:
        angle = cmath.phase(gen.z) if abs(gen.z) > 0 else math.atan(10.0)
        unit = cmath.exp(1j * angle)
        sc3 = gen.sc3_mva * 1000.0 / network.power_base_kva
        z1 = unit / sc3
        if gen.sc1_mva is not None:
            sc1 = gen.sc1_mva * 1000.0 / network.power_base_kva
            z0 = 3.0 * unit / sc1 - 2.0 * z1
        else:
            z0 = z1
        zs, zm = (z0 + 2 * z1) / 3, (z0 - z1) / 3
        Z = np.full((n, n), zm, dtype=complex)
        np.fill_diagonal(Z, zs)
    grounding = network.bus(gen.bus).grounding
    if grounding is not None:
        Z = Z + grounding
    return Z


def load_admittance(load) -> np.ndarray:
    """Per-phase constant-impedance admittance drawing the rated power at 1 pu."""
    return np.conj(load.s)


class _Stamper:
    def __init__(self, n: int):
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.n = n

    def add(self, rows, cols, block):
        block = np.asarray(block, dtype=complex)
        r, c = np.meshgrid(rows, cols, indexing="ij")
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.vals.append(block.ravel())

    def matrix(self) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix((self.n, self.n), dtype=complex)
        return sp.csr_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(self.n, self.n),
        )


def assemble_admittance(
    network: Network,
    scenario: Sequence[FaultSpec] | None = None,
    *,
    sources: Mapping[str, np.ndarray] | None = None,
    loads: str | None = None,
) -> AdmittanceMatrix:
    """Sparse nodal admittance matrix of a per-unit network.

    ``sources`` maps generator ids to internal admittance matrices over the
    generator phases (stamped as shunts).  When omitted, a faulted network
    stamps the reference sources' short-circuit impedances and a pre-fault
    network stamps none.  ``loads`` selects constant-impedance loads:
    ``"all"`` stamps every load at nominal voltage, ``"model"`` only loads
    declared ConstantImpedance; the default is ``"all"`` for faulted networks.
    """
    if not network.per_unit:
        raise ValueError("assemble_admittance needs a per-unit network")
    nodes = NodeIndex(network)
    st = _Stamper(len(nodes))

    for ln in network.lines:
        try:
            Y = np.linalg.inv(ln.z)
        except np.linalg.LinAlgError:
            raise ValueError(f"line {ln.id!r} has a singular impedance matrix") from None
        f = nodes.of(ln.from_bus, ln.phases)
        t = nodes.of(ln.to_bus, ln.phases)
        st.add(f, f, Y)
        st.add(t, t, Y)
        st.add(f, t, -Y)
        st.add(t, f, -Y)

    for tr in network.transformers:
        M = winding_matrix(tr.vector_group, tr.tap)
        Y = np.linalg.inv(transformer_impedance_matrix(network, tr))
        f = nodes.of(tr.from_bus, PHASES)
        t = nodes.of(tr.to_bus, PHASES)
        st.add(t, t, Y)
        st.add(t, f, -Y @ M)
        st.add(f, t, -M.T @ Y)
        st.add(f, f, M.T @ Y @ M)

    if sources is None:
        sources = {}
        if scenario is not None:
            sources = {
                g.id: np.linalg.inv(source_impedance_matrix(network, g)) for g in network.reference_generators
            }
    for gen_id, Yg in sources.items():
        gen = network.generator(gen_id)
        idx = nodes.of(gen.bus, gen.phases)
        Yg = np.asarray(Yg, dtype=complex)
        st.add(idx, idx, np.diag(Yg) if Yg.ndim == 1 else Yg)

    if loads is None:
        loads = "all" if scenario is not None else "model"
    for ld in network.loads:
        if loads == "all" or (loads == "model" and ld.model == CONSTANT_IMPEDANCE):
            idx = nodes.of(ld.bus, ld.phases)
            st.add(idx, idx, np.diag(load_admittance(ld)))

    for fault in scenario or ():
        fa = build_fault_admittance(fault)
        idx = nodes.of(fault.bus, fault.phases)
        st.add(idx, idx, fa.G)

    return AdmittanceMatrix(st.matrix(), nodes)


def flat_start(network: Network) -> np.ndarray:
    """Balanced 1 pu voltages rotated through every transformer's vector group."""
    nodes = NodeIndex(network)
    ref = network.reference_generators[0]
    angle = {ref.bus: math.radians(ref.theta_deg)}
    pending = True
    while pending:
        pending = False
        for ln in network.lines:
            for a, b in ((ln.from_bus, ln.to_bus), (ln.to_bus, ln.from_bus)):
                if a in angle and b not in angle:
                    angle[b] = angle[a]
                    pending = True
        for tr in network.transformers:
            shift = cmath.phase(rotation_factor(tr.vector_group))
            if tr.from_bus in angle and tr.to_bus not in angle:
                angle[tr.to_bus] = angle[tr.from_bus] + shift
                pending = True
            elif tr.to_bus in angle and tr.from_bus not in angle:
                angle[tr.from_bus] = angle[tr.to_bus] - shift
                pending = True
    v = np.empty(len(nodes), dtype=complex)
    offsets = {"A": 0.0, "B": -2 * math.pi / 3, "C": 2 * math.pi / 3}
    for k, (bus, phase) in enumerate(nodes.nodes):
        v[k] = cmath.exp(1j * (angle.get(bus, 0.0) + offsets[phase]))
    return v


def reference_voltages(gen: Generator) -> np.ndarray:
    """Set-point phasors of a reference source over its phases."""
    offsets = {"A": 0.0, "B": -120.0, "C": 120.0}
    return np.array([gen.vset_pu * cmath.exp(1j * math.radians(gen.theta_deg + offsets[p])) for p in gen.phases])
