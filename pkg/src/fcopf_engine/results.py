"""Study results as plain tables with JSON and CSV serialization."""
from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .netmodel import Network
from .nlp import SolveDiagnostics

STUDY_KINDS = ("pf", "sc", "opf", "fcopf")


def natural_key(text: str):
    """Sort key that orders ``Svc2`` before ``Svc10`` and ``11`` before ``100``."""
    return [(0, int(t), "") if t.isdigit() else (1, 0, t) for t in re.split(r"(\d+)", text) if t]


@dataclass
class DispatchRow:
    generator: str
    bus: str
    phases: tuple[str, ...]
    p_kw: tuple[float, ...]
    q_kvar: tuple[float, ...]
    cost: float


@dataclass
class VoltageRow:
    bus: str
    phases: tuple[str, ...]
    magnitude_pu: tuple[float, ...]
    angle_deg: tuple[float, ...]


@dataclass
class FaultRow:
    scenario: int
    fault_id: str
    bus: str
    phases: tuple[str, ...]
    current_pu: tuple[float, ...]
    current_a: tuple[float, ...]
    total_a: float


_ROW_TYPES = {"dispatch": DispatchRow, "voltages": VoltageRow, "faults": FaultRow}


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


@dataclass
class StudyResult:
    """Dispatch, voltage and fault-current tables of one study.

    ``state``, ``fault_results`` and ``artifacts`` keep the solved objects for
    programmatic use; they are not serialized and do not take part in equality.
    """

    kind: str
    network: str
    dispatch: list[DispatchRow] = field(default_factory=list)
    voltages: list[VoltageRow] = field(default_factory=list)
    faults: list[FaultRow] = field(default_factory=list)
    objective: dict[str, Any] = field(default_factory=dict)
    diagnostics: dict[str, Any] | None = None
    meta: dict[str, Any] = field(default_factory=dict)
    state: Any = field(default=None, compare=False, repr=False)
    fault_results: Any = field(default=None, compare=False, repr=False)
    artifacts: dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    @property
    def total_cost(self) -> float:
        return float(sum(r.cost for r in self.dispatch))

    @property
    def total_dispatch_kw(self) -> float:
        return float(sum(sum(r.p_kw) for r in self.dispatch))

    @property
    def total_fault_a(self) -> float:
        return float(sum(r.total_a for r in self.faults))

    @property
    def status(self) -> str | None:
        return None if self.diagnostics is None else self.diagnostics["status"]

    def fault_current_a(self, bus: str, phase: str = "A") -> float:
        for r in self.faults:
            if r.bus == bus and phase in r.phases:
                return r.current_a[r.phases.index(phase)]
        raise KeyError((bus, phase))

    def min_voltage(self) -> tuple[float, str, str]:
        return min((m, r.bus, p) for r in self.voltages for p, m in zip(r.phases, r.magnitude_pu))

    # serialization

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "network": self.network,
            "dispatch": [asdict(r) for r in self.dispatch],
            "voltages": [asdict(r) for r in self.voltages],
            "faults": [asdict(r) for r in self.faults],
            "totals": {
                "cost": self.total_cost,
                "dispatch_kw": self.total_dispatch_kw,
                "fault_current_a": self.total_fault_a,
            },
            "objective": self.objective,
            "diagnostics": self.diagnostics,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StudyResult":
        if d.get("kind") not in STUDY_KINDS:
            raise ValueError(f"not a study result (kind={d.get('kind')!r})")
        tables = {key: [typ(**_tuples(row)) for row in d.get(key, [])] for key, typ in _ROW_TYPES.items()}
        return cls(kind=d["kind"], network=d["network"], objective=d.get("objective", {}),
                   diagnostics=d.get("diagnostics"), meta=d.get("meta", {}), **tables)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "StudyResult":
        return cls.from_dict(json.loads(text))

    def write_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def read_json(cls, path: str | Path) -> "StudyResult":
        return cls.from_json(Path(path).read_text())

    def write_csv(self, directory: str | Path) -> list[Path]:
        """One CSV per table, one line per (row, phase)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        specs = {
            "dispatch": (["generator", "bus", "phase", "p_kw", "q_kvar", "cost"],
                         lambda r: [[r.generator, r.bus, p, repr(a), repr(b), repr(r.cost)]
                                    for p, a, b in zip(r.phases, r.p_kw, r.q_kvar)]),
            "voltages": (["bus", "phase", "magnitude_pu", "angle_deg"],
                         lambda r: [[r.bus, p, repr(m), repr(a)] for p, m, a in zip(r.phases, r.magnitude_pu, r.angle_deg)]),
            "faults": (["scenario", "fault_id", "bus", "phase", "current_pu", "current_a", "total_a"],
                       lambda r: [[r.scenario, r.fault_id, r.bus, p, repr(c), repr(a), repr(r.total_a)]
                                  for p, c, a in zip(r.phases, r.current_pu, r.current_a)]),
        }
        for name, (header, rows) in specs.items():
            path = directory / f"{name}.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                for r in getattr(self, name):
                    w.writerows(rows(r))
            written.append(path)
        return written

    # construction

    @classmethod
    def from_state(cls, kind: str, network: Network, state, *, diagnostics: SolveDiagnostics | None = None,
                   objective: dict | None = None, fault_results: Sequence | None = None,
                   fault_rows: list[FaultRow] | None = None, meta: dict | None = None) -> "StudyResult":
        base = network.phase_power_base_kw
        dispatch = []
        for g in network.generators:
            s = np.asarray(state.gen_power.get(g.id, np.zeros(len(g.phases))), dtype=complex) * base
            dispatch.append(DispatchRow(g.id, g.bus, tuple(g.phases), tuple(float(v) for v in s.real),
                                        tuple(float(v) for v in s.imag), float(g.cost_per_kwh * s.real.sum())))
        voltages = []
        for b in sorted(network.buses, key=lambda b: natural_key(b.id)):
            v = state.voltage(b.id)
            voltages.append(VoltageRow(b.id, tuple(b.phases), tuple(float(m) for m in np.abs(v)),
                                       tuple(float(a) for a in np.degrees(np.angle(v)))))
        if fault_rows is None:
            fault_rows = fault_table(fault_results or [])
        return cls(
            kind=kind,
            network=network.name or "",
            dispatch=dispatch,
            voltages=voltages,
            faults=fault_rows,
            objective=dict(objective or {}),
            diagnostics=None if diagnostics is None else diagnostics.to_dict(),
            meta=dict(meta or {}),
            state=state,
            fault_results=fault_results,
        )


def fault_table(studies: Sequence) -> list[FaultRow]:
    """Rows from :class:`~fcopf_engine.shortcircuit.FaultStudyResult` objects."""
    rows = []
    for st in studies:
        for f in st.faults:
            pu = tuple(float(v) for v in np.abs(f.current_pu))
            amps = tuple(float(v) for v in f.current_a)
            rows.append(FaultRow(st.scenario_index, f.fault_id, f.bus, tuple(f.phases), pu, amps, float(sum(amps))))
    return rows


def check_totals(d: dict[str, Any], tol: float = 1e-9) -> None:
    """Raise if a serialized result's totals disagree with its rows."""
    t = d["totals"]
    cost = sum(r["cost"] for r in d["dispatch"])
    kw = sum(sum(r["p_kw"]) for r in d["dispatch"])
    amps = sum(r["total_a"] for r in d["faults"])
    for name, a, b in (("cost", cost, t["cost"]), ("dispatch_kw", kw, t["dispatch_kw"]),
                       ("fault_current_a", amps, t["fault_current_a"])):
        if not math.isclose(a, b, rel_tol=tol, abs_tol=tol):
            raise ValueError(f"total {name} {b} does not match rows ({a})")
    for r in d["faults"]:
        if not math.isclose(sum(r["current_a"]), r["total_a"], rel_tol=tol, abs_tol=tol):
            raise ValueError(f"fault {r['fault_id']} total does not match phases")
