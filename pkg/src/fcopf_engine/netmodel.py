"""Network data model for unbalanced three-phase feeders.

Networks are read from a JSON document (see ``NETWORK_SCHEMA``), validated,
and converted to per-unit.  Everything downstream works on the per-unit
form.  Phase-domain quantities are stored in the phase order of the owning
element, always a sorted subset of ``("A", "B", "C")``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import jsonschema
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

PHASES = ("A", "B", "C")
SQRT3 = math.sqrt(3.0)

#: Resistance substituted for bolted (zero-resistance) fault paths, in ohms.
FAULT_RESISTANCE_FLOOR_OHM = 1e-4

REFERENCE = "Reference"
DISPATCHABLE = "Dispatchable"
CONSTANT_POWER = "ConstantPower"
CONSTANT_IMPEDANCE = "ConstantImpedance"
FAULT_TYPES = {"LG": 1, "LL": 2, "LLG": 2, "ThreePhase": 3, "ThreePhaseGround": 3}


class NetworkError(ValueError):
    """Invalid network document or inconsistent network data.

    ``path`` locates the offending field, e.g. ``"lines[3].to"``.
    """

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


_num = {"type": "number"}
_num_list = {"type": "array", "items": _num, "minItems": 1, "maxItems": 3}
_matrix = {"type": "array", "items": _num_list, "minItems": 1, "maxItems": 3}
_phases = {
    "type": "array",
    "items": {"enum": list(PHASES)},
    "minItems": 1,
    "maxItems": 3,
    "uniqueItems": True,
}
_opt_num = {"type": ["number", "null"]}

NETWORK_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["base", "buses", "lines", "generators", "loads"],
    "properties": {
        "base": {
            "type": "object",
            "required": ["frequency_hz", "power_base_kva", "voltage_bases"],
            "properties": {
                "frequency_hz": {"type": "number", "exclusiveMinimum": 0},
                "power_base_kva": {"type": "number", "exclusiveMinimum": 0},
                "voltage_bases": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["zone", "kv_ll"],
                        "properties": {
                            "zone": {"type": "string"},
                            "kv_ll": {"type": "number", "exclusiveMinimum": 0},
                        },
                    },
                },
            },
        },
        "buses": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "phases", "vmin_pu", "vmax_pu"],
                "properties": {
                    "id": {"type": "string"},
                    "phases": _phases,
                    "vmin_pu": _num,
                    "vmax_pu": _num,
                    "grounding": {
                        "oneOf": [
                            {"type": "null"},
                            {
                                "type": "object",
                                "required": ["r_ohm", "x_ohm"],
                                "properties": {"r_ohm": _num, "x_ohm": _num},
                            },
                        ]
                    },
                },
            },
        },
        "lines": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "from", "to", "phases", "r_ohm", "x_ohm", "ampacity_a"],
                "properties": {
                    "id": {"type": "string"},
                    "from": {"type": "string"},
                    "to": {"type": "string"},
                    "phases": _phases,
                    "r_ohm": _matrix,
                    "x_ohm": _matrix,
                    "ampacity_a": _num,
                },
            },
        },
        "transformers": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "from", "to", "vector_group", "tap", "r_pu", "x_pu", "rating_kva"],
                "properties": {
                    "id": {"type": "string"},
                    "from": {"type": "string"},
                    "to": {"type": "string"},
                    "vector_group": {"type": "string"},
                    "tap": _num,
                    "r_pu": _num,
                    "x_pu": _num,
                    "rating_kva": _num,
                },
            },
        },
        "generators": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "bus", "kind"],
                "properties": {
                    "id": {"type": "string"},
                    "bus": {"type": "string"},
                    "kind": {"enum": [REFERENCE, DISPATCHABLE]},
                    "cost_per_kwh": _num,
                    "pmax_kw": {"oneOf": [_num, _num_list]},
                    "pf_min": _num,
                    "kf": _num,
                    "z_r_pu": _num,
                    "z_i_pu": _num,
                    "vset_pu": _opt_num,
                    "theta_deg": _opt_num,
                    "sc3_mva": _opt_num,
                    "sc1_mva": _opt_num,
                },
            },
        },
        "loads": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "bus", "p_kw", "q_kvar"],
                "properties": {
                    "id": {"type": "string"},
                    "bus": {"type": "string"},
                    "p_kw": _num_list,
                    "q_kvar": _num_list,
                    "model": {"enum": [CONSTANT_POWER, CONSTANT_IMPEDANCE]},
                },
            },
        },
        "fault_scenarios": {
            "type": "array",
            "items": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "object",
                    "required": ["id", "bus", "type", "phases"],
                    "properties": {
                        "id": {"type": "string"},
                        "bus": {"type": "string"},
                        "type": {"enum": list(FAULT_TYPES)},
                        "phases": _phases,
                        "r_phase_ohm": {"oneOf": [_num, _num_list]},
                        "r_ground_ohm": _num,
                    },
                },
            },
        },
    },
}


@dataclass(frozen=True, eq=False)
class Bus:
    id: str
    phases: tuple[str, ...]
    vmin_pu: float
    vmax_pu: float
    grounding: complex | None = None  # ohm, or pu on the bus zone base


@dataclass(frozen=True, eq=False)
class Line:
    id: str
    from_bus: str
    to_bus: str
    phases: tuple[str, ...]
    r: np.ndarray
    x: np.ndarray
    ampacity: float  # A, or pu current

    @property
    def z(self) -> np.ndarray:
        return self.r + 1j * self.x


@dataclass(frozen=True, eq=False)
class Transformer:
    """Two-winding three-phase transformer; impedance on its own rating."""

    id: str
    from_bus: str
    to_bus: str
    vector_group: str
    tap: float
    r_pu: float
    x_pu: float
    rating_kva: float

    def z_system(self, power_base_kva: float) -> complex:
        return complex(self.r_pu, self.x_pu) * power_base_kva / self.rating_kva

    def current_limit_pu(self, power_base_kva: float) -> float:
        return self.rating_kva / power_base_kva


@dataclass(frozen=True, eq=False)
class Generator:
    id: str
    bus: str
    kind: str
    phases: tuple[str, ...]
    cost_per_kwh: float = 0.0
    pmax: tuple[float, ...] = ()  # per phase; kW, or pu of the per-phase power base
    pf_min: float = 1.0
    kf: float = 1.0
    z: complex = 0j
    vset_pu: float = 1.0
    theta_deg: float = 0.0
    sc3_mva: float | None = None
    sc1_mva: float | None = None

    @property
    def is_reference(self) -> bool:
        return self.kind == REFERENCE

    @property
    def q_ratio(self) -> float:
        """tan(acos(pf)), the reactive/active ratio at the power-factor limit."""
        return math.tan(math.acos(self.pf_min))


@dataclass(frozen=True, eq=False)
class Load:
    id: str
    bus: str
    phases: tuple[str, ...]
    p: tuple[float, ...]
    q: tuple[float, ...]
    model: str = CONSTANT_POWER

    @property
    def s(self) -> np.ndarray:
        return np.asarray(self.p) + 1j * np.asarray(self.q)


@dataclass(frozen=True, eq=False)
class FaultSpec:
    id: str
    bus: str
    type: str
    phases: tuple[str, ...]
    r_phase: tuple[float, ...]  # one per involved phase (ohm or pu)
    r_ground: float = 0.0


@dataclass(frozen=True, eq=False)
class Network:
    frequency_hz: float
    power_base_kva: float
    voltage_bases: dict[str, float]
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    transformers: tuple[Transformer, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    fault_scenarios: tuple[tuple[FaultSpec, ...], ...]
    bus_kv: dict[str, float]
    per_unit: bool = False
    name: str = ""
    _bus_map: dict[str, Bus] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_bus_map", {b.id: b for b in self.buses})

    def bus(self, bus_id: str) -> Bus:
        return self._bus_map[bus_id]

    def has_bus(self, bus_id: str) -> bool:
        return bus_id in self._bus_map

    @property
    def reference_generators(self) -> list[Generator]:
        return [g for g in self.generators if g.is_reference]

    @property
    def dispatchable_generators(self) -> list[Generator]:
        return [g for g in self.generators if not g.is_reference]

    def generator(self, gen_id: str) -> Generator:
        for g in self.generators:
            if g.id == gen_id:
                return g
        raise KeyError(gen_id)

    # bases ---------------------------------------------------------------
    def z_base(self, bus_id: str) -> float:
        """Impedance base in ohms."""
        return self.bus_kv[bus_id] ** 2 * 1000.0 / self.power_base_kva

    def i_base(self, bus_id: str) -> float:
        """Current base in amperes."""
        return self.power_base_kva / (SQRT3 * self.bus_kv[bus_id])

    @property
    def phase_power_base_kw(self) -> float:
        return self.power_base_kva / 3.0

    def replace(self, **changes) -> "Network":
        changes.setdefault("_bus_map", None)
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# parsing


def _path(*parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _sorted_phases(phases: Iterable[str]) -> tuple[str, ...]:
    return tuple(p for p in PHASES if p in set(phases))


def _per_phase(values, n: int, where: str) -> tuple[float, ...]:
    if isinstance(values, (int, float)):
        return (float(values),) * n
    if len(values) != n:
        raise NetworkError(f"expected {n} per-phase values, got {len(values)}", where)
    return tuple(float(v) for v in values)


def parse_network(
    document: str | bytes | Mapping[str, Any] | Path,
    fault_floor_ohm: float = FAULT_RESISTANCE_FLOOR_OHM,
) -> Network:
    """Parse and validate a network document, returning a per-unit Network.

    ``document`` may be a JSON string, an already-decoded mapping, or a path.
    """
    if isinstance(document, Path):
        document = json.loads(document.read_text())
    elif isinstance(document, (str, bytes)):
        document = json.loads(document)

    validator = jsonschema.Draft202012Validator(NETWORK_SCHEMA)
    errors = sorted(validator.iter_errors(document), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise NetworkError(err.message, _path(*err.absolute_path))

    doc = document
    base = doc["base"]
    buses: list[Bus] = []
    seen: set[str] = set()
    for k, b in enumerate(doc["buses"]):
        where = _path("buses", k)
        if b["id"] in seen:
            raise NetworkError(f"duplicate bus id {b['id']!r}", _path("buses", k, "id"))
        seen.add(b["id"])
        if not 0 < b["vmin_pu"] < b["vmax_pu"]:
            raise NetworkError("require 0 < vmin_pu < vmax_pu", where)
        grounding = None
        if b.get("grounding") is not None:
            gr = b["grounding"]
            if gr["r_ohm"] < 0 or gr["x_ohm"] < 0:
                raise NetworkError("grounding impedance must be nonnegative", _path("buses", k, "grounding"))
            grounding = complex(gr["r_ohm"], gr["x_ohm"])
        buses.append(Bus(b["id"], _sorted_phases(b["phases"]), float(b["vmin_pu"]), float(b["vmax_pu"]), grounding))
    bus_map = {b.id: b for b in buses}

    def ref_bus(value: str, *where) -> Bus:
        if value not in bus_map:
            raise NetworkError(f"unknown bus {value!r}", _path(*where))
        return bus_map[value]

    def check_unique(items, key):
        ids = set()
        for k, item in enumerate(items):
            if item["id"] in ids:
                raise NetworkError(f"duplicate id {item['id']!r}", _path(key, k, "id"))
            ids.add(item["id"])

    lines = []
    check_unique(doc["lines"], "lines")
    for k, ln in enumerate(doc["lines"]):
        fb = ref_bus(ln["from"], "lines", k, "from")
        tb = ref_bus(ln["to"], "lines", k, "to")
        phases = _sorted_phases(ln["phases"])
        order = [ln["phases"].index(p) for p in phases]
        for bus in (fb, tb):
            if not set(phases) <= set(bus.phases):
                raise NetworkError(f"line phases {phases} not present at bus {bus.id!r}", _path("lines", k, "phases"))
        n = len(phases)
        r = np.asarray(ln["r_ohm"], dtype=float)
        x = np.asarray(ln["x_ohm"], dtype=float)
        if r.shape != (n, n) or x.shape != (n, n):
            raise NetworkError(f"impedance must be {n}x{n}", _path("lines", k, "r_ohm"))
        r, x = r[np.ix_(order, order)], x[np.ix_(order, order)]
        if not (np.allclose(r, r.T) and np.allclose(x, x.T)):
            raise NetworkError("impedance matrix must be symmetric", _path("lines", k, "r_ohm"))
        if np.any(np.diag(r) <= 0):
            raise NetworkError("diagonal resistance must be positive", _path("lines", k, "r_ohm"))
        if ln["ampacity_a"] <= 0:
            raise NetworkError("ampacity must be positive", _path("lines", k, "ampacity_a"))
        lines.append(Line(ln["id"], fb.id, tb.id, phases, r, x, float(ln["ampacity_a"])))

    transformers = []
    check_unique(doc.get("transformers", []), "transformers")
    for k, t in enumerate(doc.get("transformers", [])):
        fb = ref_bus(t["from"], "transformers", k, "from")
        tb = ref_bus(t["to"], "transformers", k, "to")
        from .phasor import winding_matrix

        try:
            winding_matrix(t["vector_group"], 1.0)
        except ValueError as exc:
            raise NetworkError(str(exc), _path("transformers", k, "vector_group")) from None
        if t["tap"] <= 0:
            raise NetworkError("tap must be positive", _path("transformers", k, "tap"))
        if t["rating_kva"] <= 0:
            raise NetworkError("rating must be positive", _path("transformers", k, "rating_kva"))
        if t["r_pu"] < 0 or math.hypot(t["r_pu"], t["x_pu"]) == 0:
            raise NetworkError("series impedance must be nonzero with r >= 0", _path("transformers", k, "r_pu"))
        for bus in (fb, tb):
            if bus.phases != PHASES:
                raise NetworkError(f"transformer bus {bus.id!r} must carry all three phases", _path("transformers", k))
        transformers.append(
            Transformer(t["id"], fb.id, tb.id, t["vector_group"], float(t["tap"]), float(t["r_pu"]),
                        float(t["x_pu"]), float(t["rating_kva"]))
        )

    generators = []
    check_unique(doc["generators"], "generators")
    for k, g in enumerate(doc["generators"]):
        bus = ref_bus(g["bus"], "generators", k, "bus")
        where = lambda key: _path("generators", k, key)  # noqa: E731
        n = len(bus.phases)
        cost = float(g.get("cost_per_kwh", 0.0))
        pf = float(g.get("pf_min", 1.0))
        kf = float(g.get("kf", 1.0))
        z = complex(g.get("z_r_pu", 0.0), g.get("z_i_pu", 0.0))
        if cost < 0:
            raise NetworkError("cost must be nonnegative", where("cost_per_kwh"))
        if not 0 < pf <= 1:
            raise NetworkError("power factor must lie in (0, 1]", where("pf_min"))
        if kf < 1:
            raise NetworkError("fault current multiplier must be >= 1", where("kf"))
        if z.real < 0:
            raise NetworkError("internal resistance must be nonnegative", where("z_r_pu"))
        pmax_raw = g.get("pmax_kw", 0.0)
        if isinstance(pmax_raw, (int, float)):
            pmax = (float(pmax_raw) / n,) * n
        else:
            pmax = _per_phase(pmax_raw, n, where("pmax_kw"))
        if any(p < 0 for p in pmax):
            raise NetworkError("pmax must be nonnegative", where("pmax_kw"))
        sc3, sc1 = g.get("sc3_mva"), g.get("sc1_mva")
        if g["kind"] == REFERENCE:
            if g.get("vset_pu") is None:
                raise NetworkError("reference generator requires vset_pu", where("vset_pu"))
            if sc3 is None and abs(z) == 0:
                raise NetworkError("reference generator needs sc3_mva or an internal impedance", where("sc3_mva"))
            if (sc3 is not None and sc3 <= 0) or (sc1 is not None and sc1 <= 0):
                raise NetworkError("short-circuit powers must be positive", where("sc3_mva"))
        elif abs(z) == 0:
            raise NetworkError("internal impedance magnitude must be positive", where("z_i_pu"))
        generators.append(
            Generator(
                g["id"], bus.id, g["kind"], bus.phases, cost, pmax, pf, kf, z,
                float(g.get("vset_pu") if g.get("vset_pu") is not None else 1.0),
                float(g.get("theta_deg") if g.get("theta_deg") is not None else 0.0),
                None if sc3 is None else float(sc3),
                None if sc1 is None else float(sc1),
            )
        )
    if not any(g.is_reference for g in generators):
        raise NetworkError("network needs at least one Reference generator", "generators")

    loads = []
    check_unique(doc["loads"], "loads")
    for k, ld in enumerate(doc["loads"]):
        bus = ref_bus(ld["bus"], "loads", k, "bus")
        n = len(bus.phases)
        p = _per_phase(ld["p_kw"], n, _path("loads", k, "p_kw"))
        q = _per_phase(ld["q_kvar"], n, _path("loads", k, "q_kvar"))
        if not any(math.hypot(a, b) > 0 for a, b in zip(p, q)):
            raise NetworkError("load apparent power must be positive on some phase", _path("loads", k))
        loads.append(Load(ld["id"], bus.id, bus.phases, p, q, ld.get("model", CONSTANT_POWER)))

    scenarios = []
    for s, scen in enumerate(doc.get("fault_scenarios", [])):
        faults = []
        for k, f in enumerate(scen):
            where = _path("fault_scenarios", s, k)
            bus = ref_bus(f["bus"], "fault_scenarios", s, k, "bus")
            phases = _sorted_phases(f["phases"])
            if len(phases) != FAULT_TYPES[f["type"]]:
                raise NetworkError(f"{f['type']} fault needs {FAULT_TYPES[f['type']]} phases", where + ".phases")
            if not set(phases) <= set(bus.phases):
                raise NetworkError(f"fault phases {phases} not present at bus {bus.id!r}", where + ".phases")
            raw = f.get("r_phase_ohm", 0.0)
            if f["type"] in ("LG", "LL"):
                # single series path: list entries are series pieces
                r_phase = (float(raw) if isinstance(raw, (int, float)) else float(sum(raw)),)
            else:
                r_phase = _per_phase(raw, len(phases), where + ".r_phase_ohm")
            r_ground = float(f.get("r_ground_ohm", 0.0))
            if min(r_phase) < 0 or r_ground < 0:
                raise NetworkError("fault resistances must be nonnegative", where)
            if fault_floor_ohm > 0:
                r_phase = tuple(max(r, fault_floor_ohm) for r in r_phase)
                if f["type"] in ("LLG", "ThreePhaseGround"):
                    r_ground = max(r_ground, fault_floor_ohm)
            faults.append(FaultSpec(f["id"], bus.id, f["type"], phases, r_phase, r_ground))
        scenarios.append(tuple(faults))

    _check_connected(buses, lines, transformers)
    bus_kv = _zone_bases(buses, lines, transformers, {v["zone"]: float(v["kv_ll"]) for v in base["voltage_bases"]})

    net = Network(
        frequency_hz=float(base["frequency_hz"]),
        power_base_kva=float(base["power_base_kva"]),
        voltage_bases={v["zone"]: float(v["kv_ll"]) for v in base["voltage_bases"]},
        buses=tuple(buses),
        lines=tuple(lines),
        transformers=tuple(transformers),
        generators=tuple(generators),
        loads=tuple(loads),
        fault_scenarios=tuple(scenarios),
        bus_kv=bus_kv,
        name=str(doc.get("name", "")),
    )
    return to_per_unit(net)


def _check_connected(buses, lines, transformers):
    index = {b.id: k for k, b in enumerate(buses)}
    edges = [(index[e.from_bus], index[e.to_bus]) for e in (*lines, *transformers)]
    n = len(buses)
    if n == 1:
        return
    if not edges:
        raise NetworkError("network is disconnected", "buses")
    i, j = zip(*edges)
    graph = coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    count, labels = connected_components(graph, directed=False)
    if count > 1:
        main = labels[0]
        stray = sorted(b.id for b, lab in zip(buses, labels) if lab != main)
        raise NetworkError(f"network is disconnected; unreachable buses {stray}", "buses")


def _zone_bases(buses, lines, transformers, explicit: dict[str, float]) -> dict[str, float]:
    """Assign a line-to-line kV base to every bus.

    Zones are the islands left after removing transformers.  A ``zone`` key
    in ``voltage_bases`` names any bus of that zone; a single entry naming no
    bus applies to a single-zone network.  Zones without an explicit base take
    the neighbouring base divided by the transformer tap.
    """
    index = {b.id: k for k, b in enumerate(buses)}
    n = len(buses)
    if lines:
        i = [index[ln.from_bus] for ln in lines]
        j = [index[ln.to_bus] for ln in lines]
        graph = coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
        _, labels = connected_components(graph, directed=False)
    else:
        labels = np.arange(n)
    zone_kv: dict[int, float] = {}
    for name, kv in explicit.items():
        if name in index:
            zone_kv[labels[index[name]]] = kv
        elif len(explicit) == 1 and len(set(labels)) == 1:
            zone_kv[labels[0]] = kv
        else:
            raise NetworkError(f"voltage base zone {name!r} names no bus", "base.voltage_bases")
    changed = True
    while changed:
        changed = False
        for t in transformers:
            zf, zt = labels[index[t.from_bus]], labels[index[t.to_bus]]
            if zf in zone_kv and zt not in zone_kv:
                zone_kv[zt] = zone_kv[zf] / t.tap
                changed = True
            elif zt in zone_kv and zf not in zone_kv:
                zone_kv[zf] = zone_kv[zt] * t.tap
                changed = True
    missing = sorted(b.id for b, lab in zip(buses, labels) if lab not in zone_kv)
    if missing:
        raise NetworkError(f"missing voltage base for zone containing {missing}", "base.voltage_bases")
    return {b.id: zone_kv[lab] for b, lab in zip(buses, labels)}


# ---------------------------------------------------------------------------
# per-unit conversion


def _scale(net: Network, to_pu: bool) -> Network:
    def zf(bus_id):  # multiply ohms by this to get pu
        zb = net.z_base(bus_id)
        return 1.0 / zb if to_pu else zb

    def If(bus_id):
        ib = net.i_base(bus_id)
        return 1.0 / ib if to_pu else ib

    pf = 1.0 / net.phase_power_base_kw if to_pu else net.phase_power_base_kw

    buses = tuple(
        replace(b, grounding=None if b.grounding is None else b.grounding * zf(b.id)) for b in net.buses
    )
    lines = tuple(
        replace(ln, r=ln.r * zf(ln.from_bus), x=ln.x * zf(ln.from_bus), ampacity=ln.ampacity * If(ln.from_bus))
        for ln in net.lines
    )
    gens = tuple(replace(g, pmax=tuple(p * pf for p in g.pmax)) for g in net.generators)
    loads = tuple(replace(ld, p=tuple(p * pf for p in ld.p), q=tuple(q * pf for q in ld.q)) for ld in net.loads)
    scenarios = tuple(
        tuple(
            replace(f, r_phase=tuple(r * zf(f.bus) for r in f.r_phase), r_ground=f.r_ground * zf(f.bus))
            for f in scen
        )
        for scen in net.fault_scenarios
    )
    return net.replace(buses=buses, lines=lines, generators=gens, loads=loads, fault_scenarios=scenarios,
                       per_unit=to_pu)


def to_per_unit(network: Network) -> Network:
    """Express impedances, currents and powers on the network's bases.

    Per-phase powers use a third of the three-phase power base, so
    ``P_pu = V_pu * I_pu`` holds phase by phase.  Transformer impedances stay
    on their own rating and are rebased where used.
    """
    if network.per_unit:
        return network
    return _scale(network, True)


def from_per_unit(network: Network) -> Network:
    if not network.per_unit:
        return network
    return _scale(network, False)


# ---------------------------------------------------------------------------
# serialization


def network_to_document(network: Network) -> dict[str, Any]:
    """Inverse of :func:`parse_network` (physical units)."""
    net = from_per_unit(network)

    def fault_doc(f: FaultSpec):
        return {"id": f.id, "bus": f.bus, "type": f.type, "phases": list(f.phases),
                "r_phase_ohm": list(f.r_phase), "r_ground_ohm": f.r_ground}

    return {
        "name": net.name,
        "base": {
            "frequency_hz": net.frequency_hz,
            "power_base_kva": net.power_base_kva,
            "voltage_bases": [{"zone": z, "kv_ll": kv} for z, kv in net.voltage_bases.items()],
        },
        "buses": [
            {"id": b.id, "phases": list(b.phases), "vmin_pu": b.vmin_pu, "vmax_pu": b.vmax_pu,
             "grounding": None if b.grounding is None else {"r_ohm": b.grounding.real, "x_ohm": b.grounding.imag}}
            for b in net.buses
        ],
        "lines": [
            {"id": ln.id, "from": ln.from_bus, "to": ln.to_bus, "phases": list(ln.phases),
             "r_ohm": ln.r.tolist(), "x_ohm": ln.x.tolist(), "ampacity_a": ln.ampacity}
            for ln in net.lines
        ],
        "transformers": [
            {"id": t.id, "from": t.from_bus, "to": t.to_bus, "vector_group": t.vector_group, "tap": t.tap,
             "r_pu": t.r_pu, "x_pu": t.x_pu, "rating_kva": t.rating_kva}
            for t in net.transformers
        ],
        "generators": [
            {"id": g.id, "bus": g.bus, "kind": g.kind, "cost_per_kwh": g.cost_per_kwh, "pmax_kw": list(g.pmax),
             "pf_min": g.pf_min, "kf": g.kf, "z_r_pu": g.z.real, "z_i_pu": g.z.imag, "vset_pu": g.vset_pu,
             "theta_deg": g.theta_deg, "sc3_mva": g.sc3_mva, "sc1_mva": g.sc1_mva}
            for g in net.generators
        ],
        "loads": [
            {"id": ld.id, "bus": ld.bus, "p_kw": list(ld.p), "q_kvar": list(ld.q), "model": ld.model}
            for ld in net.loads
        ],
        "fault_scenarios": [[fault_doc(f) for f in scen] for scen in net.fault_scenarios],
    }


def load_network(path: str | Path) -> Network:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read network file {str(path)!r}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"invalid JSON in {str(path)!r}: {exc.msg} (line {exc.lineno})") from None
    return parse_network(doc)


def build_cigre_lv_fixture() -> Network:
    """The bundled CIGRE-LV-style microgrid benchmark (per-unit)."""
    data = Path(__file__).with_name("data") / "cigre_lv.json"
    return parse_network(json.loads(data.read_text()))


def phase_positions(sub: Sequence[str], full: Sequence[str]) -> list[int]:
    """Positions of ``sub`` phases inside ``full``."""
    return [list(full).index(p) for p in sub]
