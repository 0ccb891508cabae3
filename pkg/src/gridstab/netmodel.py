"""Per-unit network data model and network-file loader.

Lines are pi-sections; each line's total shunt conductance and capacitance is
split evenly between its two terminal buses and added to the bus shunt.
Loads are constant-impedance and are converted to admittances once, at the
nominal voltage.
"""
from collections import deque
from dataclasses import dataclass, field, replace
from importlib import resources
import json
from pathlib import Path

import jsonschema
import numpy as np

from .components import GFL, GFM, SG, ConverterParams, ConverterSetpoint, SGParams
from .errors import ConfigError, ValidationError

BUS_KINDS = ("SG", "GFM", "GFL", "Load")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PerUnitBase:
    s_base: float
    v_base: float
    omega_b: float

    def __post_init__(self):
        for name in ("s_base", "v_base", "omega_b"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"base.{name} must be > 0")


@dataclass(frozen=True)
class Bus:
    id: str
    kind: str
    shunt_g: float = 0.0
    shunt_c: float = 0.0


@dataclass(frozen=True)
class Line:
    from_bus: str
    to_bus: str
    r: float
    l: float
    g_sh: float = 0.0
    c_sh: float = 0.0
    id: str = ""

    @property
    def impedance(self):
        """Series impedance at nominal frequency."""
        return complex(self.r, self.l)


@dataclass(frozen=True)
class Load:
    bus: str
    p: float
    q: float


@dataclass(frozen=True)
class UnitSpec:
    id: str
    bus: str
    kind: str
    rating_mva: float
    params: object
    setpoint: ConverterSetpoint = field(default_factory=ConverterSetpoint)


@dataclass(frozen=True)
class Network:
    base: PerUnitBase
    buses: tuple
    lines: tuple
    loads: tuple
    units: tuple
    reference_unit: str
    name: str = ""

    def __post_init__(self):
        _validate(self)

    @property
    def bus_ids(self):
        return [b.id for b in self.buses]

    def bus_index(self, bus_id):
        try:
            return self.bus_ids.index(str(bus_id))
        except ValueError:
            raise ValidationError(f"unknown bus id {bus_id!r}") from None

    def unit(self, unit_id):
        for u in self.units:
            if u.id == unit_id:
                return u
        raise ValidationError(f"unknown unit id {unit_id!r}")

    def unit_at(self, bus_id):
        for u in self.units:
            if u.bus == bus_id:
                return u
        return None

    def load_at(self, bus_id):
        for ld in self.loads:
            if ld.bus == bus_id:
                return ld
        return None

    def unit_scale(self, unit):
        """Factor converting unit-base current/power to system base."""
        return unit.rating_mva / self.base.s_base

    def nodal_shunts(self):
        """Aggregated nodal shunt conductance g_k and capacitance c_k (without loads)."""
        n = len(self.buses)
        g = np.array([b.shunt_g for b in self.buses], dtype=float)
        c = np.array([b.shunt_c for b in self.buses], dtype=float)
        for ln in self.lines:
            for end in (ln.from_bus, ln.to_bus):
                k = self.bus_index(end)
                g[k] += 0.5 * ln.g_sh
                c[k] += 0.5 * ln.c_sh
        assert g.shape == (n,)
        return g, c

    def load_admittances(self, v_nominal=1.0):
        """Per-bus constant-impedance load conductance and susceptance."""
        g = np.zeros(len(self.buses))
        b = np.zeros(len(self.buses))
        for ld in self.loads:
            k = self.bus_index(ld.bus)
            g[k], b[k] = load_to_impedance(ld, v_nominal)
        return g, b

    def incidence(self):
        """Bus-by-line matrix: +1 where a line ends (current flows in), -1 where it starts."""
        inc = np.zeros((len(self.buses), len(self.lines)))
        for j, ln in enumerate(self.lines):
            inc[self.bus_index(ln.from_bus), j] = -1.0
            inc[self.bus_index(ln.to_bus), j] = 1.0
        return inc

    def admittance_matrix(self, v_nominal=1.0, include_loads=True):
        """Bus admittance matrix at nominal frequency with shunts (and loads)."""
        n = len(self.buses)
        y = np.zeros((n, n), dtype=complex)
        for ln in self.lines:
            k, m = self.bus_index(ln.from_bus), self.bus_index(ln.to_bus)
            ys = 1.0 / ln.impedance
            y[k, k] += ys
            y[m, m] += ys
            y[k, m] -= ys
            y[m, k] -= ys
        g, c = self.nodal_shunts()
        y[np.diag_indices(n)] += g + 1j * c
        if include_loads:
            gl, bl = self.load_admittances(v_nominal)
            y[np.diag_indices(n)] += gl + 1j * bl
        return y

    def with_unit_params(self, unit_id, **changes):
        unit = self.unit(unit_id)
        params = replace(unit.params, **changes)
        if unit.kind == SG:
            params.validate()
        else:
            params.validate(unit.kind)
        return self._replace_unit(replace(unit, params=params))

    def with_unit_setpoint(self, unit_id, **changes):
        unit = self.unit(unit_id)
        return self._replace_unit(replace(unit, setpoint=replace(unit.setpoint, **changes)))

    def with_reference_unit(self, unit_id):
        return replace(self, reference_unit=unit_id)

    def _replace_unit(self, new_unit):
        units = tuple(new_unit if u.id == new_unit.id else u for u in self.units)
        return replace(self, units=units)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "base": {"s_base": self.base.s_base, "v_base": self.base.v_base,
                     "omega_b": self.base.omega_b},
            "buses": [{"id": b.id, "kind": b.kind, "shunt_g": b.shunt_g, "shunt_c": b.shunt_c}
                      for b in self.buses],
            "lines": [{"id": ln.id, "from": ln.from_bus, "to": ln.to_bus, "r": ln.r, "l": ln.l,
                       "g_sh": ln.g_sh, "c_sh": ln.c_sh} for ln in self.lines],
            "loads": [{"bus": ld.bus, "p": ld.p, "q": ld.q} for ld in self.loads],
            "units": [
                {
                    "id": u.id, "bus": u.bus, "kind": u.kind, "rating_mva": u.rating_mva,
                    "params": u.params.to_dict(),
                    "setpoint": {"p": u.setpoint.p, "q": u.setpoint.q, "v": u.setpoint.v,
                                 "omega": u.setpoint.omega},
                }
                for u in self.units
            ],
            "reference_unit": self.reference_unit,
        }


def kcl_shunt_current(network, bus, nodal_injection, incident_line_currents):
    """Current into the shunt capacitance of ``bus``.

    ``incident_line_currents`` are signed 2-vectors, positive when flowing into
    the node. The ``g_k v`` term is not subtracted here.
    """
    network.bus_index(bus)
    total = np.array(nodal_injection, dtype=float).copy()
    for current in incident_line_currents:
        total = total + np.asarray(current, dtype=float)
    return total


def load_to_impedance(load, v_nominal=1.0):
    """Admittance (g, b) that draws exactly (p, q) at ``v_nominal``: y = (p - jq) / v^2."""
    v2 = v_nominal * v_nominal
    return load.p / v2, -load.q / v2


def network_schema():
    text = resources.files("gridstab").joinpath("schema/network.schema.json").read_text()
    return json.loads(text)


def network_from_dict(data):
    try:
        jsonschema.validate(data, network_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"network file does not match schema at {where}: {exc.message}") from None

    base = PerUnitBase(**data["base"])
    buses = tuple(
        Bus(id=str(b["id"]), kind=b["kind"], shunt_g=float(b.get("shunt_g", 0.0)),
            shunt_c=float(b.get("shunt_c", 0.0)))
        for b in data["buses"]
    )
    lines = []
    seen = {}
    for ln in data["lines"]:
        fr, to = str(ln["from"]), str(ln["to"])
        lid = ln.get("id") or f"{fr}-{to}"
        if lid in seen:
            seen[lid] += 1
            lid = f"{lid}#{seen[lid]}"
        else:
            seen[lid] = 0
        lines.append(Line(from_bus=fr, to_bus=to, r=float(ln["r"]), l=float(ln["l"]),
                          g_sh=float(ln.get("g_sh", 0.0)), c_sh=float(ln.get("c_sh", 0.0)), id=lid))
    loads = tuple(Load(bus=str(ld["bus"]), p=float(ld["p"]), q=float(ld["q"]))
                  for ld in data.get("loads", []))
    units = []
    for u in data["units"]:
        kind = u["kind"]
        raw = {k: v for k, v in u["params"].items() if v is not None}
        if kind == SG:
            params = SGParams.from_dict(raw, omega_b=base.omega_b)
        else:
            params = ConverterParams.from_dict(raw, kind, omega_b=base.omega_b)
        setpoint = ConverterSetpoint(**u.get("setpoint", {}))
        units.append(UnitSpec(id=u["id"], bus=str(u["bus"]), kind=kind,
                              rating_mva=float(u["rating_mva"]), params=params, setpoint=setpoint))
    return Network(base=base, buses=buses, lines=tuple(lines), loads=loads, units=tuple(units),
                   reference_unit=data["reference_unit"], name=data.get("name", ""))


def load_network_config(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"network file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return network_from_dict(data)


def save_network(network, path):
    Path(path).write_text(json.dumps(network.to_dict(), indent=2))


def _validate(net):
    ids = [b.id for b in net.buses]
    dup = {i for i in ids if ids.count(i) > 1}
    if dup:
        raise ValidationError(f"duplicate bus id {sorted(dup)[0]!r}")
    known = set(ids)
    for b in net.buses:
        if b.kind not in BUS_KINDS:
            raise ValidationError(f"bus {b.id!r}: unknown kind {b.kind!r}")
        if b.shunt_g < 0 or b.shunt_c < 0:
            raise ValidationError(f"bus {b.id!r}: shunt values must be >= 0")
    for ln in net.lines:
        for end in (ln.from_bus, ln.to_bus):
            if end not in known:
                raise ValidationError(f"line {ln.id!r} references unknown bus {end!r}")
        if ln.from_bus == ln.to_bus:
            raise ValidationError(f"line {ln.id!r} connects bus {ln.from_bus!r} to itself")
        if ln.r < 0 or not ln.l > 0:
            raise ValidationError(f"line {ln.id!r}: need r >= 0 and l > 0")
        if ln.g_sh < 0 or ln.c_sh < 0:
            raise ValidationError(f"line {ln.id!r}: shunt values must be >= 0")
    load_buses = [ld.bus for ld in net.loads]
    for ld in net.loads:
        if ld.bus not in known:
            raise ValidationError(f"load references unknown bus {ld.bus!r}")
        if load_buses.count(ld.bus) > 1:
            raise ValidationError(f"more than one load at bus {ld.bus!r}")
    unit_ids = [u.id for u in net.units]
    unit_buses = [u.bus for u in net.units]
    for u in net.units:
        if unit_ids.count(u.id) > 1:
            raise ValidationError(f"duplicate unit id {u.id!r}")
        if u.bus not in known:
            raise ValidationError(f"unit {u.id!r} references unknown bus {u.bus!r}")
        if unit_buses.count(u.bus) > 1:
            raise ValidationError(f"more than one unit at bus {u.bus!r}")
        if u.kind not in (GFM, GFL, SG):
            raise ValidationError(f"unit {u.id!r}: unknown kind {u.kind!r}")
        if not u.rating_mva > 0:
            raise ValidationError(f"unit {u.id!r}: rating must be > 0")
    by_bus = {u.bus: u for u in net.units}
    for b in net.buses:
        hosted = by_bus.get(b.id)
        if b.kind == "Load" and hosted is not None:
            raise ValidationError(f"bus {b.id!r} is a Load bus but hosts unit {hosted.id!r}")
        if b.kind != "Load" and (hosted is None or hosted.kind != b.kind):
            raise ValidationError(f"bus {b.id!r} of kind {b.kind} must host exactly one {b.kind} unit")
    if net.reference_unit not in unit_ids:
        raise ValidationError(f"reference unit {net.reference_unit!r} does not exist")
    if not _connected(net):
        raise ValidationError("network graph is not connected")
    _, c = net.nodal_shunts()
    for b, ck in zip(net.buses, c):
        if not ck > 0:
            raise ValidationError(f"bus {b.id!r} has zero aggregated shunt capacitance")


def _connected(net):
    adj = {b.id: set() for b in net.buses}
    for ln in net.lines:
        adj[ln.from_bus].add(ln.to_bus)
        adj[ln.to_bus].add(ln.from_bus)
    start = net.buses[0].id
    seen = {start}
    queue = deque([start])
    while queue:
        for nxt in adj[queue.popleft()]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return len(seen) == len(net.buses)
