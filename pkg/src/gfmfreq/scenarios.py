"""Scenario files, validation, dispatch initialization and substitution ladders.

A scenario is a YAML document with the sections ``system``, ``buses``,
``branches``, ``devices``, ``loads``, ``events``, ``sim`` and, optionally,
``series`` (default substitution order and labels). See ``data/README.md``
for the grammar.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .devices import F0, GfmParams, SgParams
from .engine import Event, SimConfig, System, grid_index
from .network import Branch, Bus, Network, NetworkError

log = logging.getLogger(__name__)

SCENARIO_FILE = "scenario.yaml"

SG_KEYS = {"H": "H", "D": "D", "R_D": "droop", "tau_G": "tau"}
GFM_KEYS = {"M_P": "droop", "tau_I": "tau"}
SECTIONS = ("system", "buses", "branches", "devices", "loads", "events", "sim", "series")


class ScenarioError(ValueError):
    """Schema or consistency violation; the message carries the offending path."""


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    kind: str
    bus: int
    params: Any
    dispatch: float

    @property
    def rating(self) -> float:
        return float(self.params.rating)

    @property
    def inertia(self) -> float:
        return float(self.params.H) if self.kind == "SG" else 0.0


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    base_mva: float
    network: Network
    devices: tuple
    events: tuple = ()
    sim: SimConfig = field(default_factory=SimConfig)
    f0: float = F0
    series_order: tuple = ()
    series_labels: tuple = ()

    def device(self, name: str) -> DeviceSpec:
        for d in self.devices:
            if d.name == name:
                return d
        raise KeyError(name)

    @property
    def buses(self):
        return self.network.buses

    @property
    def branches(self):
        return self.network.branches

    @property
    def loads(self) -> np.ndarray:
        return self.network.base_loads()


# -- parsing ------------------------------------------------------------------

def _req(d: dict, key: str, path: str):
    if not isinstance(d, dict):
        raise ScenarioError(f"{path}: expected a mapping")
    if key not in d:
        raise ScenarioError(f"{path}.{key}: required key missing")
    return d[key]


def _num(value, path: str, positive=False, nonneg=False) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}: expected a number, got {value!r}") from None
    if not np.isfinite(v):
        raise ScenarioError(f"{path}: must be finite")
    if positive and not v > 0:
        raise ScenarioError(f"{path}: must be positive")
    if nonneg and v < 0:
        raise ScenarioError(f"{path}: must be non-negative")
    return v


def _power(entry: dict, path: str, base: float, pu_key: str, mw_key: str) -> float:
    if pu_key in entry and mw_key in entry:
        raise ScenarioError(f"{path}: give either {pu_key} or {mw_key}, not both")
    if mw_key in entry:
        return _num(entry[mw_key], f"{path}.{mw_key}") / base
    return _num(_req(entry, pu_key, path), f"{path}.{pu_key}")


def _unknown(entry: dict, allowed: set, path: str):
    extra = set(entry) - allowed
    if extra:
        raise ScenarioError(f"{path}: unknown keys {sorted(extra)}")


def parse_scenario(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("<root>: expected a mapping")
    _unknown(doc, set(SECTIONS), "<root>")
    system = _req(doc, "system", "<root>")
    _unknown(system, {"name", "base_mva", "f0"}, "system")
    name = str(system.get("name", "scenario"))
    base = _num(_req(system, "base_mva", "system"), "system.base_mva", positive=True)
    f0 = _num(system.get("f0", F0), "system.f0", positive=True)

    sim_doc = doc.get("sim") or {}
    _unknown(sim_doc, set(SimConfig.__dataclass_fields__), "sim")
    try:
        sim = SimConfig(**{k: (int(v) if k in ("record_stride", "newton_max_iter") else float(v))
                           for k, v in sim_doc.items()})
    except ValueError as exc:
        raise ScenarioError(f"sim: {exc}") from None

    # loads first: bus p_load is derived from them
    load_p: dict[int, float] = {}
    for i, entry in enumerate(doc.get("loads") or []):
        path = f"loads[{i}]"
        _unknown(entry, {"bus", "p", "p_mw"}, path)
        b = int(_req(entry, "bus", path))
        load_p[b] = load_p.get(b, 0.0) + _power(entry, path, base, "p", "p_mw")

    dev_docs = doc.get("devices") or []
    device_buses = {}
    for i, entry in enumerate(dev_docs):
        b = int(_req(entry, "bus", f"devices[{i}]"))
        if b in device_buses:
            raise ScenarioError(f"devices[{i}].bus: bus {b} already hosts device {device_buses[b]}")
        device_buses[b] = entry.get("name", f"dev{i}")
    bus_ids = {e.get("id") for e in _req(doc, "buses", "<root>") if isinstance(e, dict)}
    for i, entry in enumerate(dev_docs):
        if int(entry["bus"]) not in bus_ids:
            raise ScenarioError(f"devices[{i}].bus: bus {entry['bus']} does not exist")

    buses = []
    for i, entry in enumerate(_req(doc, "buses", "<root>")):
        path = f"buses[{i}]"
        _unknown(entry, {"id", "kind", "v"}, path)
        bid = int(_req(entry, "id", path))
        kind = entry.get("kind", "device" if bid in device_buses else "load")
        if (kind == "device") != (bid in device_buses):
            raise ScenarioError(f"{path}: bus {bid} kind {kind!r} does not match device placement")
        p = load_p.pop(bid, 0.0)
        try:
            buses.append(Bus(bid, kind, _num(entry.get("v", 1.0), f"{path}.v", positive=True), p))
        except ValueError as exc:
            raise ScenarioError(f"{path}: {exc}") from None
    if load_p:
        raise ScenarioError(f"loads: bus {sorted(load_p)[0]} does not exist")
    bus_ids = {b.id for b in buses}
    for b, dname in device_buses.items():
        if b not in bus_ids:
            raise ScenarioError(f"devices: device {dname} placed on missing bus {b}")

    branches = []
    for i, entry in enumerate(_req(doc, "branches", "<root>")):
        path = f"branches[{i}]"
        _unknown(entry, {"from", "to", "b", "x", "base_mva", "in_service"}, path)
        a, c = int(_req(entry, "from", path)), int(_req(entry, "to", path))
        for end in (a, c):
            if end not in bus_ids:
                raise ScenarioError(f"{path}: bus {end} does not exist")
        if "b" in entry:
            b = _num(entry["b"], f"{path}.b", positive=True)
        else:
            x = _num(_req(entry, "x", path), f"{path}.x", positive=True)
            data_base = _num(entry.get("base_mva", base), f"{path}.base_mva", positive=True)
            b = data_base / (x * base)
        try:
            branches.append(Branch(a, c, b, bool(entry.get("in_service", True))))
        except ValueError as exc:
            raise ScenarioError(f"{path}: {exc}") from None
    try:
        network = Network(tuple(buses), tuple(branches))
    except NetworkError as exc:
        raise ScenarioError(f"branches: {exc}") from None

    devices = []
    names = set()
    for i, entry in enumerate(dev_docs):
        devices.append(_parse_device(entry, f"devices[{i}]", f0))
        if devices[-1].name in names:
            raise ScenarioError(f"devices[{i}].name: duplicate name {devices[-1].name!r}")
        names.add(devices[-1].name)
    if not devices:
        raise ScenarioError("devices: at least one device is required")

    events = []
    for i, entry in enumerate(doc.get("events") or []):
        path = f"events[{i}]"
        _unknown(entry, {"time", "kind", "bus", "delta_p", "delta_mw"}, path)
        kind = entry.get("kind", "load_step")
        if kind != "load_step":
            raise ScenarioError(f"{path}.kind: unsupported event kind {kind!r}")
        b = int(_req(entry, "bus", path))
        if b not in bus_ids:
            raise ScenarioError(f"{path}.bus: bus {b} does not exist")
        t = _num(_req(entry, "time", path), f"{path}.time", nonneg=True)
        if t > sim.duration:
            raise ScenarioError(f"{path}.time: {t} is beyond sim.duration {sim.duration}")
        try:
            grid_index(t, sim.dt)
        except ValueError as exc:
            raise ScenarioError(f"{path}.time: {exc}") from None
        if network.buses[network.index[b]].kind == "passthrough":
            raise ScenarioError(f"{path}.bus: cannot step load on passthrough bus {b}")
        events.append(Event(t, b, _power(entry, path, base, "delta_p", "delta_mw")))

    series = doc.get("series") or {}
    _unknown(series, {"order", "labels"}, "series")
    order = tuple(str(s) for s in series.get("order", ()))
    labels = tuple(str(s) for s in series.get("labels", ()))
    if labels and len(labels) != len(order) + 1:
        raise ScenarioError("series.labels: need exactly one label per generated scenario (len(order) + 1)")
    for nm in order:
        if nm not in names:
            raise ScenarioError(f"series.order: unknown device {nm!r}")

    scen = Scenario(name, base, network, tuple(devices), tuple(events), sim, f0, order, labels)
    _check_balance(scen)
    return scen


def _parse_device(entry: dict, path: str, f0: float) -> DeviceSpec:
    kind = str(_req(entry, "kind", path)).upper()
    common = {"name", "kind", "bus", "rating", "dispatch"}
    rating = _num(_req(entry, "rating", path), f"{path}.rating", positive=True)
    dispatch = _num(entry.get("dispatch", 0.0), f"{path}.dispatch")
    if kind == "SG":
        _unknown(entry, common | set(SG_KEYS), path)
        kw = {SG_KEYS[k]: _num(entry[k], f"{path}.{k}") for k in SG_KEYS if k in entry}
        cls = SgParams
    elif kind == "GFM":
        _unknown(entry, common | set(GFM_KEYS), path)
        kw = {GFM_KEYS[k]: _num(entry[k], f"{path}.{k}") for k in GFM_KEYS if k in entry}
        cls = GfmParams
    else:
        raise ScenarioError(f"{path}.kind: expected SG or GFM, got {kind!r}")
    try:
        params = cls(rating=rating, p_set=dispatch, f0=f0, **kw)
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return DeviceSpec(str(entry.get("name", f"{kind.lower()}{entry['bus']}")), kind, int(entry["bus"]), params, dispatch)


def _check_balance(scen: Scenario):
    gen = sum(d.dispatch * d.rating for d in scen.devices) / scen.base_mva
    load = float(scen.loads.sum())
    if abs(gen - load) > scen.sim.newton_tol:
        log.warning("scenario %s: dispatch %.6g pu vs load %.6g pu; reference device %s absorbs %.6g pu",
                    scen.name, gen, load, scen.devices[0].name, load - gen)


def load_scenario(text: str) -> Scenario:
    """Parse scenario YAML text into a validated :class:`Scenario`."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"<root>: not valid YAML ({exc})") from None
    return parse_scenario(doc)


def resolve_path(path) -> Path:
    """File path for a scenario reference.

    Accepts a file, a directory holding ``scenario.yaml``, or a bundled name
    such as ``data/ieee9`` or ``ieee9``.
    """
    p = Path(path)
    if p.is_dir():
        p = p / SCENARIO_FILE
    if p.is_file():
        return p
    parts = p.parts[1:] if p.parts and p.parts[0] == "data" else p.parts
    if parts:
        cand = data_dir().joinpath(*parts)
        if cand.is_dir():
            cand = cand / SCENARIO_FILE
        if cand.is_file():
            return cand
    raise FileNotFoundError(f"scenario not found: {path}")


def load_scenario_file(path) -> Scenario:
    p = resolve_path(path)
    return load_scenario(p.read_text(encoding="utf-8"))


def data_dir() -> Path:
    return Path(resources.files("gfmfreq") / "data")


BUNDLED = {
    "single_sg": "single_sg/scenario.yaml",
    "single_sg_H3": "single_sg/H3.yaml",
    "single_sg_H2": "single_sg/H2.yaml",
    "single_sg_H1": "single_sg/H1.yaml",
    "single_gfm": "single_gfm/scenario.yaml",
    "ieee9_A": "ieee9/scenario.yaml",
    "ieee39": "ieee39/scenario.yaml",
}


def load_bundled(name: str) -> Scenario:
    if name not in BUNDLED:
        raise KeyError(f"no bundled scenario {name!r}; choose from {sorted(BUNDLED)}")
    return load_scenario((data_dir() / BUNDLED[name]).read_text(encoding="utf-8"))


# -- serialization ------------------------------------------------------------

def to_document(scen: Scenario) -> dict:
    doc: dict = {"system": {"name": scen.name, "base_mva": scen.base_mva, "f0": scen.f0}}
    doc["buses"] = [{"id": b.id, "kind": b.kind, "v": b.voltage_mag} for b in scen.buses]
    doc["branches"] = [
        {"from": br.from_bus, "to": br.to_bus, "b": br.susceptance, "in_service": br.in_service}
        for br in scen.branches
    ]
    devs = []
    for d in scen.devices:
        e = {"name": d.name, "kind": d.kind, "bus": d.bus, "rating": d.rating, "dispatch": d.dispatch}
        keys = SG_KEYS if d.kind == "SG" else GFM_KEYS
        e.update({k: float(getattr(d.params, attr)) for k, attr in keys.items()})
        devs.append(e)
    doc["devices"] = devs
    doc["loads"] = [{"bus": b.id, "p": b.p_load} for b in scen.buses if b.p_load != 0.0]
    doc["events"] = [{"time": e.time, "kind": e.kind, "bus": e.bus, "delta_p": e.delta_p} for e in scen.events]
    doc["sim"] = {k: getattr(scen.sim, k) for k in SimConfig.__dataclass_fields__}
    if scen.series_order:
        doc["series"] = {"order": list(scen.series_order)}
        if scen.series_labels:
            doc["series"]["labels"] = list(scen.series_labels)
    return doc


def dump_scenario(scen: Scenario) -> str:
    return yaml.safe_dump(to_document(scen), sort_keys=False)


# -- initialization and ladders -------------------------------------------------

def initialize_dispatch(scen: Scenario):
    """Equilibrium device angles and states at the scheduled dispatch.

    Returns ``(device_angles, states)`` with angles in device order and states
    as ``SgState``/``GfmState`` objects; derivatives vanish at this point.
    """
    from .devices import GfmState, SgState

    system = System(scen)
    y, _ = system.initialize()
    n = system.n_dev
    states = []
    pm = system.pre_converter(y)
    for k, kind in enumerate(system.kinds):
        if kind == "SG":
            j = int(np.searchsorted(system.sg_pos, k))
            states.append(SgState(float(y[k]), float(y[system.sl_omega][j]), float(pm[k])))
        else:
            states.append(GfmState(float(y[k]), float(pm[k])))
    return y[:n].copy(), states


def aggregate_inertia_of(scen: Scenario) -> float:
    from .metrics import aggregate_inertia

    return aggregate_inertia([(d.inertia, d.rating) for d in scen.devices])


def sg_to_gfm(dev: DeviceSpec, tau_I: float = 0.05) -> DeviceSpec:
    """GFM replacement with the SG's rating, dispatch and droop."""
    p = dev.params
    gp = GfmParams(droop=p.droop, tau=tau_I, rating=p.rating, p_set=p.p_set, f0=p.f0)
    return replace(dev, kind="GFM", params=gp)


def make_substitution_series(scen: Scenario, order: Sequence[str] | None = None,
                             labels: Sequence[str] | None = None) -> list[tuple[str, Scenario]]:
    """Ladder of scenarios, each replacing one more SG by a GFM.

    Returns ``len(order) + 1`` ``(label, scenario)`` pairs starting with the
    unmodified base.
    """
    order = list(scen.series_order if order is None else order)
    if labels is None:
        labels = scen.series_labels if (scen.series_labels and order == list(scen.series_order)) else None
    if labels is None:
        labels = [str(k) for k in range(len(order) + 1)]
    if len(labels) != len(order) + 1:
        raise ValueError("need len(order) + 1 labels")
    if len(set(order)) != len(order):
        raise ValueError("substitution order repeats a device")
    names = {d.name: d for d in scen.devices}
    for nm in order:
        if nm not in names:
            raise ValueError(f"unknown device {nm!r} in substitution order")
        if names[nm].kind != "SG":
            raise ValueError(f"device {nm!r} is not an SG")
    out = [(labels[0], replace(scen, name=f"{scen.name}[{labels[0]}]"))]
    current = list(scen.devices)
    for k, nm in enumerate(order, start=1):
        current = [sg_to_gfm(d) if d.name == nm else d for d in current]
        out.append((labels[k], replace(scen, name=f"{scen.name}[{labels[k]}]", devices=tuple(current))))
    return out
