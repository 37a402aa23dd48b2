"""Scenario files: strict JSON loading, validation and packaged examples."""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from .anr import AnrPolicy
from .handover import AdaptiveA3Policy, HoConfig, RlfConfig
from .mobility import FixedPath, RandomWaypoint2D, lawnmower, validate_caps
from .radio import PropagationParams, Position
from .rrm import EventConfig, MeasConfig
from .topology import (
    Bounds,
    PciPools,
    TierTemplate,
    Topology,
    DEFAULT_MACRO,
    DEFAULT_SMALL,
    antenna_from_dict,
    cell_from_dict,
    cell_to_dict,
    generate_topology,
    validate_topology,
)

UE_KINDS = ("UAV", "GUE")
RADIOS = ("single", "dual")
MITIGATIONS = ("separate_aerial", "always_resolve_ecgi", "adaptive_a3")


class ScenarioError(ValueError):
    """The scenario file is malformed or violates a limit."""


def _build(cls, data: Optional[Mapping], where: str):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {unknown}")
    for k, v in list(data.items()):
        if isinstance(v, list):
            data[k] = tuple(v)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def _check_keys(d: Mapping, allowed, where: str):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {unknown}")


@dataclass(frozen=True)
class Mitigations:
    separate_aerial: bool = False
    always_resolve_ecgi: bool = False
    adaptive_a3: bool = False


@dataclass(frozen=True)
class UeSpec:
    id: str
    kind: str
    mobility: Union[FixedPath, RandomWaypoint2D]
    radio: str = "single"
    data_activity: float = 0.5
    secondary_pci: Optional[int] = None


@dataclass(frozen=True)
class NrtSeed:
    owner: int
    pci: int
    ecgi: int
    table: str = "ground"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    dt_s: float
    duration_s: float
    topology: Topology
    ues: tuple
    propagation: PropagationParams = field(default_factory=PropagationParams)
    meas: MeasConfig = field(default_factory=MeasConfig)
    events: Mapping = field(default_factory=lambda: {"UAV": EventConfig(), "GUE": EventConfig()})
    anr: AnrPolicy = field(default_factory=AnrPolicy)
    ho: HoConfig = field(default_factory=HoConfig)
    rlf: RlfConfig = field(default_factory=RlfConfig)
    mitigations: Mitigations = field(default_factory=Mitigations)
    nrt_seed: tuple = ()
    trace_every: int = 1
    metrics_layer: Optional[int] = None
    nrt_sample_s: float = 10.0
    extended_speed: bool = False
    raw: Mapping = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration_s / self.dt_s))


# --------------------------------------------------------------------------
# parsing

_TOP_KEYS = {
    "name", "seed", "dt_s", "duration_s", "topology", "ues", "propagation", "meas", "events", "anr",
    "ho", "rlf", "mitigations", "nrt_seed", "trace_every", "metrics_layer", "nrt_sample_s",
    "extended_speed", "description",
}


def _tier_template(d: Optional[Mapping], default: TierTemplate, where: str) -> TierTemplate:
    if not d:
        return default
    _check_keys(d, {"height_m", "tx_power_dbm", "freq_layer", "antenna"}, where)
    try:
        antenna = default.antenna if "antenna" not in d else antenna_from_dict(d["antenna"])
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}.antenna: {exc}") from exc
    return TierTemplate(
        float(d.get("height_m", default.height_m)),
        float(d.get("tx_power_dbm", default.tx_power_dbm)),
        int(d.get("freq_layer", default.freq_layer)),
        antenna,
    )


def _pools(d: Optional[Mapping]) -> PciPools:
    if not d:
        return PciPools.split()
    _check_keys(d, {"pool_size", "macro_count", "macro", "small", "macro_range", "small_range"}, "topology.pools")
    size = int(d.get("pool_size", 1008))
    if "macro_count" in d:
        return PciPools.split(size, int(d["macro_count"]))

    def pick(name):
        if name in d:
            return frozenset(int(p) for p in d[name])
        lo, hi = d[f"{name}_range"]
        return frozenset(range(int(lo), int(hi) + 1))

    try:
        return PciPools(size, pick("macro"), pick("small"))
    except KeyError as exc:
        raise ScenarioError(f"topology.pools: missing {exc}") from exc


def parse_topology(d: Mapping) -> Topology:
    _check_keys(d, {"bounds", "pools", "cells", "generator"}, "topology")
    pools = _pools(d.get("pools"))
    try:
        if "generator" in d:
            g = d["generator"]
            _check_keys(g, {"bounds", "macro_spacing_m", "small_cells", "seed", "macro", "small"}, "topology.generator")
            bounds = Bounds(*g.get("bounds", d.get("bounds", (0, 0, 1000, 1000))))
            topo = generate_topology(
                bounds, float(g.get("macro_spacing_m", 500.0)), int(g.get("small_cells", 30)),
                int(g.get("seed", 1)), pools,
                _tier_template(g.get("macro"), DEFAULT_MACRO, "topology.generator.macro"),
                _tier_template(g.get("small"), DEFAULT_SMALL, "topology.generator.small"),
            )
        else:
            cells = tuple(cell_from_dict(c) for c in d.get("cells", ()))
            topo = Topology(cells, Bounds(*d["bounds"]), pools)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"topology: {exc}") from exc
    problems = validate_topology(topo)
    if problems:
        raise ScenarioError("topology: " + "; ".join(problems))
    return topo


def topology_to_dict(topo: Topology) -> dict:
    b = topo.bounds
    return {
        "bounds": [b.xmin, b.ymin, b.xmax, b.ymax],
        "pools": {
            "pool_size": topo.pools.pool_size,
            "macro": sorted(topo.pools.macro_set),
            "small": sorted(topo.pools.small_set),
        },
        "cells": [cell_to_dict(c) for c in topo.cells],
    }


def _pos(p, where) -> Position:
    try:
        x, y, z = p
        return Position(float(x), float(y), float(z))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: bad position {p!r}: {exc}") from exc


def parse_mobility(d: Mapping, bounds: Bounds, where: str):
    kind = d.get("type")
    bb = (bounds.xmin, bounds.ymin, bounds.xmax, bounds.ymax)
    try:
        if kind == "FixedPath":
            _check_keys(d, {"type", "waypoints", "speed_mps", "loop"}, where)
            wps = tuple(_pos(p, where) for p in d["waypoints"])
            return FixedPath(wps, float(d["speed_mps"]), bool(d.get("loop", False)))
        if kind == "Lawnmower":
            _check_keys(d, {"type", "altitude_m", "spacing_m", "margin_m", "speed_mps", "bounds", "loop"}, where)
            wps = lawnmower(d.get("bounds", bb), float(d["altitude_m"]), float(d.get("spacing_m", 100.0)),
                            float(d.get("margin_m", 0.0)))
            return FixedPath(tuple(wps), float(d["speed_mps"]), bool(d.get("loop", False)))
        if kind == "Static":
            _check_keys(d, {"type", "position"}, where)
            return FixedPath((_pos(d["position"], where),), 0.0)
        if kind == "RandomWaypoint2D":
            _check_keys(d, {"type", "bounds", "speed_range_mps", "pause_s", "z_fixed"}, where)
            return RandomWaypoint2D(tuple(d.get("bounds", bb)), tuple(d["speed_range_mps"]),
                                    float(d.get("pause_s", 0.0)), float(d.get("z_fixed", 1.5)))
    except KeyError as exc:
        raise ScenarioError(f"{where}: missing {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from exc
    raise ScenarioError(f"{where}: unknown mobility type {kind!r}")


def parse_scenario(d: Mapping) -> ScenarioConfig:
    """Validate a scenario mapping and build the typed configuration."""
    if not isinstance(d, Mapping):
        raise ScenarioError("scenario must be a JSON object")
    _check_keys(d, _TOP_KEYS, "scenario")
    for key in ("seed", "duration_s", "topology", "ues"):
        if key not in d:
            raise ScenarioError(f"scenario: missing {key!r}")
    dt = float(d.get("dt_s", 0.1))
    duration = float(d["duration_s"])
    if not dt > 0:
        raise ScenarioError("dt_s must be > 0")
    if duration < 0:
        raise ScenarioError("duration_s must be >= 0")
    if 0 < duration < dt:
        raise ScenarioError("duration_s must be 0 or at least dt_s")
    topo = parse_topology(d["topology"])
    mit = _build(Mitigations, d.get("mitigations"), "mitigations")
    extended = bool(d.get("extended_speed", False))

    ues = []
    seen = set()
    for i, u in enumerate(d["ues"]):
        where = f"ues[{i}]"
        _check_keys(u, {"id", "kind", "mobility", "radio", "data_activity", "secondary_pci"}, where)
        uid = str(u.get("id", f"ue{i}"))
        if uid in seen:
            raise ScenarioError(f"{where}: duplicate UE id {uid!r}")
        seen.add(uid)
        kind = u.get("kind", "GUE")
        if kind not in UE_KINDS:
            raise ScenarioError(f"{where}: kind must be one of {UE_KINDS}")
        radio = u.get("radio", "single")
        if radio not in RADIOS:
            raise ScenarioError(f"{where}: radio must be one of {RADIOS}")
        activity = float(u.get("data_activity", 0.5))
        if not 0 <= activity <= 1:
            raise ScenarioError(f"{where}: data_activity must be in [0, 1]")
        model = parse_mobility(u.get("mobility", {}), topo.bounds, f"{where}.mobility")
        problems = validate_caps(model, kind, extended)
        if problems:
            raise ScenarioError(f"{where}: " + "; ".join(problems))
        sec = u.get("secondary_pci")
        ues.append(UeSpec(uid, kind, model, radio, activity, None if sec is None else int(sec)))

    ev_raw = d.get("events", {})
    _check_keys(ev_raw, UE_KINDS, "events")
    events = {k: _build(EventConfig, ev_raw.get(k), f"events.{k}") for k in UE_KINDS}

    anr_raw = dict(d.get("anr", {}))
    if mit.separate_aerial:
        anr_raw["separate_aerial"] = True
    if mit.always_resolve_ecgi:
        anr_raw["always_resolve_ecgi"] = True
    anr = _build(AnrPolicy, anr_raw, "anr")

    ho_raw = dict(d.get("ho", {}))
    adaptive = ho_raw.pop("adaptive_a3", None)
    ho = _build(HoConfig, ho_raw, "ho")
    if adaptive is not None or mit.adaptive_a3:
        policy = _build(AdaptiveA3Policy, adaptive or {"base_offset_db": events["UAV"].a3_offset_db}, "ho.adaptive_a3")
        if mit.adaptive_a3 or adaptive is not None:
            ho = dataclasses.replace(ho, adaptive_a3=policy if mit.adaptive_a3 else None)

    seeds = []
    ecgis = {c.ecgi for c in topo.cells}
    for i, s in enumerate(d.get("nrt_seed", ())):
        seed = _build(NrtSeed, s, f"nrt_seed[{i}]")
        if seed.owner not in ecgis or seed.ecgi not in ecgis:
            raise ScenarioError(f"nrt_seed[{i}]: unknown ECGI")
        if seed.table not in ("ground", "aerial"):
            raise ScenarioError(f"nrt_seed[{i}]: table must be ground or aerial")
        seeds.append(seed)

    trace_every = int(d.get("trace_every", 1))
    if trace_every < 1:
        raise ScenarioError("trace_every must be >= 1")
    layer = d.get("metrics_layer")
    return ScenarioConfig(
        name=str(d.get("name", "scenario")),
        seed=int(d["seed"]),
        dt_s=dt,
        duration_s=duration,
        topology=topo,
        ues=tuple(ues),
        propagation=_build(PropagationParams, d.get("propagation"), "propagation"),
        meas=_build(MeasConfig, d.get("meas"), "meas"),
        events=events,
        anr=anr,
        ho=ho,
        rlf=_build(RlfConfig, d.get("rlf"), "rlf"),
        mitigations=mit,
        nrt_seed=tuple(seeds),
        trace_every=trace_every,
        metrics_layer=None if layer is None else int(layer),
        nrt_sample_s=float(d.get("nrt_sample_s", 10.0)),
        extended_speed=extended,
        raw=copy.deepcopy(dict(d)),
    )


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON: {exc}") from exc
    return parse_scenario(data)


def packaged_names() -> list:
    root = resources.files("uavmob") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def packaged_raw(name: str) -> dict:
    path = resources.files("uavmob") / "scenarios" / f"{name}.json"
    return json.loads(path.read_text())


def packaged(name: str) -> ScenarioConfig:
    return parse_scenario(packaged_raw(name))


def resolve_scenario_arg(arg: str) -> dict:
    """A path to a JSON file, or the name of a packaged scenario."""
    p = Path(arg)
    if p.exists():
        try:
            return json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{arg}: invalid JSON: {exc}") from exc
    if arg in packaged_names():
        return packaged_raw(arg)
    raise ScenarioError(f"no scenario file or packaged scenario named {arg!r}")


# --------------------------------------------------------------------------
# raw-dict edits used by sweeps and the CLI


def set_uav_altitude(raw: Mapping, altitude: float) -> dict:
    """Copy of ``raw`` with every UAV flying at ``altitude``."""
    out = copy.deepcopy(dict(raw))
    for u in out.get("ues", []):
        if u.get("kind") != "UAV":
            continue
        m = u.get("mobility", {})
        t = m.get("type")
        if t == "Lawnmower":
            m["altitude_m"] = altitude
        elif t == "FixedPath":
            m["waypoints"] = [[p[0], p[1], altitude] for p in m["waypoints"]]
        elif t == "Static":
            p = m["position"]
            m["position"] = [p[0], p[1], altitude]
        elif t == "RandomWaypoint2D":
            m["z_fixed"] = altitude
    return out


def set_path(raw: Mapping, dotted: str, value: Any) -> dict:
    """Copy of ``raw`` with ``a.b.c`` set to ``value`` (dicts created as needed)."""
    out = copy.deepcopy(dict(raw))
    node = out
    parts = dotted.split(".")
    for p in parts[:-1]:
        if isinstance(node, list):
            node = node[int(p)]
        else:
            node = node.setdefault(p, {})
    if isinstance(node, list):
        node[int(parts[-1])] = value
    else:
        node[parts[-1]] = value
    return out


def with_mitigations(raw: Mapping, names) -> dict:
    out = copy.deepcopy(dict(raw))
    mit = dict(out.get("mitigations", {}))
    for n in names:
        if n not in MITIGATIONS:
            raise ScenarioError(f"unknown mitigation {n!r}; choose from {MITIGATIONS}")
        mit[n] = True
    out["mitigations"] = mit
    return out


def replan_pcis(raw: Mapping) -> dict:
    """Copy of ``raw`` with an inline topology whose PCIs come from the planner."""
    from .topology import assign_pcis

    topo = parse_topology(raw["topology"])
    out = copy.deepcopy(dict(raw))
    out["topology"] = topology_to_dict(topo.with_pcis(assign_pcis(topo)))
    return out
