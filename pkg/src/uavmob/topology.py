"""Cell layout, PCI pools and PCI planning diagnostics."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .radio import (
    AntennaConfig,
    CellArrays,
    FRONT_TO_BACK_DB,
    PropagationParams,
    Position,
    azimuth_pattern_db,
    los_probability_from_elevation,
    path_loss_db,
    vertical_pattern_db,
)

LTE_PCI_COUNT = 504
NR_PCI_COUNT = 1008


class Tier(str, enum.Enum):
    MACRO = "macro"
    SMALL = "small"


class Rat(str, enum.Enum):
    NR = "NR"
    LTE = "LTE"


@dataclass(frozen=True)
class CellRecord:
    ecgi: int
    pci: int
    tier: Tier
    position: Position
    antenna: AntennaConfig = field(default_factory=AntennaConfig)
    freq_layer: int = 0
    rat: Rat = Rat.NR
    tx_power_dbm: float = 30.0


@dataclass(frozen=True)
class PciPools:
    pool_size: int
    macro_set: frozenset
    small_set: frozenset

    @classmethod
    def split(cls, pool_size: int = NR_PCI_COUNT, macro_count: Optional[int] = None) -> "PciPools":
        """Contiguous split: the first ``macro_count`` PCIs go to the macro tier."""
        if macro_count is None:
            macro_count = pool_size // 3
        return cls(pool_size, frozenset(range(macro_count)), frozenset(range(macro_count, pool_size)))

    def for_tier(self, tier: Tier) -> frozenset:
        return self.macro_set if Tier(tier) is Tier.MACRO else self.small_set


@dataclass(frozen=True)
class Bounds:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(f"degenerate bounds {self}")

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax


@dataclass(frozen=True)
class Topology:
    cells: tuple
    bounds: Bounds
    pools: PciPools = field(default_factory=PciPools.split)

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        seen = set()
        for c in self.cells:
            if c.ecgi in seen:
                raise ValueError(f"duplicate ECGI {c.ecgi}")
            seen.add(c.ecgi)
            if not self.bounds.contains(c.position.x, c.position.y):
                raise ValueError(f"cell {c.ecgi} lies outside the topology bounds")

    def by_ecgi(self, ecgi: int) -> CellRecord:
        for c in self.cells:
            if c.ecgi == ecgi:
                return c
        raise KeyError(ecgi)

    def index_of(self, ecgi: int) -> int:
        for i, c in enumerate(self.cells):
            if c.ecgi == ecgi:
                return i
        raise KeyError(ecgi)

    def arrays(self) -> CellArrays:
        return CellArrays.from_cells(self.cells)

    def with_pcis(self, assignment: Mapping[int, int]) -> "Topology":
        cells = [replace(c, pci=assignment.get(c.ecgi, c.pci)) for c in self.cells]
        return replace(self, cells=tuple(cells))


# --------------------------------------------------------------------------
# PCI planning


def validate_pools(pools: PciPools) -> list:
    """Returns a list of human-readable violations; empty means valid."""
    problems = []
    shared = sorted(pools.macro_set & pools.small_set)
    for pci in shared:
        problems.append(f"PCI {pci} shared between macro and small tiers")
    for name, pcis in (("macro", pools.macro_set), ("small", pools.small_set)):
        for pci in sorted(p for p in pcis if not 0 <= p < pools.pool_size):
            problems.append(f"{name} PCI {pci} out of range [0, {pools.pool_size})")
    return problems


def validate_topology(topology: Topology) -> list:
    problems = validate_pools(topology.pools)
    for c in topology.cells:
        if c.pci not in topology.pools.for_tier(c.tier):
            problems.append(f"cell {c.ecgi} has PCI {c.pci} outside the {Tier(c.tier).value} pool")
    return problems


def assign_pcis(topology: Topology, pools: Optional[PciPools] = None) -> dict:
    """Greedy reuse-distance PCI plan.

    Cells are visited in ``(tier, ecgi)`` order. Each takes the PCI of its tier
    pool whose nearest existing user (3D distance) is farthest away; an unused
    PCI counts as infinitely far. Ties go to the lowest PCI.

    Returns:
        Mapping ``ecgi -> pci``.
    """
    pools = pools or topology.pools
    order = sorted(topology.cells, key=lambda c: (Tier(c.tier).value, c.ecgi))
    assignment = {}
    users: dict = {}  # pci -> list of xyz already holding it
    for cell in order:
        pool = sorted(pools.for_tier(cell.tier))
        if not pool:
            raise ValueError(f"empty PCI pool for tier {Tier(cell.tier).value}")
        here = (cell.position.x, cell.position.y, cell.position.z)
        best_pci, best_dist = None, -1.0
        for pci in pool:
            holders = users.get(pci)
            d = math.inf if not holders else min(math.dist(here, h) for h in holders)
            if d > best_dist:
                best_pci, best_dist = pci, d
        assignment[cell.ecgi] = best_pci
        users.setdefault(best_pci, []).append(here)
    return assignment


# --------------------------------------------------------------------------
# coverage predicates


def grid_points(bounds: Bounds, altitude: float, spacing: float = 25.0) -> np.ndarray:
    xs = np.arange(bounds.xmin, bounds.xmax + 1e-9, spacing)
    ys = np.arange(bounds.ymin, bounds.ymax + 1e-9, spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, float(altitude))])


def rsrp_matrix(arrays: CellArrays, points: np.ndarray, params: PropagationParams) -> np.ndarray:
    """Expected-loss RSRP, shape ``(n_cells, n_points)``, shadowing off."""
    delta = points[None, :, :] - arrays.xyz[:, None, :]
    horiz = np.hypot(delta[..., 0], delta[..., 1])
    dist = np.maximum(np.sqrt(horiz**2 + delta[..., 2] ** 2), 1e-3)
    elevation = np.degrees(np.arctan2(delta[..., 2], horiz))
    bearing = np.degrees(np.arctan2(delta[..., 0], delta[..., 1])) % 360.0
    col = lambda a: a[:, None]  # noqa: E731
    gain = col(arrays.max_gain_dbi) + np.maximum(
        vertical_pattern_db(elevation, col(arrays.mech_tilt_deg), col(arrays.element_count), col(arrays.spacing_wl))
        + azimuth_pattern_db(bearing - col(arrays.azimuth_deg), col(arrays.beamwidth_deg)),
        -FRONT_TO_BACK_DB,
    )
    p_los = los_probability_from_elevation(elevation, params.los_sigmoid_a, params.los_sigmoid_b)
    return col(arrays.tx_power_dbm) + gain - path_loss_db(dist, params, p_los)


def coverage_masks(topology: Topology, altitude: float, params: PropagationParams,
                   spacing: float = 25.0) -> np.ndarray:
    """Boolean ``(n_cells, n_points)``: RSRP at or above the detection threshold."""
    pts = grid_points(topology.bounds, altitude, spacing)
    return rsrp_matrix(topology.arrays(), pts, params) >= params.detection_threshold_dbm


def detect_pci_collision(topology: Topology, altitude: float, params: PropagationParams,
                         spacing: float = 25.0) -> list:
    """Same-PCI cell pairs whose coverage overlaps at ``altitude``.

    Returns sorted ``(ecgi_a, ecgi_b)`` tuples with ``ecgi_a < ecgi_b``.
    """
    cover = coverage_masks(topology, altitude, params, spacing)
    cells = topology.cells
    pairs = []
    for i in range(len(cells)):
        for j in range(i + 1, len(cells)):
            if cells[i].pci == cells[j].pci and np.any(cover[i] & cover[j]):
                pairs.append(tuple(sorted((cells[i].ecgi, cells[j].ecgi))))
    return sorted(pairs)


def _relations_of(table) -> Iterable:
    if hasattr(table, "all_relations"):
        return [(r.pci, r.ecgi) for r in table.all_relations()]
    return list(table)


def detect_pci_confusion(topology: Topology, nrts: Mapping, params: PropagationParams,
                         altitudes: Sequence[float] = (1.5,), spacing: float = 25.0) -> list:
    """PCIs a serving cell has mapped to one ECGI while another cell with the
    same PCI is detectable inside that serving cell's coverage.

    ``nrts`` maps owner ECGI to either an :class:`~uavmob.anr.Nrt` or an
    iterable of ``(pci, ecgi)`` pairs.

    Returns:
        Sorted list of ``(serving_ecgi, pci, frozenset_of_ecgis)``.
    """
    masks = [coverage_masks(topology, h, params, spacing) for h in altitudes]
    cover = np.concatenate(masks, axis=1) if masks else np.zeros((len(topology.cells), 0), bool)
    index = {c.ecgi: i for i, c in enumerate(topology.cells)}
    found = []
    for owner in sorted(nrts):
        if owner not in index:
            continue
        serving_area = cover[index[owner]]
        for pci, mapped in sorted(set(_relations_of(nrts[owner]))):
            others = [
                c.ecgi for c in topology.cells
                if c.pci == pci and c.ecgi not in (mapped, owner)
                and np.any(cover[index[c.ecgi]] & serving_area)
            ]
            if others:
                found.append((owner, pci, frozenset([mapped, *others])))
    return found


# --------------------------------------------------------------------------
# construction


@dataclass(frozen=True)
class TierTemplate:
    """Per-tier defaults used by :func:`generate_topology`."""

    height_m: float
    tx_power_dbm: float
    freq_layer: int
    antenna: AntennaConfig


DEFAULT_MACRO = TierTemplate(30.0, 43.0, 1, AntennaConfig(mech_tilt_deg=8.0, element_count=8, max_gain_dbi=15.0))
DEFAULT_SMALL = TierTemplate(10.0, 30.0, 0, AntennaConfig(mech_tilt_deg=10.0, element_count=8, max_gain_dbi=8.0))


def generate_topology(bounds: Bounds, macro_spacing_m: float, small_cells: int, seed: int,
                      pools: Optional[PciPools] = None, macro: TierTemplate = DEFAULT_MACRO,
                      small: TierTemplate = DEFAULT_SMALL) -> Topology:
    """Grid of macro cells plus uniformly scattered small cells.

    Macro sites sit at the centres of a ``macro_spacing_m`` grid. Antenna
    azimuths and small-cell positions come from ``numpy.random.default_rng(seed)``.
    PCIs are planned with :func:`assign_pcis`.
    """
    rng = np.random.default_rng(seed)
    pools = pools or PciPools.split()
    cells = []
    ecgi = 1
    xs = np.arange(bounds.xmin + macro_spacing_m / 2, bounds.xmax, macro_spacing_m)
    ys = np.arange(bounds.ymin + macro_spacing_m / 2, bounds.ymax, macro_spacing_m)
    for x in xs:
        for y in ys:
            ant = replace(macro.antenna, azimuth_deg=float(rng.uniform(0, 360)))
            cells.append(CellRecord(ecgi, 0, Tier.MACRO, Position(float(x), float(y), macro.height_m),
                                    ant, macro.freq_layer, Rat.NR, macro.tx_power_dbm))
            ecgi += 1
    for _ in range(small_cells):
        x = float(rng.uniform(bounds.xmin, bounds.xmax))
        y = float(rng.uniform(bounds.ymin, bounds.ymax))
        ant = replace(small.antenna, azimuth_deg=float(rng.uniform(0, 360)))
        cells.append(CellRecord(ecgi, 0, Tier.SMALL, Position(x, y, small.height_m),
                                ant, small.freq_layer, Rat.NR, small.tx_power_dbm))
        ecgi += 1
    topo = Topology(tuple(cells), bounds, pools)
    return topo.with_pcis(assign_pcis(topo))


def antenna_from_dict(d: Mapping) -> AntennaConfig:
    return AntennaConfig(**d)


def antenna_to_dict(a: AntennaConfig) -> dict:
    return {
        "azimuth_deg": a.azimuth_deg,
        "mech_tilt_deg": a.mech_tilt_deg,
        "element_count": a.element_count,
        "element_spacing_wavelengths": a.element_spacing_wavelengths,
        "max_gain_dbi": a.max_gain_dbi,
        "azimuth_beamwidth_deg": a.azimuth_beamwidth_deg,
    }


def cell_from_dict(d: Mapping) -> CellRecord:
    allowed = {"ecgi", "pci", "tier", "position", "antenna", "freq_layer", "rat", "tx_power_dbm"}
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown cell keys: {sorted(unknown)}")
    x, y, z = d["position"]
    return CellRecord(
        ecgi=int(d["ecgi"]),
        pci=int(d.get("pci", 0)),
        tier=Tier(d.get("tier", "small")),
        position=Position(float(x), float(y), float(z)),
        antenna=antenna_from_dict(d.get("antenna", {})),
        freq_layer=int(d.get("freq_layer", 0)),
        rat=Rat(d.get("rat", "NR")),
        tx_power_dbm=float(d.get("tx_power_dbm", 30.0)),
    )


def cell_to_dict(c: CellRecord) -> dict:
    return {
        "ecgi": c.ecgi,
        "pci": c.pci,
        "tier": Tier(c.tier).value,
        "position": [c.position.x, c.position.y, c.position.z],
        "antenna": antenna_to_dict(c.antenna),
        "freq_layer": c.freq_layer,
        "rat": Rat(c.rat).value,
        "tx_power_dbm": c.tx_power_dbm,
    }
