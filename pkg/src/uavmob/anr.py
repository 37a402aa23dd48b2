"""Neighbour relation tables and the automatic neighbour relation function."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .rrm import MeasConfig, MeasurementReport, gap_times
from .topology import CellRecord

GROUND = "ground"
AERIAL = "aerial"


class AddMechanism(str, enum.Enum):
    MEASUREMENT = "MeasurementBased"
    UPLINK_ID = "UplinkId"
    RECONNECT = "ReconnectBased"


@dataclass(frozen=True)
class AnrPolicy:
    add_mechanisms: tuple = (AddMechanism.MEASUREMENT.value,)
    t_remove_s: float = 600.0
    r_block: int = 3
    w_block_s: float = 3600.0
    always_resolve_ecgi: bool = False
    separate_aerial: bool = False
    max_size: int = 32
    p_drop_on_decode_fail: float = 0.2
    # removal timer of the aerial table; flying users come and go in bursts
    aerial_t_remove_s: float = 2400.0
    ulid_threshold_dbm: float = -100.0

    def __post_init__(self):
        object.__setattr__(self, "add_mechanisms", tuple(AddMechanism(m).value for m in self.add_mechanisms))
        if self.r_block < 1:
            raise ValueError("r_block must be >= 1")
        if self.t_remove_s <= 0 or self.aerial_t_remove_s <= 0:
            raise ValueError("removal timers must be > 0")
        if self.max_size < 1:
            raise ValueError("max_size must be >= 1")
        if not 0 <= self.p_drop_on_decode_fail <= 1:
            raise ValueError("p_drop_on_decode_fail must be a probability")

    def uses(self, mechanism: AddMechanism) -> bool:
        return AddMechanism(mechanism).value in self.add_mechanisms


@dataclass
class NeighbourRelation:
    pci: int
    ecgi: int
    block_listed: bool = False
    added_at: float = 0.0
    last_reported: float = 0.0


class Nrt:
    """Neighbour relations owned by one cell, keyed by ECGI.

    ``removals`` keeps, per ``(table, ecgi)``, the times the relation was
    swept out; it never shrinks.
    """

    def __init__(self, owner: int, max_size: int = 32, separate_aerial: bool = False):
        self.owner = owner
        self.max_size = max_size
        self.ground: dict = {}
        self.aerial: Optional[dict] = {} if separate_aerial else None
        self.removals: dict = {}
        self.pending: dict = {}  # (ue_id, pci) -> request time

    def __repr__(self):
        aerial = "-" if self.aerial is None else len(self.aerial)
        return f"Nrt(owner={self.owner}, ground={len(self.ground)}, aerial={aerial})"

    def table_name(self, ue_kind: str, policy: AnrPolicy) -> str:
        return AERIAL if (policy.separate_aerial and ue_kind == "UAV" and self.aerial is not None) else GROUND

    def table(self, name: str) -> dict:
        if name == AERIAL:
            if self.aerial is None:
                raise KeyError("this NRT has no aerial table")
            return self.aerial
        return self.ground

    def tables(self):
        yield GROUND, self.ground
        if self.aerial is not None:
            yield AERIAL, self.aerial

    def all_relations(self) -> list:
        return [r for _, t in self.tables() for r in t.values()]

    def by_pci(self, name: str, pci: int) -> Optional[NeighbourRelation]:
        """Most recently reported relation for ``pci`` (ties: lowest ECGI)."""
        hits = [r for r in self.table(name).values() if r.pci == pci]
        if not hits:
            return None
        return max(hits, key=lambda r: (r.last_reported, -r.ecgi))

    def recent_removals(self, name: str, ecgi: int, now: float, window: float) -> int:
        return sum(1 for t in self.removals.get((name, ecgi), ()) if now - t <= window)


@dataclass(frozen=True)
class Known:
    pci: int
    ecgi: int


@dataclass(frozen=True)
class RequestEcgi:
    pci: int


@dataclass(frozen=True)
class ConfusionLatent:
    pci: int
    nrt_ecgi: int
    true_ecgi: int


AnrAction = Union[Known, RequestEcgi, ConfusionLatent]


def on_report(nrt: Nrt, report: MeasurementReport, ue_kind: str, policy: AnrPolicy) -> list:
    """Classify every reported PCI against the serving cell's active table.

    Known relations have ``last_reported`` refreshed as a side effect.
    ``ConfusionLatent`` is diagnostic only: it flags that the simulator's
    ground truth disagrees with the table, which the cell itself cannot see.
    """
    if report.serving_ecgi != nrt.owner:
        raise ValueError(f"report from a UE served by {report.serving_ecgi}, not {nrt.owner}")
    name = nrt.table_name(ue_kind, policy)
    table = nrt.table(name)
    now = report.time_s
    actions = []
    for cell in report.cells:
        if policy.always_resolve_ecgi:
            rel = table.get(cell.ecgi) if cell.ecgi is not None else None
            if rel is None:
                actions.append(RequestEcgi(cell.pci))
                continue
        else:
            rel = nrt.by_pci(name, cell.pci)
            if rel is None:
                actions.append(RequestEcgi(cell.pci))
                continue
        rel.last_reported = now
        actions.append(Known(cell.pci, rel.ecgi))
        if cell.true_ecgi is not None and cell.true_ecgi != rel.ecgi:
            actions.append(ConfusionLatent(cell.pci, rel.ecgi, cell.true_ecgi))
    return actions


@dataclass(frozen=True)
class Resolved:
    ecgi: int
    done_at: float
    interruption_s: float = 0.0


@dataclass(frozen=True)
class Failed:
    dropped: bool
    done_at: float
    interruption_s: float = 0.0


def request_ecgi(nrt: Nrt, ue_id: str, pci: int, now: float) -> bool:
    """Register a decode request; False if one is already in flight."""
    key = (ue_id, pci)
    if key in nrt.pending:
        return False
    nrt.pending[key] = now
    return True


def resolve_ecgi(nrt: Nrt, ue_id: str, pci: int, true_ecgi: int, mode: str, radio: str,
                 data_activity: float, meas: MeasConfig, rng: np.random.Generator,
                 p_drop_on_decode_fail: float = 0.2) -> Union[Resolved, Failed]:
    """Play out the global-id decode started by :func:`request_ecgi`.

    The decode needs ``meas.ecgi_decode_gaps`` consecutive usable gaps before
    ``decode_deadline_reports`` report periods elapse. A connected single-radio
    UE can use each gap with probability ``1 - data_activity`` and loses
    ``gap_duration_ms`` of data per used gap; idle or dual-radio UEs always
    can, at no data cost. The request stays pending until the caller
    completes it with :func:`complete_request`.
    """
    try:
        started = nrt.pending[(ue_id, pci)]
    except KeyError:
        raise KeyError(f"no pending ECGI request for PCI {pci} from {ue_id}") from None
    if not 0 <= data_activity <= 1:
        raise ValueError("data_activity must be in [0, 1]")
    free = mode == "idle" or radio == "dual"
    deadline = started + meas.decode_deadline_reports * meas.report_period_s
    gap_s = meas.gap_duration_ms / 1000.0
    run = 0
    used = 0
    for t in gap_times(started, deadline, meas.gap_period_s):
        ok = True if free else bool(rng.random() < 1.0 - data_activity)
        if ok:
            run += 1
            used += 0 if free else 1
        else:
            run = 0
        if run >= meas.ecgi_decode_gaps:
            return Resolved(true_ecgi, t + gap_s, used * gap_s)
    dropped = bool(rng.random() < p_drop_on_decode_fail)
    return Failed(dropped, deadline, used * gap_s)


def complete_request(nrt: Nrt, ue_id: str, pci: int) -> None:
    nrt.pending.pop((ue_id, pci), None)


def commit_resolution(nrt: Nrt, pci: int, ecgi: int, now: float, ue_kind: str, policy: AnrPolicy,
                      protected: Iterable[int] = ()) -> Optional[NeighbourRelation]:
    """Insert or refresh ``(pci, ecgi)`` in the table the UE kind maps to.

    A full table evicts its stalest relation, skipping ``protected`` ECGIs.
    A relation removed at least ``r_block`` times within ``w_block_s`` comes
    back block-listed. Returns the relation (``None`` for a self relation or
    when nothing can be evicted).
    """
    if ecgi == nrt.owner:
        return None
    name = nrt.table_name(ue_kind, policy)
    table = nrt.table(name)
    rel = table.get(ecgi)
    if rel is not None:
        rel.pci = pci
        rel.last_reported = max(rel.last_reported, now)
        return rel
    if len(table) >= nrt.max_size:
        keep = set(protected)
        candidates = [r for r in table.values() if r.ecgi not in keep]
        if not candidates:
            return None
        stalest = min(candidates, key=lambda r: (r.last_reported, r.ecgi))
        del table[stalest.ecgi]
    blocked = nrt.recent_removals(name, ecgi, now, policy.w_block_s) >= policy.r_block
    rel = NeighbourRelation(pci, ecgi, block_listed=blocked, added_at=now, last_reported=now)
    table[ecgi] = rel
    return rel


@dataclass(frozen=True)
class SweepResult:
    removed: tuple = ()   # (table, ecgi)
    flagged: tuple = ()   # (table, ecgi) that will come back block-listed


def removal_sweep(nrt: Nrt, now: float, policy: AnrPolicy) -> SweepResult:
    """Drop relations not reported for longer than the table's removal timer.

    Block-listed relations stay put so the block survives.
    """
    removed, flagged = [], []
    for name, table in nrt.tables():
        limit = policy.aerial_t_remove_s if name == AERIAL else policy.t_remove_s
        for ecgi in sorted(table):
            rel = table[ecgi]
            if rel.block_listed or now - rel.last_reported <= limit:
                continue
            del table[ecgi]
            nrt.removals.setdefault((name, ecgi), []).append(now)
            removed.append((name, ecgi))
            if nrt.recent_removals(name, ecgi, now, policy.w_block_s) >= policy.r_block:
                flagged.append((name, ecgi))
    return SweepResult(tuple(removed), tuple(flagged))


def ulid_add(nrts: dict, cells: Sequence[CellRecord], uplink_dbm: Sequence[float], serving: CellRecord,
             ue_kind: str, threshold_dbm: float, now: float, policy: AnrPolicy) -> list:
    """Uplink-ID based add: every cell hearing the UE above ``threshold_dbm``
    learns the UE's serving cell. Uses a reciprocal link budget, so
    ``uplink_dbm`` is the downlink RSRP per cell. Returns the updated owners.
    """
    touched = []
    for cell, level in zip(cells, uplink_dbm):
        if cell.ecgi == serving.ecgi or level < threshold_dbm:
            continue
        if commit_resolution(nrts[cell.ecgi], serving.pci, serving.ecgi, now, ue_kind, policy) is not None:
            touched.append(cell.ecgi)
    return touched


def reconnect_add(new_cell_nrt: Nrt, previous_cell: Optional[CellRecord], now: float, ue_kind: str,
                  policy: AnrPolicy) -> Optional[NeighbourRelation]:
    """After re-establishment, the new cell learns the cell the UE dropped from."""
    if previous_cell is None or previous_cell.ecgi == new_cell_nrt.owner:
        return None
    return commit_resolution(new_cell_nrt, previous_cell.pci, previous_cell.ecgi, now, ue_kind, policy)


@dataclass
class NrtSnapshot:
    time_s: float
    owner: int
    ground_size: int
    aerial_size: int
    block_listed: int = field(default=0)


def snapshot(nrt: Nrt, now: float) -> NrtSnapshot:
    return NrtSnapshot(now, nrt.owner, len(nrt.ground), len(nrt.aerial or {}),
                       sum(r.block_listed for r in nrt.all_relations()))
