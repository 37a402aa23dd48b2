"""Measurement reports and A1-A6 / B1-B2 event evaluation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .topology import CellRecord, Rat

_EPS = 1e-9


class EventKind(str, enum.Enum):
    A1 = "A1"
    A2 = "A2"
    A3 = "A3"
    A4 = "A4"
    A5 = "A5"
    A6 = "A6"
    B1 = "B1"
    B2 = "B2"


SERVING_ONLY = frozenset({EventKind.A1, EventKind.A2})
INTER_RAT = frozenset({EventKind.B1, EventKind.B2})
HANDOVER_TRIGGERS = frozenset({EventKind.A3, EventKind.A4, EventKind.A5, EventKind.B1, EventKind.B2})


@dataclass(frozen=True)
class MeasConfig:
    report_period_s: float = 0.2
    gap_period_s: float = 0.48
    gap_duration_ms: float = 40.0
    ecgi_decode_gaps: int = 2
    decode_deadline_reports: int = 5
    # None means every layer other than the serving one is an inter-layer target
    inter_layers: Optional[tuple] = None

    def __post_init__(self):
        if self.ecgi_decode_gaps < 2:
            raise ValueError("ecgi_decode_gaps must be >= 2")
        if self.report_period_s <= 0 or self.gap_period_s <= 0:
            raise ValueError("report and gap periods must be > 0")
        if self.decode_deadline_reports < 1:
            raise ValueError("decode_deadline_reports must be >= 1")


@dataclass(frozen=True)
class EventConfig:
    a1_thresh_dbm: float = -90.0
    a2_thresh_dbm: float = -100.0
    a3_offset_db: float = 3.0
    a4_thresh_dbm: float = -95.0
    a5_thresh1_dbm: float = -100.0
    a5_thresh2_dbm: float = -95.0
    a6_offset_db: float = 3.0
    b1_thresh_dbm: float = -100.0
    b2_thresh1_dbm: float = -105.0
    b2_thresh2_dbm: float = -100.0
    hysteresis_db: float = 1.0
    time_to_trigger_s: float = 0.48
    enabled: tuple = ("A1", "A2", "A3", "A5")

    def __post_init__(self):
        if not self.a5_thresh1_dbm < self.a5_thresh2_dbm:
            raise ValueError("a5_thresh1 must be lower than a5_thresh2")
        if not self.b2_thresh1_dbm < self.b2_thresh2_dbm:
            raise ValueError("b2_thresh1 must be lower than b2_thresh2")
        if self.hysteresis_db < 0 or self.time_to_trigger_s < 0:
            raise ValueError("hysteresis and time-to-trigger must be >= 0")
        object.__setattr__(self, "enabled", tuple(EventKind(k).value for k in self.enabled))

    @property
    def kinds(self) -> frozenset:
        return frozenset(EventKind(k) for k in self.enabled)


@dataclass(frozen=True)
class ReportedCell:
    pci: int
    rsrp_dbm: float
    freq_layer: int = 0
    rat: Rat = Rat.NR
    ecgi: Optional[int] = None
    # simulator ground truth, never visible to the network logic
    true_ecgi: Optional[int] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class MeasurementReport:
    ue_id: str
    time_s: float
    serving_pci: Optional[int]
    serving_rsrp_dbm: Optional[float]
    cells: tuple = ()
    serving_rat: Rat = Rat.NR
    serving_ecgi: Optional[int] = None
    inter_layer_measured: bool = True

    @property
    def gap_unavailable(self) -> bool:
        return not self.inter_layer_measured

    def cell(self, pci: int) -> Optional[ReportedCell]:
        for c in self.cells:
            if c.pci == pci:
                return c
        return None


@dataclass(frozen=True)
class MobilityEvent:
    kind: EventKind
    time_s: float
    target: Optional[ReportedCell] = None


# --------------------------------------------------------------------------
# measurement gaps


def gap_times(start_s: float, end_s: float, period_s: float) -> list:
    """Gap start instants ``k * period`` in the half-open window ``(start, end]``."""
    k0 = math.floor(start_s / period_s + _EPS) + 1
    out = []
    k = k0
    while k * period_s <= end_s + _EPS:
        out.append(k * period_s)
        k += 1
    return out


def gap_in_window(start_s: float, end_s: float, period_s: float) -> bool:
    return bool(gap_times(start_s, end_s, period_s))


def take_measurements(ue_id: str, time_s: float, rsrp_dbm: Sequence[float], cells: Sequence[CellRecord],
                      threshold_dbm: float, serving_idx: Optional[int] = None, mode: str = "connected",
                      radio: str = "single", gap_available: bool = False,
                      decoded_pcis: Iterable[int] = (), meas: Optional[MeasConfig] = None) -> MeasurementReport:
    """Build the report a UE would send at ``time_s``.

    Intra-layer cells are always measured. Inter-layer cells need a gap in
    this period unless the UE is idle or has a second radio. Cells sharing the
    serving PCI are invisible, and each PCI appears once with the power of its
    strongest transmitter. ``decoded_pcis`` lists PCIs whose global id the UE
    reads directly; those entries carry ``ecgi``.
    """
    if mode not in ("idle", "connected"):
        raise ValueError(f"unknown mode {mode!r}")
    if radio not in ("single", "dual"):
        raise ValueError(f"unknown radio {radio!r}")
    if mode == "connected" and serving_idx is None:
        raise ValueError("a connected UE needs a serving cell")
    rsrp_dbm = np.asarray(rsrp_dbm, dtype=float)
    serving = cells[serving_idx] if serving_idx is not None else None
    inter_ok = mode == "idle" or radio == "dual" or gap_available
    inter_layers = meas.inter_layers if meas is not None else None
    decoded = set(decoded_pcis)

    best = {}
    for i, c in enumerate(cells):
        if i == serving_idx or rsrp_dbm[i] < threshold_dbm:
            continue
        if serving is not None:
            if mode == "connected" and c.pci == serving.pci:
                continue
            if c.freq_layer != serving.freq_layer:
                if not inter_ok:
                    continue
                if inter_layers is not None and c.freq_layer not in inter_layers:
                    continue
        prev = best.get(c.pci)
        if prev is None or rsrp_dbm[i] > rsrp_dbm[prev] or (rsrp_dbm[i] == rsrp_dbm[prev] and c.ecgi < cells[prev].ecgi):
            best[c.pci] = i
    entries = []
    for pci, i in best.items():
        c = cells[i]
        entries.append(ReportedCell(pci, float(rsrp_dbm[i]), c.freq_layer, c.rat,
                                    ecgi=c.ecgi if pci in decoded else None, true_ecgi=c.ecgi))
    entries.sort(key=lambda e: (-e.rsrp_dbm, e.pci))
    has_inter = serving is None or inter_ok
    return MeasurementReport(
        ue_id=ue_id,
        time_s=time_s,
        serving_pci=serving.pci if serving else None,
        serving_rsrp_dbm=float(rsrp_dbm[serving_idx]) if serving is not None else None,
        cells=tuple(entries),
        serving_rat=serving.rat if serving else Rat.NR,
        serving_ecgi=serving.ecgi if serving else None,
        inter_layer_measured=has_inter,
    )


# --------------------------------------------------------------------------
# event conditions


def entering_conditions(report: MeasurementReport, cfg: EventConfig, secondary_pci: Optional[int] = None) -> list:
    """All ``(kind, pci_or_None, cell)`` whose entering condition holds now."""
    kinds = cfg.kinds
    hys = cfg.hysteresis_db
    ms = report.serving_rsrp_dbm
    out = []
    if ms is None:
        return out
    if EventKind.A1 in kinds and ms > cfg.a1_thresh_dbm + hys:
        out.append((EventKind.A1, None, None))
    if EventKind.A2 in kinds and ms < cfg.a2_thresh_dbm - hys:
        out.append((EventKind.A2, None, None))
    msec = None
    if secondary_pci is not None:
        sec = report.cell(secondary_pci)
        msec = sec.rsrp_dbm if sec is not None else None
    for c in report.cells:
        mn = c.rsrp_dbm
        if c.rat == report.serving_rat:
            if EventKind.A3 in kinds and mn > ms + cfg.a3_offset_db + hys:
                out.append((EventKind.A3, c.pci, c))
            if EventKind.A4 in kinds and mn > cfg.a4_thresh_dbm + hys:
                out.append((EventKind.A4, c.pci, c))
            if EventKind.A5 in kinds and ms < cfg.a5_thresh1_dbm - hys and mn > cfg.a5_thresh2_dbm + hys:
                out.append((EventKind.A5, c.pci, c))
            if (EventKind.A6 in kinds and msec is not None and c.pci != secondary_pci
                    and mn > msec + cfg.a6_offset_db + hys):
                out.append((EventKind.A6, c.pci, c))
        else:
            if EventKind.B1 in kinds and mn > cfg.b1_thresh_dbm + hys:
                out.append((EventKind.B1, c.pci, c))
            if EventKind.B2 in kinds and ms < cfg.b2_thresh1_dbm - hys and mn > cfg.b2_thresh2_dbm + hys:
                out.append((EventKind.B2, c.pci, c))
    return out


_KIND_ORDER = {k: i for i, k in enumerate(EventKind)}


class EventTracker:
    """Time-to-trigger bookkeeping for one UE.

    A condition that keeps holding for ``time_to_trigger_s`` fires once;
    it can fire again only after it has stopped holding (or after
    :meth:`reset_target`).
    """

    def __init__(self, cfg: EventConfig, secondary_pci: Optional[int] = None):
        if EventKind.A6 in cfg.kinds and secondary_pci is None:
            raise ValueError("event A6 needs a configured secondary cell")
        self.cfg = cfg
        self.secondary_pci = secondary_pci
        self._active: dict = {}  # (kind, pci) -> [start_time, fired]

    def reset(self):
        self._active.clear()

    def reset_target(self, kind: EventKind, pci: Optional[int]):
        self._active.pop((EventKind(kind), pci), None)

    def update(self, report: MeasurementReport, cfg: Optional[EventConfig] = None) -> list:
        if cfg is not None:
            self.cfg = cfg
        now = report.time_s
        holding = entering_conditions(report, self.cfg, self.secondary_pci)
        current = {}
        fired = []
        for kind, pci, cell in holding:
            key = (kind, pci)
            state = self._active.get(key) or [now, False]
            current[key] = state
            if not state[1] and now - state[0] >= self.cfg.time_to_trigger_s - _EPS:
                state[1] = True
                fired.append(MobilityEvent(kind, now, cell))
        self._active = current
        fired.sort(key=lambda e: (_KIND_ORDER[e.kind], -1 if e.target is None else e.target.pci))
        return fired


def evaluate_events(history: Sequence[MeasurementReport], cfg: EventConfig,
                    secondary_pci: Optional[int] = None) -> list:
    """Replay a time-ordered report history and return every fired event."""
    tracker = EventTracker(cfg, secondary_pci)
    out = []
    last = -math.inf
    for report in history:
        if report.time_s < last:
            raise ValueError("history must be time-ordered")
        last = report.time_s
        out.extend(tracker.update(report))
    return out


def with_a3_offset(cfg: EventConfig, offset_db: float) -> EventConfig:
    return cfg if cfg.a3_offset_db == offset_db else replace(cfg, a3_offset_db=offset_db)
