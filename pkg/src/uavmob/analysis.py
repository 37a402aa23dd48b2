"""Trace ingestion and the strongest-cell / handover metrics.

Trace format (CSV, header required)::

    timestamp_s,x_m,y_m,z_m,cells          (or timestamp_s,lon,lat,z_m,cells)
    0.1,10.0,20.0,30.0,7:-71.5;12:-80.25

``cells`` lists ``cell_id:rsrp_dbm`` pairs separated by ``;``. The sidecar
lists every cell position::

    cell_id,x_m,y_m,z_m                    (or cell_id,lon,lat,z_m)

Geographic inputs are projected to metres with an equirectangular
projection centred on the mean lon/lat of the trace rows.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .handover import HoAttempt, HoOutcome, detect_pingpong

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_008.8
N_BUCKETS = 5  # n = 1..4 plus a ">=5" bucket


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class TraceRow:
    timestamp_s: float
    x: float
    y: float
    z: float
    cells: tuple  # ((cell_id, rsrp_dbm), ...)

    def strongest(self) -> int:
        """Strongest cell id; ties go to the lowest id."""
        if not self.cells:
            raise TraceError(f"row at t={self.timestamp_s} has no measured cell")
        return min(self.cells, key=lambda c: (-c[1], c[0]))[0]


@dataclass
class ExternalTrace:
    rows: list
    cell_positions: dict  # cell_id -> (x, y, z)
    ue_id: str = ""

    def validate(self):
        last = -math.inf
        for i, r in enumerate(self.rows):
            if r.timestamp_s < last:
                raise TraceError(f"row {i}: timestamps must be non-decreasing")
            last = r.timestamp_s
            for cid, _ in r.cells:
                if cid not in self.cell_positions:
                    raise TraceError(f"row {i}: unknown cell id {cid}")
        return self


# --------------------------------------------------------------------------
# binning


def bin_of(z: float, bin_width: Optional[float]) -> float:
    """Exact altitude (simulated data) or the lower edge of a ``bin_width`` bin."""
    if bin_width is None:
        return z
    return math.floor(z / bin_width) * bin_width


def _as_list(traces) -> list:
    return [traces] if isinstance(traces, ExternalTrace) else list(traces)


def closeness_rank(row: TraceRow, cell_positions: Mapping, cell_id: int, use_2d: bool = False) -> int:
    """1-based rank of ``cell_id`` among all cells by distance (ties by id)."""
    def dist(p):
        if use_2d:
            return math.hypot(p[0] - row.x, p[1] - row.y)
        return math.dist(p, (row.x, row.y, row.z))

    target = (dist(cell_positions[cell_id]), cell_id)
    return 1 + sum(1 for cid, p in cell_positions.items() if (dist(p), cid) < target)


def nth_closest_strongest(traces, bin_width: Optional[float] = None, use_2d: bool = False) -> dict:
    """Per altitude bin, the fraction of samples whose strongest cell is the
    n-th closest cell. Each value is a list for n = 1, 2, 3, 4, >=5."""
    counts: dict = {}
    for tr in _as_list(traces):
        for r in tr.rows:
            s = r.strongest()
            if s not in tr.cell_positions:
                raise TraceError(f"unknown cell id {s}")
            n = min(closeness_rank(r, tr.cell_positions, s, use_2d), N_BUCKETS)
            row = counts.setdefault(bin_of(r.z, bin_width), [0] * N_BUCKETS)
            row[n - 1] += 1
    out = {}
    for b in sorted(counts):
        total = sum(counts[b])
        out[b] = [c / total for c in counts[b]]
    return out


def strongest_changes_per_minute(traces, bin_width: Optional[float] = None) -> dict:
    """Per altitude bin, changes of the strongest cell between consecutive
    samples divided by elapsed minutes.

    Elapsed time per trace and bin is ``t_last - t_first`` plus the median
    sample interval, so N samples at 1 Hz span N seconds. Bins with fewer
    than two samples are omitted with a warning.
    """
    changes: dict = {}
    seconds: dict = {}
    for tr in _as_list(traces):
        per_bin: dict = {}
        for r in tr.rows:
            per_bin.setdefault(bin_of(r.z, bin_width), []).append(r)
        for b, rows in per_bin.items():
            if len(rows) < 2:
                continue
            ids = [r.strongest() for r in rows]
            n = sum(1 for a, c in zip(ids, ids[1:]) if a != c)
            gaps = [q.timestamp_s - p.timestamp_s for p, q in zip(rows, rows[1:])]
            span = rows[-1].timestamp_s - rows[0].timestamp_s + statistics.median(gaps)
            changes[b] = changes.get(b, 0) + n
            seconds[b] = seconds.get(b, 0.0) + span
    out = {}
    for b in sorted(set(changes)):
        if seconds[b] <= 0:
            log.warning("altitude bin %s has zero elapsed time; omitted", b)
            continue
        out[b] = changes[b] / (seconds[b] / 60.0)
    return out


# --------------------------------------------------------------------------
# trace files


def _parse_cells(text: str, line: int) -> tuple:
    out = []
    text = text.strip()
    if not text:
        return ()
    for item in text.split(";"):
        try:
            cid, value = item.split(":")
            out.append((int(cid), float(value)))
        except ValueError:
            raise TraceError(f"line {line}: malformed cell entry {item!r}") from None
    return tuple(out)


def _project(lon: float, lat: float, lon0: float, lat0: float):
    x = EARTH_RADIUS_M * math.radians(lon - lon0) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_M * math.radians(lat - lat0)
    return x, y


def ingest_trace(path, cells_path) -> ExternalTrace:
    """Read and validate a trace plus its cell sidecar (see module docstring)."""
    path, cells_path = Path(path), Path(cells_path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceError(f"{path}: empty file")
        geo = header[:3] == ["timestamp_s", "lon", "lat"]
        if not geo and header[:3] != ["timestamp_s", "x_m", "y_m"] or header[3:] != ["z_m", "cells"]:
            raise TraceError(f"{path}: line 1: unexpected header {header}")
        raw = []
        for line, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 5:
                raise TraceError(f"{path}: line {line}: expected 5 fields, got {len(rec)}")
            try:
                t, a, b, z = (float(v) for v in rec[:4])
            except ValueError:
                raise TraceError(f"{path}: line {line}: non-numeric field") from None
            raw.append((line, t, a, b, z, _parse_cells(rec[4], line)))

    with cells_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        cells_geo = header is not None and header[1:3] == ["lon", "lat"]
        if header is None or header[0] != "cell_id" or (not cells_geo and header[1:] != ["x_m", "y_m", "z_m"]):
            raise TraceError(f"{cells_path}: line 1: unexpected header {header}")
        if cells_geo != geo:
            raise TraceError(f"{cells_path}: coordinate kind differs from the trace")
        cell_raw = {}
        for line, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                cell_raw[int(rec[0])] = tuple(float(v) for v in rec[1:4])
            except (ValueError, IndexError):
                raise TraceError(f"{cells_path}: line {line}: malformed cell row") from None

    if geo and raw:
        lon0 = statistics.fmean(r[2] for r in raw)
        lat0 = statistics.fmean(r[3] for r in raw)
        proj = lambda a, b: _project(a, b, lon0, lat0)  # noqa: E731
    else:
        proj = lambda a, b: (a, b)  # noqa: E731
    positions = {cid: (*proj(p[0], p[1]), p[2]) for cid, p in cell_raw.items()}
    rows = []
    last = -math.inf
    for line, t, a, b, z, cells in raw:
        if t < last:
            raise TraceError(f"{path}: line {line}: timestamp {t} goes backwards")
        last = t
        for cid, _ in cells:
            if cid not in positions:
                raise TraceError(f"{path}: line {line}: cell id {cid} has no position in {cells_path.name}")
        x, y = proj(a, b)
        rows.append(TraceRow(t, x, y, z, cells))
    return ExternalTrace(rows, positions, path.stem)


def write_external_trace(trace: ExternalTrace, path, cells_path) -> None:
    """Write ``trace`` in the ingestable format; floats are written exactly."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp_s", "x_m", "y_m", "z_m", "cells"])
        for r in trace.rows:
            cells = ";".join(f"{cid}:{v!r}" for cid, v in r.cells)
            w.writerow([repr(r.timestamp_s), repr(r.x), repr(r.y), repr(r.z), cells])
    with Path(cells_path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "x_m", "y_m", "z_m"])
        for cid in sorted(trace.cell_positions):
            w.writerow([cid, *(repr(v) for v in trace.cell_positions[cid])])


# --------------------------------------------------------------------------
# handover event log

EVENT_LOG_COLUMNS = [
    "record", "time_s", "ue_id", "ue_kind", "event", "outcome", "source_ecgi", "reported_pci",
    "prepared_ecgi", "true_ecgi", "target_ecgi", "cause", "interruption_s", "connected_s",
]
RECORDS = ("HO", "DROP", "SESSION")


def _opt_int(v: str) -> Optional[int]:
    return None if v in ("", None) else int(v)


def read_event_log(path) -> list:
    """Parse an event log CSV into dicts; errors name the line."""
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != EVENT_LOG_COLUMNS:
            raise TraceError(f"{path}: line 1: unexpected header {reader.fieldnames}")
        for line, rec in enumerate(reader, start=2):
            try:
                if rec["record"] not in RECORDS:
                    raise ValueError(f"unknown record type {rec['record']!r}")
                if None in rec.values() or None in rec:
                    raise ValueError("wrong number of fields")
                rows.append({
                    "record": rec["record"],
                    "time_s": float(rec["time_s"]),
                    "ue_id": rec["ue_id"],
                    "ue_kind": rec["ue_kind"],
                    "event": rec["event"],
                    "outcome": rec["outcome"],
                    "source_ecgi": _opt_int(rec["source_ecgi"]),
                    "reported_pci": _opt_int(rec["reported_pci"]),
                    "prepared_ecgi": _opt_int(rec["prepared_ecgi"]),
                    "true_ecgi": _opt_int(rec["true_ecgi"]),
                    "target_ecgi": _opt_int(rec["target_ecgi"]),
                    "cause": rec["cause"],
                    "interruption_s": float(rec["interruption_s"] or 0.0),
                    "connected_s": float(rec["connected_s"] or 0.0),
                })
            except (ValueError, TypeError) as exc:
                raise TraceError(f"{path}: line {line}: {exc}") from None
    return rows


def write_event_log(rows: Iterable[Mapping], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_LOG_COLUMNS)
        for r in rows:
            w.writerow(["" if r.get(c) is None else _fmt(r.get(c)) for c in EVENT_LOG_COLUMNS])


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def ho_summary(rows: Sequence[Mapping], t_pingpong_s: float = 2.0) -> dict:
    """Per UE kind: handovers/min over connected time, ping-pongs, failures by
    outcome, disconnects by cause, mean interruption. Plus the UAV:GUE
    handover-rate ratio (null when undefined)."""
    kinds: dict = {}

    def bucket(kind):
        return kinds.setdefault(kind, {
            "handovers": 0, "connected_s": 0.0, "pingpongs": 0, "failures": {},
            "disconnects": {}, "interruption_total_s": 0.0, "_ho": [],
        })

    for r in rows:
        b = bucket(r["ue_kind"])
        rec = r["record"]
        if rec == "SESSION":
            b["connected_s"] += r["connected_s"]
        elif rec == "DROP":
            b["disconnects"][r["cause"]] = b["disconnects"].get(r["cause"], 0) + 1
            b["interruption_total_s"] += r["interruption_s"]
        elif rec == "HO":
            if r["outcome"] == HoOutcome.SUCCESS.value:
                b["handovers"] += 1
                b["_ho"].append(HoAttempt(r["ue_id"], r["time_s"], r["source_ecgi"], r["reported_pci"],
                                          r["prepared_ecgi"], r["true_ecgi"], HoOutcome.SUCCESS,
                                          target_ecgi=r["target_ecgi"]))
            elif r["outcome"] != HoOutcome.CANCELLED.value:
                b["failures"][r["outcome"]] = b["failures"].get(r["outcome"], 0) + 1
        else:
            raise TraceError(f"unknown record {rec!r}")

    out = {}
    for kind in sorted(kinds):
        b = kinds.pop(kind)
        hos = sorted(b.pop("_ho"), key=lambda h: (h.ue_id, h.time_s))
        n_drop = sum(b["disconnects"].values())
        minutes = b["connected_s"] / 60.0
        out[kind] = {
            "handovers": b["handovers"],
            "connected_s": b["connected_s"],
            "handovers_per_min": b["handovers"] / minutes if minutes > 0 else 0.0,
            "pingpongs": detect_pingpong(hos, t_pingpong_s),
            "failures": dict(sorted(b["failures"].items())),
            "disconnects": n_drop,
            "disconnects_by_cause": dict(sorted(b["disconnects"].items())),
            "mean_interruption_s": b["interruption_total_s"] / n_drop if n_drop else 0.0,
        }
    uav = out.get("UAV", {}).get("handovers_per_min", 0.0)
    gue = out.get("GUE", {}).get("handovers_per_min", 0.0)
    return {
        "by_kind": out,
        "uav_gue_ratio": {
            "uav_handovers_per_min": uav,
            "gue_handovers_per_min": gue,
            "ratio": uav / gue if gue > 0 else None,
        },
    }


# --------------------------------------------------------------------------
# table writers


def _bin_label(b) -> str:
    return f"{b:g}"


def write_nth_closest_csv(hist: Mapping, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "n", "fraction"])
        for b in sorted(hist):
            for i, f in enumerate(hist[b]):
                w.writerow([_bin_label(b), str(i + 1) if i < N_BUCKETS - 1 else f">={N_BUCKETS}", repr(f)])


def write_changes_csv(rates: Mapping, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "rate"])
        for b in sorted(rates):
            w.writerow([_bin_label(b), repr(rates[b])])


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
