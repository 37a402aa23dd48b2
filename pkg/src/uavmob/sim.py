"""Fixed-timestep simulation loop, metrics and sweeps.

Each tick runs, for all UEs in sorted-id order, the phases: mobility, radio,
measurements, ANR, event evaluation, handover transitions and link
monitoring, metrics. Every random draw comes from one generator seeded with
the scenario seed, in that phase order.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import anr as anr_mod
from .analysis import (
    ExternalTrace,
    TraceRow,
    nth_closest_strongest,
    strongest_changes_per_minute,
    write_event_log,
    write_external_trace,
)
from .handover import (
    Connection,
    DropCause,
    HoOutcome,
    Reestablishing,
    Rlf,
    detect_pingpong,
    effective_a3_offset,
)
from .mobility import initial_kinematics, step_position
from .radio import los_probability_from_elevation, link_geometry, rsrp_vector, sinr_from_rsrp
from .rrm import EventKind, EventTracker, gap_in_window, take_measurements, with_a3_offset
from .scenario import ScenarioConfig, ScenarioError, parse_scenario, set_path, set_uav_altitude

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Sub-seed of run ``index``: ``splitmix64(seed ^ splitmix64(index))``."""
    return splitmix64((seed & MASK64) ^ splitmix64(index))


# --------------------------------------------------------------------------
# per-UE state


@dataclass
class _Ue:
    spec: object
    kin: object
    conn: Connection
    tracker: EventTracker
    gaps_on: bool = False
    decoded: set = field(default_factory=set)
    los: Optional[np.ndarray] = None
    shadow: Optional[np.ndarray] = None
    los_anchor: Optional[tuple] = None
    pending: list = field(default_factory=list)  # (done_at, owner, pci, result)
    rsrp: Optional[np.ndarray] = None
    connected_s: float = 0.0
    outage_s: float = 0.0
    ho_interruption_s: float = 0.0
    gap_interruption_s: float = 0.0
    attempts: list = field(default_factory=list)
    drops: list = field(default_factory=list)
    confusion_latent: int = 0


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    duration_s: float
    per_ue: dict
    by_kind: dict
    nrt_series: list
    block_list_events: list
    nth_closest: dict
    changes_per_min: dict
    tag: Optional[dict] = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["nth_closest"] = {f"{k:g}": v for k, v in self.nth_closest.items()}
        d["changes_per_min"] = {f"{k:g}": v for k, v in self.changes_per_min.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


@dataclass
class SimResult:
    metrics: MetricsReport
    event_log: list
    trace: list          # per-tick rows (see trace_csv)
    traces: list         # ExternalTrace per UAV, metrics-layer cells only
    nrts: dict

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_s", "ue_id", "x", "y", "z", "serving_ecgi", "strongest_ecgi", "ranked"])
        for r in self.trace:
            ranked = " ".join(f"{pci}:{v:.3f}" for pci, v in r[7])
            w.writerow([f"{r[0]:.3f}", r[1], f"{r[2]:.3f}", f"{r[3]:.3f}", f"{r[4]:.3f}",
                        "" if r[5] is None else r[5], "" if r[6] is None else r[6], ranked])
        return buf.getvalue()

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(self.metrics.to_json())
        write_event_log(self.event_log, out / "ho_events.csv")
        (out / "trace.csv").write_text(self.trace_csv())
        write_nrt_stats(self.metrics.nrt_series, out / "nrt_stats.csv")
        for tr in self.traces:
            write_external_trace(tr, out / f"measurements_{tr.ue_id}.csv", out / f"cells_{tr.ue_id}.csv")


def write_nrt_stats(series, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "owner_ecgi", "ground_size", "aerial_size", "block_listed"])
        for s in series:
            w.writerow([f"{s['time_s']:.3f}", s["owner"], s["ground_size"], s["aerial_size"], s["block_listed"]])


# --------------------------------------------------------------------------
# the loop


class Simulation:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed & MASK64)
        self.cells = cfg.topology.cells
        self.arrays = cfg.topology.arrays()
        self.index = {c.ecgi: i for i, c in enumerate(self.cells)}
        self.nrts = {c.ecgi: anr_mod.Nrt(c.ecgi, cfg.anr.max_size, cfg.anr.separate_aerial) for c in self.cells}
        for s in cfg.nrt_seed:
            nrt = self.nrts[s.owner]
            nrt.table(s.table)[s.ecgi] = anr_mod.NeighbourRelation(s.pci, s.ecgi)
        self.block_events: list = []
        self.nrt_series: list = []
        self.trace: list = []
        self.ext_rows: dict = {}
        self.ues: dict = {}
        for spec in sorted(cfg.ues, key=lambda u: u.id):
            kin = initial_kinematics(spec.mobility, self.rng)
            self.ues[spec.id] = _Ue(spec, kin, Connection(spec.id, spec.kind, cfg.ho, cfg.rlf),
                                    EventTracker(cfg.events[spec.kind], spec.secondary_pci))
        layer = cfg.metrics_layer
        self.metric_mask = np.array([layer is None or c.freq_layer == layer for c in self.cells], dtype=bool)
        self.report_every = max(1, int(round(cfg.meas.report_period_s / cfg.dt_s)))
        self.sweep_every = max(1, int(round(1.0 / cfg.dt_s)))
        self.sample_every = max(1, int(round(cfg.nrt_sample_s / cfg.dt_s)))

    # radio -----------------------------------------------------------------
    def _radio(self, ue: _Ue):
        p = self.cfg.propagation
        xyz = np.array([ue.kin.position.x, ue.kin.position.y, ue.kin.position.z])
        los = None
        shadow = None
        if p.los_mode == "drawn" or p.shadowing_sigma_db > 0:
            moved = ue.los_anchor is None or math.dist(ue.los_anchor, xyz) >= p.los_decorrelation_m
            if moved:
                ue.los_anchor = tuple(xyz)
                if p.los_mode == "drawn":
                    _, elev, _ = link_geometry(self.arrays, xyz)
                    prob = los_probability_from_elevation(elev, p.los_sigmoid_a, p.los_sigmoid_b)
                    ue.los = self.rng.random(len(self.cells)) < prob
                if p.shadowing_sigma_db > 0:
                    ue.shadow = self.rng.normal(0.0, p.shadowing_sigma_db, len(self.cells))
            los, shadow = ue.los, ue.shadow
        ue.rsrp = rsrp_vector(self.arrays, xyz, p, los, shadow)

    def _sinr(self, ue: _Ue) -> Optional[float]:
        serving = ue.conn.serving
        if serving is None or not ue.conn.is_connected:
            return None
        return sinr_from_rsrp(ue.rsrp, self.arrays.freq_layer, self.index[serving],
                              self.cfg.propagation.noise_power_dbm)

    def _best_cell(self, ue: _Ue) -> Optional[int]:
        # full search: every layer, no collision blindness; ties go to the first cell
        i = int(np.argmax(ue.rsrp))
        if ue.rsrp[i] < self.cfg.propagation.detection_threshold_dbm:
            return None
        return self.cells[i].ecgi

    # ANR helpers -----------------------------------------------------------
    def _commit(self, owner: int, pci: int, ecgi: int, now: float, kind: str, protected=()):
        nrt = self.nrts[owner]
        name = nrt.table_name(kind, self.cfg.anr)
        existed = ecgi in nrt.table(name)
        rel = anr_mod.commit_resolution(nrt, pci, ecgi, now, kind, self.cfg.anr, protected)
        if rel is not None and not existed and rel.block_listed:
            self.block_events.append({"time_s": now, "owner": owner, "table": name, "ecgi": ecgi})
        return rel

    def _attach(self, ue: _Ue, now: float, log: list):
        ecgi = self._best_cell(ue)
        if ecgi is None:
            return
        prev = ue.conn.state.previous if isinstance(ue.conn.state, Reestablishing) else None
        done = ue.conn.reattach(ecgi, now)
        ue.tracker.reset()
        ue.gaps_on = False
        if done is not None:
            ue.outage_s += done.interruption_s
            log.append(_drop_row(done, done.interruption_s))
            if self.cfg.anr.uses(anr_mod.AddMechanism.RECONNECT) and prev is not None:
                prev_cell = self.cells[self.index[prev]]
                if prev != ecgi:
                    self._commit(ecgi, prev_cell.pci, prev_cell.ecgi, now, ue.spec.kind)

    def run(self) -> SimResult:
        cfg = self.cfg
        log: list = []
        ues = [self.ues[k] for k in sorted(self.ues)]
        for ue in ues:
            self._radio(ue)
            self._attach(ue, 0.0, log)
        for k in range(1, cfg.n_ticks + 1):
            now = k * cfg.dt_s
            # (1) mobility
            for ue in ues:
                ue.kin = step_position(ue.kin, ue.spec.mobility, cfg.dt_s, self.rng)
            # (2) radio
            for ue in ues:
                self._radio(ue)
            # (3) measurements
            reports = {}
            if k % self.report_every == 0:
                for ue in ues:
                    st = ue.conn.state
                    if not ue.conn.is_connected or type(st).__name__ == "HoExec":
                        continue
                    gap = ue.gaps_on and gap_in_window(now - cfg.meas.report_period_s, now, cfg.meas.gap_period_s)
                    reports[ue.spec.id] = take_measurements(
                        ue.spec.id, now, ue.rsrp, self.cells, cfg.propagation.detection_threshold_dbm,
                        self.index[ue.conn.serving], "connected", ue.spec.radio, gap,
                        ue.decoded if cfg.anr.always_resolve_ecgi else (), cfg.meas)
            # (4) ANR
            for ue in ues:
                self._anr(ue, now, reports.get(ue.spec.id), log)
            if k % self.sweep_every == 0:
                for owner in sorted(self.nrts):
                    anr_mod.removal_sweep(self.nrts[owner], now, cfg.anr)
            # (5) events
            for ue in ues:
                rep = reports.get(ue.spec.id)
                if rep is None or not ue.conn.is_connected:
                    continue
                base = cfg.events[ue.spec.kind]
                off = effective_a3_offset(ue.spec.kind, ue.kin.position.z, base.a3_offset_db, cfg.ho.adaptive_a3)
                fired = ue.tracker.update(rep, with_a3_offset(base, off))
                nrt = self.nrts[ue.conn.serving]
                table = nrt.table_name(ue.spec.kind, cfg.anr)
                for ev in fired:
                    if ev.kind is EventKind.A2:
                        ue.gaps_on = True
                    elif ev.kind is EventKind.A1:
                        ue.gaps_on = False
                    att = ue.conn.on_mobility_event(ev, nrt, table, now, not cfg.anr.always_resolve_ecgi)
                    if att is not None:
                        ue.attempts.append(att)
                        log.append(_ho_row(att))
                        if att.outcome is HoOutcome.FAILURE_NO_NRT_ENTRY:
                            ue.tracker.reset_target(ev.kind, att.reported_pci)
                            anr_mod.request_ecgi(nrt, ue.spec.id, att.reported_pci, now) and self._start_decode(
                                ue, nrt, att.reported_pci, att.true_ecgi, now)
            # (6, 7) handover transitions and link monitoring
            for ue in ues:
                res = ue.conn.tick(now, self._sinr(ue))
                for att in res.attempts:
                    ue.attempts.append(att)
                    log.append(_ho_row(att))
                    if att.outcome is HoOutcome.SUCCESS:
                        ue.ho_interruption_s += att.interruption_s
                ue.drops.extend(res.drops)
                if res.serving_changed:
                    ue.tracker.reset()
                    ue.gaps_on = False
                if res.reattach_due:
                    self._attach(ue, now, log)
            # (8) metrics
            for ue in ues:
                if ue.conn.is_connected:
                    ue.connected_s += cfg.dt_s
                if k % cfg.trace_every == 0:
                    self._trace_row(ue, now)
            if k % self.sample_every == 0:
                for owner in sorted(self.nrts):
                    s = anr_mod.snapshot(self.nrts[owner], now)
                    self.nrt_series.append(dataclasses.asdict(s) | {"owner": owner})
        end = cfg.n_ticks * cfg.dt_s
        for ue in ues:
            st = ue.conn.state
            if isinstance(st, (Rlf, Reestablishing)) and st.drop is not None:
                log.append(_drop_row(st.drop, end - st.drop.since_s))
                ue.outage_s += end - st.drop.since_s
            log.append({"record": "SESSION", "time_s": end, "ue_id": ue.spec.id, "ue_kind": ue.spec.kind,
                        "connected_s": ue.connected_s, "interruption_s": 0.0})
        return self._finish(ues, log, end)

    def _start_decode(self, ue: _Ue, nrt, pci: int, true_ecgi: Optional[int], now: float):
        if true_ecgi is None:
            anr_mod.complete_request(nrt, ue.spec.id, pci)
            return
        result = anr_mod.resolve_ecgi(nrt, ue.spec.id, pci, true_ecgi, "connected", ue.spec.radio,
                                      ue.spec.data_activity, self.cfg.meas, self.rng,
                                      self.cfg.anr.p_drop_on_decode_fail)
        ue.pending.append((result.done_at, nrt.owner, pci, result))

    def _anr(self, ue: _Ue, now: float, report, log: list):
        cfg = self.cfg
        still = []
        for done_at, owner, pci, result in ue.pending:
            if done_at > now + 1e-9:
                still.append((done_at, owner, pci, result))
                continue
            anr_mod.complete_request(self.nrts[owner], ue.spec.id, pci)
            ue.gap_interruption_s += result.interruption_s
            if isinstance(result, anr_mod.Resolved):
                ue.decoded.add(pci)
                self._commit(owner, pci, result.ecgi, now, ue.spec.kind)
            elif result.dropped:
                res = ue.conn.force_drop(now, DropCause.DECODE_FAIL)
                for att in res.attempts:
                    ue.attempts.append(att)
                    log.append(_ho_row(att))
                ue.drops.extend(res.drops)
        ue.pending = still
        if report is None or not ue.conn.is_connected:
            return
        nrt = self.nrts[ue.conn.serving]
        for action in anr_mod.on_report(nrt, report, ue.spec.kind, cfg.anr):
            if isinstance(action, anr_mod.RequestEcgi):
                if cfg.anr.uses(anr_mod.AddMechanism.MEASUREMENT) or cfg.anr.always_resolve_ecgi:
                    cell = report.cell(action.pci)
                    if anr_mod.request_ecgi(nrt, ue.spec.id, action.pci, now):
                        self._start_decode(ue, nrt, action.pci, cell.true_ecgi, now)
            elif isinstance(action, anr_mod.ConfusionLatent):
                ue.confusion_latent += 1
        if cfg.anr.uses(anr_mod.AddMechanism.UPLINK_ID):
            serving = self.cells[self.index[ue.conn.serving]]
            for i, cell in enumerate(self.cells):
                if cell.ecgi != serving.ecgi and ue.rsrp[i] >= cfg.anr.ulid_threshold_dbm:
                    self._commit(cell.ecgi, serving.pci, serving.ecgi, now, ue.spec.kind)

    def _trace_row(self, ue: _Ue, now: float):
        thr = self.cfg.propagation.detection_threshold_dbm
        r = ue.rsrp
        detect = np.flatnonzero(r >= thr)
        ranked = sorted(((self.cells[i].pci, float(r[i]), self.cells[i].ecgi) for i in detect),
                        key=lambda t: (-t[1], t[2]))
        metric = [(self.cells[i].ecgi, float(r[i])) for i in detect if self.metric_mask[i]]
        strongest = min(metric, key=lambda c: (-c[1], c[0]))[0] if metric else None
        p = ue.kin.position
        self.trace.append((now, ue.spec.id, p.x, p.y, p.z, ue.conn.serving if ue.conn.is_connected else None,
                           strongest, [(pci, v) for pci, v, _ in ranked]))
        if ue.spec.kind == "UAV" and metric:
            self.ext_rows.setdefault(ue.spec.id, []).append(TraceRow(now, p.x, p.y, p.z, tuple(metric)))

    def _finish(self, ues, log, end) -> SimResult:
        cfg = self.cfg
        per_ue = {}
        for ue in ues:
            outcomes: dict = {}
            for a in ue.attempts:
                if a.outcome not in (HoOutcome.SUCCESS, HoOutcome.CANCELLED):
                    outcomes[a.outcome.value] = outcomes.get(a.outcome.value, 0) + 1
            causes: dict = {}
            for d in ue.drops:
                causes[d.cause.value] = causes.get(d.cause.value, 0) + 1
            hos = [a for a in ue.attempts if a.outcome is HoOutcome.SUCCESS]
            per_ue[ue.spec.id] = {
                "kind": ue.spec.kind,
                "handovers": len(hos),
                "handovers_per_min": len(hos) / (ue.connected_s / 60.0) if ue.connected_s > 0 else 0.0,
                "pingpongs": detect_pingpong(hos, cfg.ho.t_pingpong_s),
                "failures": dict(sorted(outcomes.items())),
                "disconnects": len(ue.drops),
                "disconnects_by_cause": dict(sorted(causes.items())),
                "interruption_s": ue.outage_s,
                "ho_interruption_s": ue.ho_interruption_s,
                "gap_interruption_s": ue.gap_interruption_s,
                "connected_s": ue.connected_s,
                "confusion_latent": ue.confusion_latent,
            }
        by_kind = {}
        for kind in sorted({u["kind"] for u in per_ue.values()}):
            rows = [u for u in per_ue.values() if u["kind"] == kind]
            agg = {key: sum(u[key] for u in rows) for key in
                   ("handovers", "pingpongs", "disconnects", "interruption_s", "ho_interruption_s",
                    "gap_interruption_s", "connected_s", "confusion_latent")}
            for key in ("failures", "disconnects_by_cause"):
                merged: dict = {}
                for u in rows:
                    for c, n in u[key].items():
                        merged[c] = merged.get(c, 0) + n
                agg[key] = dict(sorted(merged.items()))
            agg["handovers_per_min"] = agg["handovers"] / (agg["connected_s"] / 60.0) if agg["connected_s"] > 0 else 0.0
            by_kind[kind] = agg
        traces = self.external_traces()
        metrics = MetricsReport(
            scenario=cfg.name, seed=cfg.seed, duration_s=end, per_ue=per_ue, by_kind=by_kind,
            nrt_series=self.nrt_series, block_list_events=self.block_events,
            nth_closest=nth_closest_strongest(traces) if traces else {},
            changes_per_min=strongest_changes_per_minute(traces) if traces else {},
        )
        return SimResult(metrics, log, self.trace, traces, self.nrts)

    def external_traces(self) -> list:
        positions = {c.ecgi: (c.position.x, c.position.y, c.position.z)
                     for c, m in zip(self.cells, self.metric_mask) if m}
        return [ExternalTrace(self.ext_rows[u], positions, u) for u in sorted(self.ext_rows)]


def _ho_row(a) -> dict:
    return {"record": "HO", "time_s": a.time_s, "ue_id": a.ue_id, "ue_kind": a.ue_kind, "event": a.event,
            "outcome": a.outcome.value, "source_ecgi": a.source_ecgi, "reported_pci": a.reported_pci,
            "prepared_ecgi": a.prepared_ecgi, "true_ecgi": a.true_ecgi, "target_ecgi": a.target_ecgi,
            "interruption_s": a.interruption_s}


def _drop_row(d, interruption) -> dict:
    return {"record": "DROP", "time_s": d.dropped_at_s, "ue_id": d.ue_id, "ue_kind": d.ue_kind,
            "cause": d.cause.value, "source_ecgi": d.cell_ecgi, "target_ecgi": d.reattach_ecgi,
            "interruption_s": interruption}


def run(cfg: ScenarioConfig) -> SimResult:
    return Simulation(cfg).run()


# --------------------------------------------------------------------------
# sweeps


def sweep_configs(base_raw: dict, axis: str, values: Sequence) -> list:
    """Raw scenario dicts for each axis value with derived sub-seeds."""
    out = []
    for i, v in enumerate(values):
        raw = set_uav_altitude(base_raw, v) if axis == "altitude" else set_path(base_raw, axis, v)
        raw["seed"] = derive_seed(int(base_raw["seed"]), i)
        out.append(raw)
    return out


@dataclass
class SweepItem:
    value: object
    seed: int
    result: Optional[SimResult] = None
    error: Optional[str] = None


def _run_raw(raw: dict):
    try:
        res = run(parse_scenario(raw))
    except (ScenarioError, ValueError, KeyError, RuntimeError) as exc:
        return None, f"{type(exc).__name__}: {exc}"
    return res, None


def run_sweep(base_raw: dict, axis: str, values: Sequence, workers: int = 1) -> list:
    """Independent runs over ``values``; a failing run records its error and
    the others continue. Results follow axis order regardless of ``workers``."""
    raws = sweep_configs(base_raw, axis, values)
    if workers > 1 and len(raws) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_raw, raws))
    else:
        outcomes = [_run_raw(r) for r in raws]
    items = []
    for v, raw, (res, err) in zip(values, raws, outcomes):
        if res is not None:
            res.metrics.tag = {"axis": axis, "value": v}
        items.append(SweepItem(v, raw["seed"], res, err))
    return items
