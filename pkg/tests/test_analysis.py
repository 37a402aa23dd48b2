import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_changes, brute_force_nth_closest
from uavmob.analysis import (
    EARTH_RADIUS_M,
    EVENT_LOG_COLUMNS,
    ExternalTrace,
    TraceError,
    TraceRow,
    bin_of,
    ho_summary,
    ingest_trace,
    nth_closest_strongest,
    read_event_log,
    strongest_changes_per_minute,
    write_event_log,
    write_external_trace,
    write_nth_closest_csv,
)

CELLS = {1: (0.0, 0.0, 10.0), 2: (100.0, 0.0, 10.0), 3: (300.0, 0.0, 10.0)}


def trace_of(ids, z=30.0, dt=1.0, x=10.0):
    rows = [TraceRow(i * dt, x, 0.0, z, ((cid, -70.0), (3, -90.0)) if cid != 3 else ((3, -70.0),))
            for i, cid in enumerate(ids)]
    return ExternalTrace(rows, dict(CELLS), "t")


def random_trace(rng, n_cells=6, n_rows=None, bins=(30.0, 60.0, 90.0, 120.0)):
    cells = {int(c): tuple(float(v) for v in rng.uniform(0, 1000, 3)) for c in rng.choice(50, n_cells, replace=False)}
    ids = list(cells)
    rows = []
    t = 0.0
    for _ in range(n_rows or int(rng.integers(2, 120))):
        t += float(rng.choice([0.5, 1.0, 1.5]))
        heard = rng.choice(ids, int(rng.integers(1, len(ids) + 1)), replace=False)
        # 1 dB grid so equal-power ties happen
        rows.append(TraceRow(t, float(rng.uniform(0, 1000)), float(rng.uniform(0, 1000)),
                             float(rng.choice(bins)),
                             tuple((int(c), float(np.round(rng.uniform(-110, -60)))) for c in heard)))
    return ExternalTrace(rows, cells, "r")


# nth-closest --------------------------------------------------------------


def test_strongest_always_closest():
    hist = nth_closest_strongest(trace_of([1] * 10))
    assert hist == {30.0: [1.0, 0.0, 0.0, 0.0, 0.0]}


def test_stronger_far_cell_is_second():
    rows = [TraceRow(float(i), 10.0, 0.0, 30.0, ((1, -90.0), (2, -80.0))) for i in range(5)]
    assert nth_closest_strongest(ExternalTrace(rows, {1: CELLS[1], 2: CELLS[2]}))[30.0] == [0, 1.0, 0, 0, 0]


def test_ties_broken_by_id():
    # equidistant cells 1 and 2, equal power: cell 1 strongest and closest
    rows = [TraceRow(0.0, 50.0, 0.0, 10.0, ((2, -80.0), (1, -80.0)))]
    assert nth_closest_strongest(ExternalTrace(rows, {1: CELLS[1], 2: CELLS[2]}))[10.0][0] == 1.0


def test_bucket_five_or_more():
    cells = {i: (float(10 * i), 0.0, 0.0) for i in range(1, 8)}
    rows = [TraceRow(0.0, 0.0, 0.0, 0.0, ((6, -60.0), (1, -90.0))), TraceRow(1.0, 0.0, 0.0, 0.0, ((7, -60.0),))]
    assert nth_closest_strongest(ExternalTrace(rows, cells))[0.0] == [0, 0, 0, 0, 1.0]


def test_unknown_strongest_rejected():
    rows = [TraceRow(0.0, 0.0, 0.0, 0.0, ((9, -60.0),))]
    with pytest.raises(TraceError):
        nth_closest_strongest(ExternalTrace(rows, dict(CELLS)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_histogram_rows_sum_to_one(seed):
    tr = random_trace(np.random.default_rng(seed))
    for b, fr in nth_closest_strongest(tr, bin_width=15.0).items():
        assert all(0.0 <= f <= 1.0 for f in fr)
        assert sum(fr) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_histogram_matches_brute_force(seed, flat):
    tr = random_trace(np.random.default_rng(seed))
    assert nth_closest_strongest(tr, use_2d=flat) == brute_force_nth_closest([tr], use_2d=flat)


def test_bins():
    assert bin_of(44.9, 15.0) == 30.0
    assert bin_of(45.0, 15.0) == 45.0
    assert bin_of(44.9, None) == 44.9


# changes per minute --------------------------------------------------------


def test_constant_strongest_zero_rate():
    assert strongest_changes_per_minute(trace_of([1] * 20)) == {30.0: 0.0}


def test_alternating_sixty_rows():
    rates = strongest_changes_per_minute(trace_of([1, 2] * 30))
    assert rates == {30.0: pytest.approx(59.0)}


def test_single_row_bin_omitted():
    assert strongest_changes_per_minute(trace_of([1])) == {}


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_downsampling_never_adds_changes(seed):
    tr = random_trace(np.random.default_rng(seed), bins=(30.0,))
    half = ExternalTrace(tr.rows[::2], tr.cell_positions)
    full = brute_force_changes([tr])
    sub = brute_force_changes([half])
    for b, (count, _) in sub.items():
        assert count <= full[b][0]
    # the package's rate, times its elapsed minutes, is the same count
    rates = strongest_changes_per_minute(half)
    for b, (count, secs) in sub.items():
        assert rates[b] * secs / 60.0 == pytest.approx(count)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_changes_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    traces = [random_trace(rng) for _ in range(3)]
    expected = {b: c / (s / 60.0) for b, (c, s) in brute_force_changes(traces).items()}
    assert strongest_changes_per_minute(traces) == expected


# ingestion ---------------------------------------------------------------


def write(path, text):
    path.write_text(text)
    return path


def test_ingest_three_rows(tmp_path):
    tr = write(tmp_path / "t.csv", "timestamp_s,x_m,y_m,z_m,cells\n0,0,0,30,1:-70\n1,5,0,30,1:-71;2:-80\n2,10,0,30,2:-75\n")
    cells = write(tmp_path / "c.csv", "cell_id,x_m,y_m,z_m\n1,0,0,10\n2,100,0,10\n")
    trace = ingest_trace(tr, cells)
    assert len(trace.rows) == 3
    assert trace.rows[1].cells == ((1, -71.0), (2, -80.0))


def test_ingest_unknown_cell_names_id_and_line(tmp_path):
    tr = write(tmp_path / "t.csv", "timestamp_s,x_m,y_m,z_m,cells\n0,0,0,30,1:-70\n1,0,0,30,7:-70\n")
    cells = write(tmp_path / "c.csv", "cell_id,x_m,y_m,z_m\n1,0,0,10\n")
    with pytest.raises(TraceError, match=r"line 3.*cell id 7"):
        ingest_trace(tr, cells)


def test_ingest_backwards_time(tmp_path):
    tr = write(tmp_path / "t.csv", "timestamp_s,x_m,y_m,z_m,cells\n5,0,0,30,1:-70\n4,0,0,30,1:-70\n")
    cells = write(tmp_path / "c.csv", "cell_id,x_m,y_m,z_m\n1,0,0,10\n")
    with pytest.raises(TraceError, match="line 3"):
        ingest_trace(tr, cells)


@pytest.mark.parametrize("row", ["0,0,0,30", "0,a,0,30,1:-70", "0,0,0,30,1-70"])
def test_ingest_malformed(tmp_path, row):
    tr = write(tmp_path / "t.csv", f"timestamp_s,x_m,y_m,z_m,cells\n{row}\n")
    cells = write(tmp_path / "c.csv", "cell_id,x_m,y_m,z_m\n1,0,0,10\n")
    with pytest.raises(TraceError, match="line 2"):
        ingest_trace(tr, cells)


def test_ingest_bad_header(tmp_path):
    tr = write(tmp_path / "t.csv", "time,x,y,z,cells\n")
    cells = write(tmp_path / "c.csv", "cell_id,x_m,y_m,z_m\n")
    with pytest.raises(TraceError, match="line 1"):
        ingest_trace(tr, cells)


def test_ingest_lonlat_projection(tmp_path):
    # two rows symmetric about (lon0, lat0) = (-6.25, 53.35)
    tr = write(tmp_path / "t.csv",
               "timestamp_s,lon,lat,z_m,cells\n0,-6.26,53.34,30,1:-70\n1,-6.24,53.36,30,1:-70\n")
    cells = write(tmp_path / "c.csv", "cell_id,lon,lat,z_m\n1,-6.25,53.35,25\n")
    trace = ingest_trace(tr, cells)
    dx = EARTH_RADIUS_M * math.radians(0.01) * math.cos(math.radians(53.35))
    dy = EARTH_RADIUS_M * math.radians(0.01)
    assert trace.rows[0].x == pytest.approx(-dx) and trace.rows[0].y == pytest.approx(-dy)
    assert trace.rows[1].x == pytest.approx(dx) and trace.rows[1].y == pytest.approx(dy)
    assert trace.cell_positions[1] == pytest.approx((0.0, 0.0, 25.0), abs=1e-6)


def test_ingest_mixed_coordinates_rejected(tmp_path):
    tr = write(tmp_path / "t.csv", "timestamp_s,lon,lat,z_m,cells\n0,-6.26,53.34,30,1:-70\n")
    cells = write(tmp_path / "c.csv", "cell_id,x_m,y_m,z_m\n1,0,0,10\n")
    with pytest.raises(TraceError):
        ingest_trace(tr, cells)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_trace_round_trip(tmp_path_factory, seed):
    d = tmp_path_factory.mktemp("rt")
    tr = random_trace(np.random.default_rng(seed))
    write_external_trace(tr, d / "t.csv", d / "c.csv")
    back = ingest_trace(d / "t.csv", d / "c.csv")
    assert back.rows == tr.rows and back.cell_positions == tr.cell_positions
    assert nth_closest_strongest(back) == nth_closest_strongest(tr)
    assert strongest_changes_per_minute(back) == strongest_changes_per_minute(tr)


def test_nth_closest_csv(tmp_path):
    write_nth_closest_csv({30.0: [0.5, 0.25, 0.25, 0.0, 0.0]}, tmp_path / "n.csv")
    lines = (tmp_path / "n.csv").read_text().splitlines()
    assert lines[0] == "bin,n,fraction" and lines[1] == "30,1,0.5" and lines[5] == "30,>=5,0.0"


# event log ---------------------------------------------------------------


def session(kind, ue, minutes):
    return {"record": "SESSION", "time_s": 600.0, "ue_id": ue, "ue_kind": kind, "connected_s": 60.0 * minutes}


def hos(kind, ue, n, start=0.0, step=30.0):
    return [{"record": "HO", "time_s": start + i * step, "ue_id": ue, "ue_kind": kind, "event": "A3",
             "outcome": "Success", "source_ecgi": i % 2 + 1, "reported_pci": 0, "prepared_ecgi": (i + 1) % 2 + 1,
             "true_ecgi": (i + 1) % 2 + 1, "target_ecgi": (i + 1) % 2 + 1} for i in range(n)]


def test_empty_log_ratio_null():
    s = ho_summary([])
    assert s["by_kind"] == {}
    assert s["uav_gue_ratio"] == {"uav_handovers_per_min": 0.0, "gue_handovers_per_min": 0.0, "ratio": None}


def test_ratio_five():
    rows = hos("UAV", "u", 10) + [session("UAV", "u", 10)] + hos("GUE", "g", 2) + [session("GUE", "g", 10)]
    s = ho_summary(rows)
    assert s["uav_gue_ratio"]["ratio"] == pytest.approx(5.0)
    assert s["by_kind"]["UAV"]["handovers_per_min"] == pytest.approx(1.0)


def test_pingpongs_counted():
    rows = hos("UAV", "u", 3, step=1.0) + [session("UAV", "u", 1)]
    assert ho_summary(rows, 2.0)["by_kind"]["UAV"]["pingpongs"] == 2


def test_log_round_trip_and_recount(tmp_path):
    rng = np.random.default_rng(4)
    rows = []
    for kind, ue in (("UAV", "u1"), ("GUE", "g1"), ("GUE", "g2")):
        t = 0.0
        for _ in range(int(rng.integers(5, 40))):
            t += float(rng.uniform(1, 20))
            outcome = str(rng.choice(["Success", "Success", "FailureConfusion", "FailureNoNrtEntry", "Cancelled"]))
            rows.append({"record": "HO", "time_s": t, "ue_id": ue, "ue_kind": kind, "event": "A3",
                         "outcome": outcome, "source_ecgi": 1, "reported_pci": 5, "prepared_ecgi": 2,
                         "true_ecgi": 2, "target_ecgi": 2 if outcome == "Success" else None,
                         "interruption_s": 0.03})
            if rng.random() < 0.1:
                rows.append({"record": "DROP", "time_s": t, "ue_id": ue, "ue_kind": kind, "cause": "rlf",
                             "source_ecgi": 1, "target_ecgi": 2, "interruption_s": 2.0})
        rows.append(session(kind, ue, float(rng.uniform(5, 15))))
    path = tmp_path / "ho_events.csv"
    write_event_log(rows, path)
    parsed = read_event_log(path)
    summary = ho_summary(parsed)

    # independent recount straight from the CSV text
    counts = {}
    with path.open() as fh:
        for rec in csv.DictReader(fh):
            c = counts.setdefault(rec["ue_kind"], {"ho": 0, "fail": 0, "drop": 0, "conn": 0.0})
            if rec["record"] == "HO" and rec["outcome"] == "Success":
                c["ho"] += 1
            elif rec["record"] == "HO" and rec["outcome"] != "Cancelled":
                c["fail"] += 1
            elif rec["record"] == "DROP":
                c["drop"] += 1
            elif rec["record"] == "SESSION":
                c["conn"] += float(rec["connected_s"])
    for kind, c in counts.items():
        got = summary["by_kind"][kind]
        assert got["handovers"] == c["ho"]
        assert sum(got["failures"].values()) == c["fail"]
        assert got["disconnects"] == c["drop"]
        assert got["connected_s"] == pytest.approx(c["conn"])
        assert got["handovers_per_min"] == pytest.approx(c["ho"] / (c["conn"] / 60.0))


def test_malformed_log_row_number(tmp_path):
    path = tmp_path / "bad.csv"
    good = ["HO", "1.0", "u", "UAV", "A3", "Success", "1", "5", "2", "2", "2", "", "0.03", ""]
    bad = ["HO", "oops", "u", "UAV", "A3", "Success", "1", "5", "2", "2", "2", "", "0.03", ""]
    path.write_text(",".join(EVENT_LOG_COLUMNS) + "\n" + ",".join(good) + "\n" + ",".join(bad) + "\n")
    with pytest.raises(TraceError, match="line 3"):
        read_event_log(path)
    path.write_text(",".join(EVENT_LOG_COLUMNS) + "\nXX" + ",".join(good)[2:] + "\n")
    with pytest.raises(TraceError, match="line 2"):
        read_event_log(path)
