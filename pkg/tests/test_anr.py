import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uavmob.anr import (
    AERIAL,
    GROUND,
    AnrPolicy,
    ConfusionLatent,
    Failed,
    Known,
    NeighbourRelation,
    Nrt,
    RequestEcgi,
    Resolved,
    commit_resolution,
    complete_request,
    on_report,
    reconnect_add,
    removal_sweep,
    request_ecgi,
    resolve_ecgi,
    snapshot,
    ulid_add,
)
from uavmob.radio import Position
from uavmob.rrm import MeasConfig, MeasurementReport, ReportedCell
from uavmob.topology import CellRecord, Tier

POLICY = AnrPolicy()
MEAS = MeasConfig()


def rep(owner, cells, t=0.0):
    return MeasurementReport("ue", t, 1, -80.0, tuple(cells), serving_ecgi=owner)


def cell(ecgi, pci):
    return CellRecord(ecgi, pci, Tier.SMALL, Position(0, 0, 10))


# on_report ---------------------------------------------------------------


def test_empty_table_requests_ecgi():
    assert on_report(Nrt(10), rep(10, [ReportedCell(7, -90.0)]), "UAV", POLICY) == [RequestEcgi(7)]


def test_known_relation_with_latent_confusion():
    nrt = Nrt(10)
    nrt.ground[1] = NeighbourRelation(7, 1)
    actions = on_report(nrt, rep(10, [ReportedCell(7, -90.0, true_ecgi=23)], t=5.0), "UAV", POLICY)
    assert actions == [Known(7, 1), ConfusionLatent(7, 1, 23)]
    assert nrt.ground[1].last_reported == 5.0


def test_always_resolve_requests_until_confirmed():
    policy = AnrPolicy(always_resolve_ecgi=True)
    nrt = Nrt(10)
    nrt.ground[1] = NeighbourRelation(7, 1)
    assert on_report(nrt, rep(10, [ReportedCell(7, -90.0, true_ecgi=23)]), "UAV", policy) == [RequestEcgi(7)]
    assert request_ecgi(nrt, "ue", 7, 0.0)
    res = resolve_ecgi(nrt, "ue", 7, 23, "connected", "dual", 1.0, MEAS, np.random.default_rng(0))
    assert isinstance(res, Resolved) and res.ecgi == 23
    commit_resolution(nrt, 7, res.ecgi, res.done_at, "UAV", policy)
    decoded = ReportedCell(7, -90.0, ecgi=23, true_ecgi=23)
    actions = on_report(nrt, rep(10, [decoded]), "UAV", policy)
    assert actions == [Known(7, 23)]


def test_report_from_other_cell_rejected():
    with pytest.raises(ValueError):
        on_report(Nrt(10), rep(11, []), "UAV", POLICY)


# decoding ----------------------------------------------------------------


def test_dual_radio_resolves_without_interruption():
    for activity in (0.0, 0.5, 1.0):
        nrt = Nrt(10)
        request_ecgi(nrt, "ue", 7, 0.0)
        res = resolve_ecgi(nrt, "ue", 7, 23, "connected", "dual", activity, MEAS, np.random.default_rng(1))
        assert isinstance(res, Resolved) and res.interruption_s == 0.0


def test_idle_single_radio_free():
    nrt = Nrt(10)
    request_ecgi(nrt, "ue", 7, 0.0)
    res = resolve_ecgi(nrt, "ue", 7, 23, "idle", "single", 1.0, MEAS, np.random.default_rng(1))
    assert isinstance(res, Resolved) and res.interruption_s == 0.0


def test_zero_activity_resolves_within_required_gaps():
    nrt = Nrt(10)
    request_ecgi(nrt, "ue", 7, 0.0)
    res = resolve_ecgi(nrt, "ue", 7, 23, "connected", "single", 0.0, MEAS, np.random.default_rng(1))
    assert isinstance(res, Resolved)
    # two gaps at 0.48 and 0.96 s, each 40 ms of lost data
    assert res.done_at == pytest.approx(0.96 + 0.04)
    assert res.interruption_s == pytest.approx(0.08)


def test_busy_single_radio_fails_at_deadline():
    nrt = Nrt(10)
    request_ecgi(nrt, "ue", 7, 0.0)
    res = resolve_ecgi(nrt, "ue", 7, 23, "connected", "single", 1.0, MEAS, np.random.default_rng(1))
    assert isinstance(res, Failed)
    assert res.done_at == pytest.approx(MEAS.decode_deadline_reports * MEAS.report_period_s)


def test_failed_decode_drop_probability():
    drops = 0
    rng = np.random.default_rng(5)
    for _ in range(2000):
        nrt = Nrt(10)
        request_ecgi(nrt, "ue", 7, 0.0)
        drops += resolve_ecgi(nrt, "ue", 7, 23, "connected", "single", 1.0, MEAS, rng, 0.2).dropped
    assert 0.17 < drops / 2000 < 0.23


def test_resolve_needs_pending():
    with pytest.raises(KeyError):
        resolve_ecgi(Nrt(10), "ue", 7, 23, "connected", "dual", 0.0, MEAS, np.random.default_rng(0))


def test_duplicate_request_refused():
    nrt = Nrt(10)
    assert request_ecgi(nrt, "ue", 7, 0.0)
    assert not request_ecgi(nrt, "ue", 7, 0.1)
    complete_request(nrt, "ue", 7)
    assert request_ecgi(nrt, "ue", 7, 0.2)


# tables ------------------------------------------------------------------


def test_commit_into_empty_table():
    nrt = Nrt(10)
    commit_resolution(nrt, 7, 1, 0.0, "GUE", POLICY)
    assert list(nrt.ground) == [1]


def test_full_table_evicts_stalest():
    nrt = Nrt(10, max_size=3)
    for i, t in zip((1, 2, 3), (5.0, 1.0, 3.0)):
        commit_resolution(nrt, i, i, t, "GUE", POLICY)
    commit_resolution(nrt, 4, 4, 6.0, "GUE", POLICY)
    assert sorted(nrt.ground) == [1, 3, 4]


def test_eviction_spares_protected():
    nrt = Nrt(10, max_size=2)
    commit_resolution(nrt, 1, 1, 0.0, "GUE", POLICY)
    commit_resolution(nrt, 2, 2, 1.0, "GUE", POLICY)
    commit_resolution(nrt, 3, 3, 2.0, "GUE", POLICY, protected={1})
    assert sorted(nrt.ground) == [1, 3]


def test_self_relation_ignored():
    nrt = Nrt(10)
    assert commit_resolution(nrt, 7, 10, 0.0, "GUE", POLICY) is None
    assert nrt.ground == {}


def test_separate_aerial_keeps_ground_untouched():
    policy = AnrPolicy(separate_aerial=True)
    nrt = Nrt(10, separate_aerial=True)
    commit_resolution(nrt, 7, 1, 0.0, "UAV", policy)
    assert nrt.ground == {} and list(nrt.aerial) == [1]
    commit_resolution(nrt, 8, 2, 0.0, "GUE", policy)
    assert list(nrt.ground) == [2] and list(nrt.aerial) == [1]
    assert nrt.table_name("UAV", policy) == AERIAL
    assert nrt.table_name("GUE", policy) == GROUND


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["UAV", "GUE"]), st.integers(1, 40)), max_size=200),
       st.integers(1, 8))
def test_tables_bounded_and_separated(ops, size):
    policy = AnrPolicy(separate_aerial=True, max_size=size)
    nrt = Nrt(0, max_size=size, separate_aerial=True)
    for t, (kind, ecgi) in enumerate(ops):
        ground_before, aerial_before = dict(nrt.ground), dict(nrt.aerial)
        commit_resolution(nrt, ecgi, ecgi, float(t), kind, policy)
        assert len(nrt.ground) <= size and len(nrt.aerial) <= size
        if kind == "GUE":
            assert nrt.aerial.keys() == aerial_before.keys()
        else:
            assert nrt.ground.keys() == ground_before.keys()


def test_removal_sweep_removes_stale():
    policy = AnrPolicy(t_remove_s=10.0)
    nrt = Nrt(10)
    commit_resolution(nrt, 7, 1, 0.0, "GUE", policy)
    assert removal_sweep(nrt, 10.0, policy).removed == ()
    res = removal_sweep(nrt, 20.0, policy)
    assert res.removed == ((GROUND, 1),) and nrt.ground == {}


def test_block_listing_threshold():
    policy = AnrPolicy(t_remove_s=10.0, r_block=3, w_block_s=1000.0)
    nrt = Nrt(10)
    t = 0.0
    for k in range(2):
        commit_resolution(nrt, 7, 1, t, "UAV", policy)
        t += 11.0
        removal_sweep(nrt, t, policy)
    rel = commit_resolution(nrt, 7, 1, t, "UAV", policy)
    assert rel.block_listed is False  # r_block - 1 removals
    t += 11.0
    res = removal_sweep(nrt, t, policy)
    assert res.flagged == ((GROUND, 1),)
    rel = commit_resolution(nrt, 7, 1, t, "UAV", policy)
    assert rel.block_listed is True
    # block-listed relations survive sweeps
    assert removal_sweep(nrt, t + 1000.0, policy).removed == ()
    assert snapshot(nrt, t).block_listed == 1


def test_removals_outside_window_do_not_block():
    policy = AnrPolicy(t_remove_s=10.0, r_block=2, w_block_s=30.0)
    nrt = Nrt(10)
    commit_resolution(nrt, 7, 1, 0.0, "UAV", policy)
    removal_sweep(nrt, 11.0, policy)
    commit_resolution(nrt, 7, 1, 100.0, "UAV", policy)
    removal_sweep(nrt, 111.0, policy)
    assert commit_resolution(nrt, 7, 1, 200.0, "UAV", policy).block_listed is False


def test_ulid_add():
    cells = [cell(1, 11), cell(2, 12), cell(3, 13)]
    nrts = {c.ecgi: Nrt(c.ecgi) for c in cells}
    touched = ulid_add(nrts, cells, [-80.0, -90.0, -120.0], cells[0], "GUE", -100.0, 1.0, POLICY)
    assert touched == [2]
    assert nrts[2].ground[1].pci == 11 and nrts[3].ground == {}
    assert ulid_add(nrts, cells, [-80.0, -130.0, -130.0], cells[0], "GUE", -100.0, 2.0, POLICY) == []
    ulid_add(nrts, cells, [-80.0, -90.0, -120.0], cells[0], "GUE", -100.0, 3.0, POLICY)
    assert len(nrts[2].ground) == 1 and nrts[2].ground[1].last_reported == 3.0


def test_reconnect_add():
    a, b = cell(1, 11), cell(2, 12)
    nrt_b = Nrt(2)
    reconnect_add(nrt_b, a, 4.0, "UAV", POLICY)
    assert list(nrt_b.ground) == [1]
    reconnect_add(nrt_b, a, 6.0, "UAV", POLICY)
    assert len(nrt_b.ground) == 1 and nrt_b.ground[1].last_reported == 6.0
    assert reconnect_add(nrt_b, b, 7.0, "UAV", POLICY) is None
    assert reconnect_add(nrt_b, None, 7.0, "UAV", POLICY) is None


def test_policy_validation():
    with pytest.raises(ValueError):
        AnrPolicy(r_block=0)
    with pytest.raises(ValueError):
        AnrPolicy(t_remove_s=0)
    with pytest.raises(ValueError):
        AnrPolicy(add_mechanisms=("Telepathy",))
