import numpy as np
import pytest

from dtoffload import compute
from dtoffload.config import CostWeights, SimParams, TaskSpec, make_rng


def task(d=2.0, cr=10.0, deadline=20):
    return TaskSpec(id=0, data_mb=d, cycles_gc=cr, deadline_slots=deadline)


# -- local --------------------------------------------------------------------

def test_local_execute_default_capacity():
    bd = compute.local_execute(task(cr=10.0), 2.0)
    assert bd.time_slots == 5.0  # 1.0 s at 0.2 s slots
    assert bd.energy == 40.0     # p_n = zeta f^tau = 8
    assert bd.rent == 0.0 and not bd.handover


def test_local_execute_empty_task():
    t = TaskSpec(id=0, data_mb=1.0, cycles_gc=1e-12, deadline_slots=20)
    bd = compute.local_execute(t, 2.0)
    assert bd.time_slots == pytest.approx(0.0, abs=1e-9)
    assert bd.energy == pytest.approx(0.0, abs=1e-9)


def test_local_never_handover_or_rent():
    rng = make_rng(0, 0)
    for _ in range(100):
        bd = compute.local_execute(task(cr=rng.uniform(1, 10)), rng.uniform(0.5, 4))
        assert not bd.handover and bd.rent == 0.0


# -- drain --------------------------------------------------------------------

def test_drain_hand_iteration():
    tr = compute.drain(2.0, [0.5, 0.5, 1.0])
    assert tr.remaining_series == [2.0, 1.5, 1.0, 0.0]
    assert tr.duration_slots == 3
    assert tr.finished


def test_drain_nothing_to_do():
    tr = compute.drain(0.0, [1.0, 1.0])
    assert tr.duration_slots == 0 and tr.finished


def test_drain_matches_ceiling_on_constant_supply():
    rng = make_rng(4, 0)
    for _ in range(100):
        d = rng.uniform(0.01, 50.0)
        s = rng.uniform(0.05, 8.0)
        tr = compute.drain(d, iter(lambda: s, None))
        assert tr.duration_slots == compute.constant_supply_duration(d, s)


def test_drain_unfinished_signal():
    tr = compute.drain(5.0, [1.0, 1.0], max_slots=2)
    assert not tr.finished
    assert tr.remaining == pytest.approx(3.0)
    tr2 = compute.drain(5.0, [1.0, 1.0])  # series exhausted
    assert not tr2.finished and tr2.remaining == pytest.approx(3.0)


def test_drain_series_decreasing_until_zero():
    rng = make_rng(5, 0)
    supplies = rng.uniform(0.2, 2.0, 64)
    tr = compute.drain(17.0, supplies)
    diffs = np.diff(tr.remaining_series)
    assert np.all(diffs < 0)
    assert tr.remaining_series[-1] == 0.0


# -- mec ----------------------------------------------------------------------

def test_mec_fast_rate_one_plus_one_slots():
    bd = compute.mec_execute(task(d=2.0, cr=10.0), iter(lambda: 100.0, None),
                             iter(lambda: 10.0, None), boundary_slot=100,
                             tx_power_w=1.25, slot_s=0.2)
    assert bd.time_slots == 2.0
    assert not bd.handover


def test_mec_immediate_handover_at_boundary():
    bd = compute.mec_execute(task(), iter(lambda: 100.0, None),
                             iter(lambda: 10.0, None), boundary_slot=0,
                             tx_power_w=1.25, slot_s=0.2)
    assert bd.handover
    assert bd.time_slots == 0.0 and bd.energy == 0.0 and bd.rent == 0.0


def test_mec_transmission_energy():
    # 4 transmission slots at 1.25 W and 0.2 s -> 1.0 J
    bd = compute.mec_execute(task(d=4.0, cr=1.0), iter(lambda: 1.0, None),
                             iter(lambda: 10.0, None), boundary_slot=100,
                             tx_power_w=1.25, slot_s=0.2)
    assert bd.energy == pytest.approx(1.0)
    assert bd.time_slots == 5.0  # 4 tx + 1 compute


# -- cloud --------------------------------------------------------------------

def test_cloud_rents():
    params = SimParams()
    bd = compute.cloud_execute(task(d=2.0, cr=10.0), 10.0, params)
    assert bd.rent == pytest.approx(1.0 * 2.0 + 3.0 * 10.0)  # transfer 2 + compute 30
    assert bd.time_slots == pytest.approx(2.0 / 10.0 + 10.0 / 20.0)


def test_cloud_compute_time():
    params = SimParams()
    bd = compute.cloud_execute(task(d=0.1, cr=10.0), 100.0, params)
    assert bd.time_slots == pytest.approx(0.001 + 0.5)


def test_cloud_unreachable():
    with pytest.raises(compute.UnreachableCloudError):
        compute.cloud_execute(task(), 0.0, SimParams())


# -- scalarize ----------------------------------------------------------------

def test_scalarize_hand_arithmetic():
    w = CostWeights()
    bd = compute.CostBreakdown(time_slots=1.0 / 0.2, energy=2.0, rent=3.0)
    assert compute.scalarize(bd, w, 0.2) == pytest.approx(1.8)
    assert bd.scalar_cost == pytest.approx(1.8)


def test_scalarize_zero_and_single_term():
    w = CostWeights()
    assert compute.scalarize(compute.CostBreakdown(), w, 0.2) == 0.0
    w2 = CostWeights(xi_time=1.0, xi_energy=0.0, xi_rent=0.0)
    bd = compute.CostBreakdown(time_slots=7.0 / 0.2, energy=99.0, rent=99.0)
    assert compute.scalarize(bd, w2, 0.2) == pytest.approx(7.0)


# -- monotonicity properties ----------------------------------------------------

def test_costs_monotone_in_task_size_and_cycles():
    params = SimParams()
    rng = make_rng(6, 0)
    for _ in range(50):
        d1, d2 = sorted(rng.uniform(0.1, 2.5, 2))
        cr1, cr2 = sorted(rng.uniform(1.0, 10.0, 2))
        rate = rng.uniform(0.5, 5.0)
        # MEC transmission time never decreases with d
        t1 = compute.drain(d1, iter(lambda: rate, None)).duration_slots
        t2 = compute.drain(d2, iter(lambda: rate, None)).duration_slots
        assert t1 <= t2
        # cloud and local execution times never decrease with cr
        c1 = compute.cloud_execute(task(d=1.0, cr=cr1), rate, params).time_slots
        c2 = compute.cloud_execute(task(d=1.0, cr=cr2), rate, params).time_slots
        assert c1 <= c2
        l1 = compute.local_execute(task(cr=cr1), 2.0).time_slots
        l2 = compute.local_execute(task(cr=cr2), 2.0).time_slots
        assert l1 <= l2
