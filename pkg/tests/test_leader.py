import pytest

from ringbft.sim.leader import fit_decay_exponent, leader_broadcast_model


def test_exact_power_law_slope():
    ns = [4, 8, 16]
    assert fit_decay_exponent(ns, [1000 / n for n in ns]) == pytest.approx(-1.0)
    assert fit_decay_exponent(ns, [50.0] * 3) == pytest.approx(0.0, abs=1e-12)


def test_small_systems_rejected():
    with pytest.raises(ValueError):
        leader_broadcast_model(2)


def test_leader_throughput_falls_about_inversely():
    ns = (6, 16, 31)
    res = [leader_broadcast_model(n, {"bytes_per_second": 180000}, duration=2.0) for n in ns]
    assert all(r.throughput > 0 for r in res)
    assert fit_decay_exponent(ns, [r.throughput for r in res]) == pytest.approx(-1.0, abs=0.2)
    # the leader is the bottleneck
    assert res[-1].leader_busy > 0.8
