import statistics

import pytest

from ringbft.bench import Report, WorkloadSpec, find_knee, peak_search, repeat, run_workload, sweep
from ringbft.sim.run import Scenario

SMALL = WorkloadSpec(clients=2, threads_per_client=2, duration_s=1.0, warmup_s=1.0, cooldown_s=0.5)


def _fake_runner(curve):
    """Runner whose throughput/p50 come from ``curve[threads]``."""

    def run(spec, endpoint):
        tp, p50 = curve[spec.threads_per_client]
        return Report(throughput=tp, latency_p50=p50, config={"threads_per_client": spec.threads_per_client})

    return run


def test_spec_validation():
    with pytest.raises(ValueError):
        WorkloadSpec(target="leader")
    with pytest.raises(ValueError):
        WorkloadSpec(clients=0)
    with pytest.raises(ValueError):
        WorkloadSpec(duration_s=-1)
    assert SMALL.with_threads(7).threads_per_client == 7
    assert SMALL.to_sim().threads == 2


def test_find_knee():
    assert find_knee([1.0, 1.1, 1.5, 3.1]) == 3
    assert find_knee([1.0, 1.2, 1.4]) is None
    assert find_knee([0.0, 5.0]) is None
    assert find_knee([1.0, 1.5], factor=1.5) == 1


def test_peak_search_stops_at_knee_and_takes_best_rung():
    curve = {1: (10, 0.1), 2: (20, 0.1), 4: (35, 0.15), 8: (30, 0.4), 16: (50, 0.9)}
    res = peak_search(SMALL, None, ladder=(1, 2, 4, 8, 16), runner=_fake_runner(curve))
    assert res.knee == 3
    assert [r.threads for r in res.rungs] == [1, 2, 4, 8]
    assert res.peak.throughput == 35 and res.peak_threads == 4
    with pytest.raises(ValueError):
        peak_search(SMALL, None, ladder=(), runner=_fake_runner(curve))


def test_sweep_normalises_to_first_size():
    curves = {6: {1: (100, 0.1)}, 11: {1: (80, 0.1)}}
    runner = lambda spec, ep: _fake_runner(curves[ep])(spec, ep)
    rows = sweep((6, 11), SMALL, lambda n: n, ladder=(1,), runner=runner)
    assert [r.normalized for r in rows] == [1.0, 0.8]
    single = sweep((11,), SMALL, lambda n: n, ladder=(1,), runner=runner)
    assert single[0].normalized == 1.0


def test_zero_length_window_reports_nothing():
    spec = WorkloadSpec(clients=1, duration_s=0.0, warmup_s=0.5, cooldown_s=0.0)
    rep = run_workload(spec, Scenario(n=6, latency=10.0))
    assert rep.throughput == 0 and rep.completed == 0
    assert rep.latency_p50 == 0.0


def test_repeat_statistics_over_three_seeds():
    sc = Scenario(n=6, latency=10.0)
    rep = repeat(SMALL, sc, seeds=(0, 1, 2))
    assert len(rep.reps) == 3
    assert rep.mean == pytest.approx(statistics.fmean(rep.reps))
    assert rep.stddev == pytest.approx(statistics.stdev(rep.reps))
    assert rep.throughput > 0 and not rep.violations
    d = rep.to_dict()
    assert d["mean"] == rep.mean and d["config"]["n"] == 6


def test_run_workload_is_deterministic_per_seed():
    sc = Scenario(n=6, latency=10.0, seed=4)
    a = run_workload(SMALL, sc)
    b = run_workload(SMALL, sc, seed=4)
    assert a.throughput == b.throughput and a.latency_avg == b.latency_avg
