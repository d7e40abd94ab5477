import json

import pytest

from ringbft.core import SystemConfig
from ringbft.sim import (
    AdversarySpec, CapacityModel, LatencyModel, SafetyViolation, Scenario, WorkloadConfig, cascade,
    fallback_flood, load_rtt, load_scenario, minimize_trace, place_replicas, run_sim,
)
from ringbft.sim.latency import REGION_ORDER, traversal_ms
from ringbft.sim.run import build


def script(n, ops, **kw):
    return Scenario(n=n, latency=10.0, workload=WorkloadConfig(kind="script", ops=ops), **kw)


def test_rtt_table_is_symmetric_and_complete():
    rtt = load_rtt()
    assert len(REGION_ORDER) == 9
    for a in REGION_ORDER:
        for b in REGION_ORDER:
            assert rtt[(a, b)] == rtt[(b, a)]
            assert (rtt[(a, b)] == 0) == (a == b)


def test_placement_tour_and_counts():
    p = place_replicas(11)
    assert sum(p.counts().values()) == 11
    assert sorted(p.order) == list(range(11))
    # consecutive ring positions never jump backwards along the region tour
    idx = [REGION_ORDER.index(p.region_of[r]) for r in p.order]
    assert idx == sorted(idx)
    rnd = place_replicas(11, seed=3, mode="random")
    assert sorted(rnd.order) == list(range(11))


def test_traversal_is_cheaper_along_tour():
    model = LatencyModel()
    p = place_replicas(16)
    shuffled = list(reversed(p.order[::2])) + list(p.order[1::2])
    assert traversal_ms(p.order, p.region_of, model) <= traversal_ms(shuffled, p.region_of, model)


def test_uniform_latency_model():
    m = LatencyModel.uniform(7.0)
    assert m.one_way("a", "b") == pytest.approx(0.007)
    assert m.max_one_way(["a", "b"]) == pytest.approx(0.007)


def test_same_seed_same_run():
    sc = Scenario(n=6, latency="regions", capacity={},
                  workload=WorkloadConfig(clients=3, threads=2, duration=1, warmup=0.5, cooldown=0.2))
    a = run_sim(sc, seed=4)
    b = run_sim(sc, seed=4)
    c = run_sim(sc, seed=5)
    assert a.to_dict() == b.to_dict()
    assert a.events != c.events


def test_scenario_round_trip(tmp_path):
    sc = script(6, [(0.0, 1, "x")], adversaries=[AdversarySpec("crash", (2,))])
    path = tmp_path / "s.json"
    path.write_text(json.dumps(sc.to_dict()))
    back = load_scenario(str(path))
    assert back.adversaries == sc.adversaries and back.workload.ops == [(0.0, 1, "x")]
    ypath = tmp_path / "s.yaml"
    ypath.write_text("n: 11\nlatency: 5\nworkload: {kind: script, ops: [[0, 1, a]]}\n")
    assert load_scenario(str(ypath)).n == 11


@pytest.mark.parametrize("n", [6, 11, 16])
def test_broadcasts_processed_per_append(n):
    m = run_sim(script(n, [(0.0, 1, "a")], jitter=0.0), early_stop=False)
    for row in m.per_replica.values():
        assert row["envelopes"] == n + 1
        assert row["delivered"] == n + 1


@pytest.mark.parametrize("n", [6, 11])
def test_hops(n):
    cfg = build(script(n, [])).cfg
    seq = cfg.sequencer(0)
    best = run_sim(script(n, [(0.0, cfg.predecessor(seq), "a")], jitter=0.0))
    worst = run_sim(script(n, [(0.0, cfg.successor(seq), "a")], jitter=0.0))
    assert best.hops == [n + 2]
    assert worst.hops == [2 * n + 2]


def test_chain_costs():
    ops = [(0.0, 0, "a"), (1.0, 0, "b"), (2.0, 0, "c")]
    m = run_sim(Scenario(protocol="chain", n=5, latency=10.0,
                         workload=WorkloadConfig(kind="script", ops=ops)), early_stop=False)
    assert all(row["sent"] == 3 for row in m.per_replica.values())
    assert m.hops == [6, 6, 6]
    assert m.live


def test_capacity_model_costs():
    cap = CapacityModel(bytes_per_second=1000.0, per_message=0.5)
    assert cap.cost_bytes(500) == pytest.approx(1.0)


def test_fault_free_runs_never_activate():
    sc = Scenario(n=11, latency="regions", capacity={},
                  workload=WorkloadConfig(clients=5, threads=4, duration=3, warmup=1, cooldown=0.5))
    m = run_sim(sc)
    assert sum(r.get("activations", 0) for r in m.per_replica.values()) == 0
    assert m.reconfigs_started == 0 and not m.violations


def test_throughput_matches_replica_side_count():
    sc = Scenario(n=6, latency=10.0, capacity={},
                  workload=WorkloadConfig(clients=4, threads=4, duration=2, warmup=1, cooldown=0.5))
    m = run_sim(sc)
    assert m.completed > 0
    assert abs(m.committed_in_window - m.completed) <= 4 * 4


@pytest.mark.parametrize("kind", ["crash", "drop-all", "selective-withhold", "equivocate-timestamps",
                                  "poisonous-sequencer"])
@pytest.mark.parametrize("n", [6, 11])
def test_adversaries_keep_safety_and_liveness(kind, n):
    cfg = SystemConfig.ring(n)
    members = tuple(cfg.sequencer(p) for p in range(cfg.f))
    ops = [(0.05 * i, (cfg.sequencer(0) + 1 + i) % n, "op%d" % i) for i in range(6)]
    m = run_sim(script(n, ops, adversaries=[AdversarySpec(kind, members)]))
    assert not m.violations
    assert m.live, m.missing


def test_fallback_flood_live():
    cfg = SystemConfig.ring(11)
    ops = [(0.02 * i, (3 + i) % 11, "op%d" % i) for i in range(10)]
    adv = fallback_flood(cfg)
    assert len(adv.members) == cfg.f and adv.params["target"] == cfg.sequencer(0)
    m = run_sim(script(11, ops, adversaries=[adv]))
    assert m.live and not m.violations


def test_adversary_checks():
    cfg = SystemConfig.ring(6)
    with pytest.raises(ValueError):
        AdversarySpec("crash", (1, 2)).check(cfg)
    with pytest.raises(ValueError):
        AdversarySpec("meteor", (1,))
    with pytest.raises(ValueError):
        AdversarySpec("fallback-flood", (1, 3)).check(SystemConfig.ring(11))
    assert cascade(SystemConfig.ring(11), 2).members == (0, 1)


def test_violation_reported_and_minimised():
    # with the quorum forced down to one vote, a forking sequencer splits the log
    cfg = SystemConfig.ring(6)
    seq = cfg.sequencer(0)
    ops = [(0.0, (seq + 1) % 6, "a"), (0.0, (seq + 2) % 6, "b"), (0.01, (seq + 3) % 6, "c")]
    sc = script(6, ops, adversaries=[AdversarySpec("poisonous-sequencer", (seq,))], quorum_override=1,
                jitter=0.0)
    with pytest.raises(SafetyViolation) as exc:
        run_sim(sc)
    assert exc.value.seed == 0 and exc.value.event > 0
    relaxed = run_sim(sc, strict=False)
    assert relaxed.violations
    small = minimize_trace(sc, max_runs=60)
    assert small is not None
    assert len(small.trace) <= small.original_events
    assert small.violation.kind in ("agreement", "no-duplication", "validity")


def test_no_violation_means_nothing_to_minimise():
    assert minimize_trace(script(6, [(0.0, 1, "a")]), max_runs=5) is None


def test_flood_members_may_wrap_around_the_ring():
    cfg = SystemConfig.ring(11)
    AdversarySpec("fallback-flood", (10, 0)).check(cfg)
    assert fallback_flood(cfg, pn=1).members == (10, 0)
    with pytest.raises(ValueError):
        AdversarySpec("fallback-flood", (9, 0)).check(cfg)
