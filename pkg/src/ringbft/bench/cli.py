"""Command line entry point: ``ringbft <subcommand> ...``.

Subcommands
  run-replica   serve one replica of a deployment file
  run-client    drive closed-loop load against a running deployment
  run-sim       one simulated run (or a repeated run) of a scenario
  sweep         peak throughput per system size, in simulation
  report        summarise CSV or JSON results written by the others

The exit status is 1 when a run reports a safety violation and 2 on usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
from collections import defaultdict

from ..core import ConfigError
from .workload import TARGETS, Report, WorkloadSpec, peak_search, repeat, sweep

CSV_FIELDS = ["protocol", "n", "rep", "seed", "threads_per_client", "throughput", "latency_avg",
              "latency_p50", "latency_p99", "completed", "committed"]


def _add_workload_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("workload")
    g.add_argument("--clients", type=int, default=10)
    g.add_argument("--threads", type=int, default=1, help="threads per client")
    g.add_argument("--request-bytes", type=int, default=250)
    g.add_argument("--duration", type=float, default=30.0)
    g.add_argument("--warmup", type=float, default=15.0)
    g.add_argument("--cooldown", type=float, default=15.0)
    g.add_argument("--target", choices=TARGETS, default="random-replica")
    g.add_argument("--fixed", type=int, default=0, help="replica for --target fixed")
    g.add_argument("--timeout", type=float, default=None, help="per-request client timeout")


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("simulation")
    g.add_argument("--scenario", help="scenario file (JSON or YAML); flags below override it")
    g.add_argument("--protocol", choices=("ring", "chain"))
    g.add_argument("--latency", help='"regions" (measured inter-region matrix) or a uniform one-way delay in ms')
    g.add_argument("--jitter", type=float)
    g.add_argument("--capacity", action="store_true", help="enable the default capacity model")
    g.add_argument("--bytes-per-second", type=float)
    g.add_argument("--batch-delay", type=float)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--reps", type=int, default=1, help="repetitions, one seed each")


def _spec(a) -> WorkloadSpec:
    return WorkloadSpec(clients=a.clients, threads_per_client=a.threads, request_bytes=a.request_bytes,
                        duration_s=a.duration, warmup_s=a.warmup, cooldown_s=a.cooldown,
                        target=a.target, fixed=a.fixed, timeout_s=a.timeout)


def _scenario(a, n: int | None = None):
    from ..sim.run import Scenario, load_scenario

    sc = load_scenario(a.scenario) if a.scenario else Scenario()
    kw = {}
    if a.protocol:
        kw["protocol"] = a.protocol
    if n is not None:
        kw["n"] = n
    elif getattr(a, "n", None):
        kw["n"] = a.n
    if a.latency:
        kw["latency"] = a.latency if a.latency == "regions" else float(a.latency)
    if a.jitter is not None:
        kw["jitter"] = a.jitter
    if a.capacity or a.bytes_per_second:
        cap = dict(sc.capacity or {})
        if a.bytes_per_second:
            cap["bytes_per_second"] = a.bytes_per_second
        kw["capacity"] = cap
    if a.batch_delay is not None:
        kw["batch_delay"] = a.batch_delay
    return sc.replace(**kw)


def _row(rep: Report, k: int, seed: int, throughput: float | None = None) -> dict:
    c = rep.config
    return {"protocol": c.get("protocol"), "n": c.get("n"), "rep": k, "seed": seed,
            "threads_per_client": c.get("threads_per_client"),
            "throughput": rep.throughput if throughput is None else throughput,
            "latency_avg": rep.latency_avg, "latency_p50": rep.latency_p50,
            "latency_p99": rep.latency_p99, "completed": rep.completed, "committed": rep.committed}


def _write_csv(path: str, rows: list[dict]) -> None:
    fh = sys.stdout if path == "-" else open(path, "w", newline="")
    try:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()


def _emit(a, summary: dict, rows: list[dict]) -> None:
    if a.csv:
        _write_csv(a.csv, rows)
    text = json.dumps(summary, indent=2, default=str)
    if a.json:
        with open(a.json, "w") as fh:
            fh.write(text + "\n")
    print(text)


# -- subcommands ----------------------------------------------------------------

def cmd_run_replica(a) -> int:
    from ..runtime.node import NodeConfig, serve

    cfg = NodeConfig.load(a.config, a.id, a.role)
    serve(cfg)
    return 0


def cmd_run_client(a) -> int:
    from ..runtime.node import NodeConfig
    from .workload import run_workload

    cfg = NodeConfig.load(a.config, 0, "client" if a.role is None else a.role)
    if cfg.role == "ring":
        cfg = NodeConfig.load(a.config, 0, "client")
    spec = _spec(a)
    rep = run_workload(spec, cfg, seed=a.seed)
    row = _row(rep, 0, a.seed)
    _emit(a, rep.to_dict(), [row])
    return 0


def cmd_run_sim(a) -> int:
    sc = _scenario(a)
    spec = _spec(a)
    seeds = [a.seed + k for k in range(a.reps)]
    if a.script:
        from ..sim.run import run_sim

        m = run_sim(sc, seed=a.seed, strict=False)
        summary = m.to_dict()
        _emit(a, summary, [])
        return 1 if m.violations else 0
    rep = repeat(spec, sc, seeds)
    rows = [_row(rep, k, s, t) for k, (s, t) in enumerate(zip(seeds, rep.reps))]
    _emit(a, rep.to_dict(), rows)
    return 1 if rep.violations else 0


def cmd_sweep(a) -> int:
    sizes = [int(x) for x in a.sizes.split(",") if x]
    ladder = [int(x) for x in a.ladder.split(",") if x]
    spec = _spec(a)
    rows = []
    table = []
    violations = []
    for n in sizes:
        sc = _scenario(a, n)
        per_rep = []
        for k in range(a.reps):
            seed = a.seed + k
            res = peak_search(spec, sc.replace(seed=seed), ladder,
                              runner=lambda s, e, seed=seed: repeat(s, e, [seed]))
            violations += res.peak.violations
            rows.append(_row(res.peak, k, seed))
            per_rep.append(res.peak.throughput)
        table.append({"n": n, "peak": statistics.fmean(per_rep),
                      "stddev": statistics.stdev(per_rep) if len(per_rep) > 1 else 0.0})
    if table and table[0]["peak"] > 0:
        for t in table:
            t["normalized"] = t["peak"] / table[0]["peak"]
    _emit(a, {"protocol": a.protocol or "ring", "decay": table, "violations": violations}, rows)
    return 1 if violations else 0


def cmd_report(a) -> int:
    groups: dict[tuple, list[float]] = defaultdict(list)
    for path in a.inputs:
        if path.endswith(".json"):
            with open(path) as fh:
                data = json.load(fh)
            reps = data.get("reps") or [data.get("throughput", 0.0)]
            cfg = data.get("config", {})
            groups[(cfg.get("protocol"), cfg.get("n"))].extend(reps)
            continue
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                groups[(row["protocol"], int(row["n"]))].append(float(row["throughput"]))
    out = []
    base = None
    for (proto, n), vals in sorted(groups.items(), key=lambda kv: (str(kv[0][0]), kv[0][1] or 0)):
        mean = statistics.fmean(vals)
        base = base if base is not None else mean
        out.append({"protocol": proto, "n": n, "runs": len(vals), "mean": mean,
                    "stddev": statistics.stdev(vals) if len(vals) > 1 else 0.0,
                    "normalized": mean / base if base else 0.0})
    w = csv.DictWriter(sys.stdout, fieldnames=["protocol", "n", "runs", "mean", "stddev", "normalized"])
    w.writeheader()
    w.writerows(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ringbft", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run-replica", help="serve one replica")
    r.add_argument("--config", required=True, help="deployment file (YAML or JSON)")
    r.add_argument("--id", type=int, required=True)
    r.add_argument("--role", choices=("ring", "chain"))
    r.set_defaults(fn=cmd_run_replica)

    c = sub.add_parser("run-client", help="closed-loop load against a deployment")
    c.add_argument("--config", required=True)
    c.add_argument("--role", choices=("ring", "chain"), help="protocol of the deployment")
    c.add_argument("--seed", type=int, default=0)
    _add_workload_flags(c)
    c.set_defaults(fn=cmd_run_client)

    s = sub.add_parser("run-sim", help="simulated run")
    s.add_argument("--n", type=int)
    s.add_argument("--script", action="store_true",
                   help="run the scenario's own workload instead of the closed-loop flags")
    _add_sim_flags(s)
    _add_workload_flags(s)
    s.set_defaults(fn=cmd_run_sim)

    w = sub.add_parser("sweep", help="peak throughput per size (simulation)")
    w.add_argument("--sizes", required=True, help="comma separated, e.g. 6,11,16")
    w.add_argument("--ladder", default="1,2,4,8,16,32,64", help="threads-per-client ladder")
    _add_sim_flags(w)
    _add_workload_flags(w)
    w.set_defaults(fn=cmd_sweep)

    rp = sub.add_parser("report", help="summarise CSV/JSON results")
    rp.add_argument("inputs", nargs="+")
    rp.set_defaults(fn=cmd_report)

    for sp in (c, s, w):
        sp.add_argument("--csv", help="write one row per size x repetition ('-' for stdout)")
        sp.add_argument("--json", help="write the summary record to this file")
    return p


def main(argv=None) -> int:
    p = build_parser()
    a = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return a.fn(a)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
