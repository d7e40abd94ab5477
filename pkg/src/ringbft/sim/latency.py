"""Inter-region latency matrix and replica placement."""

from __future__ import annotations

import csv
import io
import random
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

from ..core import ConfigError

REGION_ORDER = ("WDC", "MON", "TOR", "DAL", "SEA", "SJC", "HOU", "MEX", "SAO")
CLIENT_REGION = "WDC"


def load_rtt(path: str | None = None) -> dict[tuple[str, str], float]:
    """RTT in milliseconds keyed by ordered region pair (both directions present)."""
    if path is None:
        text = resources.files("ringbft.data").joinpath("rtt_ms.csv").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    cols = rows[0][1:]
    out = {}
    for row in rows[1:]:
        a = row[0]
        for b, v in zip(cols, row[1:]):
            if v.strip():
                out[(a, b)] = float(v)
                out.setdefault((b, a), float(v))
    return out


@dataclass
class LatencyModel:
    """One-way delay = rtt/2 scaled by a uniform jitter factor in [1-j, 1+j]."""

    rtt: dict[tuple[str, str], float] = field(default_factory=load_rtt)
    intra_region_one_way: float = 0.5
    jitter: float = 0.05
    fixed: float | None = None

    @classmethod
    def uniform(cls, one_way_ms: float, jitter: float = 0.0) -> "LatencyModel":
        return cls(rtt={}, intra_region_one_way=one_way_ms, jitter=jitter, fixed=one_way_ms)

    def base_ms(self, a: str | None, b: str | None) -> float:
        if self.fixed is not None:
            return self.fixed
        if a == b or a is None or b is None:
            return self.intra_region_one_way
        try:
            return self.rtt[(a, b)] / 2
        except KeyError:
            raise ConfigError(f"no latency known between {a} and {b}") from None

    def one_way(self, a, b, rng: random.Random | None = None) -> float:
        """Sampled one-way delay in seconds."""
        d = self.base_ms(a, b)
        if self.jitter and rng is not None:
            d *= 1 + rng.uniform(-self.jitter, self.jitter)
        return d / 1000.0

    def max_one_way(self, regions: Sequence[str | None]) -> float:
        """Worst-case one-way delay in seconds between any two of ``regions``."""
        rs = set(regions)
        worst = max((self.base_ms(a, b) for a in rs for b in rs), default=self.intra_region_one_way)
        return worst * (1 + self.jitter) / 1000.0

    @property
    def regions(self) -> list[str]:
        return sorted({a for a, _ in self.rtt})


@dataclass(frozen=True)
class Placement:
    order: tuple[int, ...]
    region_of: tuple[str, ...]

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.region_of:
            out[r] = out.get(r, 0) + 1
        return out


def _apportion(total: int, weights: list[float]) -> list[int]:
    s = sum(weights)
    quotas = [total * w / s for w in weights]
    base = [int(q) for q in quotas]
    rest = sorted(range(len(weights)), key=lambda i: (base[i] - quotas[i], i))
    for i in rest[: total - sum(base)]:
        base[i] += 1
    return base


def place_replicas(n: int, seed: int = 0, regions: Sequence[str] | Mapping[str, int] | None = None,
                   rtt: Mapping | None = None, mode: str = "tour") -> Placement:
    """Assign replicas to regions.

    ``tour`` walks the regions in the given order (default east to west, then
    south) and numbers replicas consecutively, so ring/chain neighbours share a
    region whenever possible. Each region gets a seeded random share weighted
    in [8, 12]. ``random`` picks a region uniformly per replica, which is what
    the leader-based reference model uses. A mapping of region to count fixes
    the counts explicitly.
    """
    if n < 1:
        raise ConfigError("n must be positive")
    known = set(REGION_ORDER) if rtt is None else {a for a, _ in rtt}
    rng = random.Random(seed)
    if isinstance(regions, Mapping):
        names = list(regions)
        counts = [int(regions[r]) for r in names]
        if sum(counts) != n:
            raise ConfigError(f"region counts sum to {sum(counts)}, expected {n}")
    else:
        names = list(regions) if regions is not None else list(REGION_ORDER)
        counts = None
    for r in names:
        if r not in known:
            raise ConfigError(f"unknown region {r!r}")
    if mode == "random":
        labels = tuple(rng.choice(names) for _ in range(n))
        return Placement(tuple(range(n)), labels)
    if mode != "tour":
        raise ConfigError(f"unknown placement mode {mode!r}")
    if counts is None:
        k = len(names)
        if n <= k:
            counts = [1] * n + [0] * (k - n)
        else:
            weights = [rng.uniform(8, 12) for _ in names]
            counts = [1 + c for c in _apportion(n - k, weights)]
    labels = tuple(r for r, c in zip(names, counts) for _ in range(c))
    return Placement(tuple(range(n)), labels)


def traversal_ms(order: Sequence[int], region_of: Sequence[str], model: LatencyModel,
                 closed: bool = False) -> float:
    """Sum of base one-way delays along ``order`` (optionally back to the start)."""
    hops = list(zip(order, order[1:]))
    if closed and len(order) > 1:
        hops.append((order[-1], order[0]))
    return sum(model.base_ms(region_of[a], region_of[b]) for a, b in hops)
