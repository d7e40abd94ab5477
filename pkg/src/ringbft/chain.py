"""Chain-replication baseline: head batches, replicas pipeline, tail acks.

Crash-only and without recovery, so a dead link stalls the pipeline for good.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .core import BATCH_CAP, SystemConfig
from .host import Host
from .messages import ChainAck, ChainForward, ChainItem, ChainSubmit

BATCH_TIMER = ("chain", "batch")


@dataclass
class ChainParams:
    batch_cap: int = BATCH_CAP
    batch_delay: float = 0.0


class ChainReplica:
    def __init__(self, me: int, cfg: SystemConfig, host: Host, params: ChainParams | None = None,
                 observer=None):
        if cfg.protocol != "chain":
            raise ValueError("ChainReplica needs a chain configuration")
        self.me = me
        self.cfg = cfg
        self.host = host
        self.params = params or ChainParams()
        self.observer = observer
        pos = cfg.position(me)
        self.is_head = pos == 0
        self.is_tail = pos == cfg.n - 1
        self.next = None if self.is_tail else cfg.successor(me)
        self.log: list[ChainForward] = []
        self.next_seq = 0
        self._batch: list[ChainItem] = []
        self._armed = False
        self.counters = Counter()

    @property
    def head(self) -> int:
        return self.cfg.at(0)

    @property
    def tail(self) -> int:
        return self.cfg.at(self.cfg.n - 1)

    def chain_submit(self, item: ChainItem) -> None:
        if not self.is_head:
            self.counters["misrouted"] += 1
            return
        self._batch.append(item)
        if len(self._batch) >= self.params.batch_cap:
            self.flush()
        elif not self._armed:
            self._armed = True
            self.host.set_timer(BATCH_TIMER, self.params.batch_delay)

    def flush(self) -> None:
        if not self._batch:
            return
        if self._armed:
            self._armed = False
            self.host.cancel_timer(BATCH_TIMER)
        batch, self._batch = tuple(self._batch), []
        fwd = ChainForward(self.next_seq, batch)
        self.next_seq += 1
        self.on_forward(fwd)

    def on_forward(self, fwd: ChainForward) -> None:
        if fwd.seq != len(self.log):
            # FIFO links make this impossible for a correct upstream replica
            self.counters["out_of_order"] += 1
            return
        self.log.append(fwd)
        if self.observer is not None:
            self.observer.on_chain_append(self, fwd)
        if self.next is not None:
            self.counters["sends"] += 1
            self.host.send(self.next, fwd)
            return
        by_client: dict[int, list[int]] = {}
        for it in fwd.items:
            by_client.setdefault(it.client, []).append(it.req_id)
        for client, reqs in by_client.items():
            self.counters["sends"] += 1
            self.host.send(client, ChainAck(fwd.seq, tuple(reqs)))

    def on_message(self, src, msg) -> None:
        t = type(msg)
        if t is ChainSubmit:
            self.chain_submit(ChainItem(msg.client, msg.req_id, msg.payload))
        elif t is ChainForward:
            self.on_forward(msg)
        else:
            self.counters["unexpected"] += 1

    def on_timer(self, key) -> None:
        if key == BATCH_TIMER:
            self._armed = False
            self.flush()


def chain_placement(n: int, seed: int = 0, regions=None, rtt=None) -> SystemConfig:
    """Chain configuration with replicas ordered along the fixed region tour."""
    from .sim.latency import place_replicas

    placement = place_replicas(n, seed=seed, regions=regions, rtt=rtt)
    return SystemConfig.chain(n, ring_order=placement.order, region_of=placement.region_of)
