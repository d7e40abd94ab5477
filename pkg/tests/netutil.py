"""A tiny synchronous network for driving replicas by hand in unit tests."""

from collections import deque

from ringbft.agreement import ReplicaParams
from ringbft.core import KeyedTagScheme, SystemConfig
from ringbft.reconfig import Replica


class BusHost:
    def __init__(self, bus, me):
        self.bus = bus
        self.me = me
        self.timers = {}

    def now(self):
        return self.bus.t

    def send(self, dest, msg):
        self.bus.queue.append((self.me, dest, msg))

    def set_timer(self, key, delay):
        self.timers[key] = self.bus.t + delay

    def cancel_timer(self, key):
        self.timers.pop(key, None)


class Bus:
    """FIFO delivery in send order; timers only fire through :meth:`fire`."""

    def __init__(self, n=6, params=None, scheme=None, drop=None):
        self.t = 0.0
        self.cfg = SystemConfig.ring(n)
        self.scheme = scheme or KeyedTagScheme(seed=b"bus")
        self.queue = deque()
        self.outbox = []
        self.drop = drop or (lambda src, dest, msg: False)
        self.hosts = {r: BusHost(self, r) for r in range(n)}
        self.nodes = {r: Replica(r, self.cfg, self.hosts[r], self.scheme, params or ReplicaParams())
                      for r in range(n)}
        self.dead = set()
        self.processed = {r: 0 for r in range(n)}

    def run(self, limit=1_000_000):
        k = 0
        while self.queue and k < limit:
            src, dest, msg = self.queue.popleft()
            k += 1
            if dest in self.dead or src in self.dead or self.drop(src, dest, msg):
                continue
            if dest in self.nodes:
                self.processed[dest] += 1
                self.nodes[dest].on_message(src, msg)
            else:
                self.outbox.append((src, dest, msg))
        return k

    def fire(self, r, key):
        self.hosts[r].timers.pop(key, None)
        self.nodes[r].on_timer(key)
        self.run()
