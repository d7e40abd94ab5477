"""The environment a protocol state machine runs in.

The simulator and the asyncio runtime both implement this interface, so the
protocol code path is identical under virtual and real time.
"""

from __future__ import annotations

from typing import Any, Hashable, Protocol


class Host(Protocol):
    def now(self) -> float: ...

    def send(self, dest: Hashable, msg: Any) -> None:
        """Best-effort send over a FIFO link; ``dest`` is a replica id or client address."""

    def set_timer(self, key: Hashable, delay: float) -> None:
        """(Re)arm timer ``key``; the node's ``on_timer(key)`` runs after ``delay``."""

    def cancel_timer(self, key: Hashable) -> None: ...


class NullHost:
    """Host that records sends; handy for driving a state machine by hand."""

    def __init__(self, t: float = 0.0):
        self.t = t
        self.sent: list[tuple[Hashable, Any]] = []
        self.timers: dict[Hashable, float] = {}

    def now(self) -> float:
        return self.t

    def send(self, dest, msg) -> None:
        self.sent.append((dest, msg))

    def set_timer(self, key, delay) -> None:
        self.timers[key] = self.t + delay

    def cancel_timer(self, key) -> None:
        self.timers.pop(key, None)

    def take(self) -> list[tuple[Hashable, Any]]:
        out, self.sent = self.sent, []
        return out
