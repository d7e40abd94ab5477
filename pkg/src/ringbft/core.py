"""Shared domain types: replica ids, quorum arithmetic, digests and signatures."""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

ReplicaId = int
Entry = bytes

#: requests per DATA message
BATCH_CAP = 10
#: default request size used by the benchmark workloads
REQUEST_BYTES = 250


class ConfigError(ValueError):
    """Raised for inconsistent system or node configuration."""


class MessageId(NamedTuple):
    """Broadcast identity: originating replica plus its dense timestamp."""

    sender: int
    ts: int

    def __str__(self) -> str:
        return f"({self.sender},{self.ts})"


def commit_quorum(f: int) -> int:
    if f < 0:
        raise ValueError("f must be non-negative")
    return 4 * f + 1


def max_faults(n: int) -> int:
    if n < 1:
        raise ValueError("n must be positive")
    return (n - 1) // 5


def sequencer_for(pn: int, n: int) -> int:
    """Ring position of the sequencer in configuration ``pn``."""
    if n < 1:
        raise ValueError("n must be positive")
    return pn % n


@dataclass(frozen=True)
class SystemConfig:
    n: int
    f: int
    ring_order: tuple[int, ...] = ()
    region_of: tuple[str, ...] = ()
    protocol: str = "ring"

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.protocol == "ring":
            if self.n != 5 * self.f + 1:
                raise ConfigError(f"ring protocol requires n = 5f+1, got n={self.n} f={self.f}")
        elif self.protocol == "chain":
            if self.n != self.f + 1:
                raise ConfigError(f"chain requires n = f+1, got n={self.n} f={self.f}")
        else:
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        order = self.ring_order or tuple(range(self.n))
        if sorted(order) != list(range(self.n)):
            raise ConfigError("ring_order must be a permutation of [0, n)")
        object.__setattr__(self, "ring_order", tuple(order))
        if self.region_of and len(self.region_of) != self.n:
            raise ConfigError("region_of must name one region per replica")
        object.__setattr__(self, "_pos", {r: i for i, r in enumerate(order)})

    @classmethod
    def ring(cls, n: int, **kw) -> "SystemConfig":
        return cls(n=n, f=max_faults(n), **kw)

    @classmethod
    def chain(cls, n: int, **kw) -> "SystemConfig":
        return cls(n=n, f=n - 1, protocol="chain", **kw)

    @property
    def quorum(self) -> int:
        return commit_quorum(self.f)

    def position(self, r: int) -> int:
        return self._pos[r]

    def at(self, pos: int) -> int:
        return self.ring_order[pos % self.n]

    def successor(self, r: int, k: int = 1) -> int:
        return self.ring_order[(self._pos[r] + k) % self.n]

    def predecessor(self, r: int, k: int = 1) -> int:
        return self.ring_order[(self._pos[r] - k) % self.n]

    def sequencer(self, pn: int) -> int:
        return self.at(sequencer_for(pn, self.n))

    def fallback_predecessors(self, r: int) -> list[int]:
        """The F fallback predecessors, nearest first (i-2 ... i-F-1)."""
        return [self.predecessor(r, k) for k in range(2, self.f + 2)]

    def fallback_successors(self, r: int) -> list[int]:
        """Replicas that hold ``r`` as a fallback predecessor (i+2 ... i+F+1)."""
        return [self.successor(r, k) for k in range(2, self.f + 2)]


# -- canonical encoding --------------------------------------------------------

_DIGEST_HEAD = struct.Struct(">QQIQI")


def encode_batch(entries: Sequence[bytes]) -> bytes:
    """Canonical byte form of a batch: count, then (length, bytes) per entry."""
    parts = [struct.pack(">I", len(entries))]
    for e in entries:
        parts.append(struct.pack(">I", len(e)))
        parts.append(e)
    return b"".join(parts)


def canonical_encoding(pn: int, sn: int, mid: MessageId, payload: bytes) -> bytes:
    """Fixed-width big-endian (pn, sn, sender, ts, payload-length, payload)."""
    return _DIGEST_HEAD.pack(pn, sn, mid.sender, mid.ts, len(payload)) + payload


def digest(pn: int, sn: int, mid: MessageId, payload: bytes) -> bytes:
    return hashlib.sha256(canonical_encoding(pn, sn, mid, payload)).digest()


def batch_digest(pn: int, sn: int, mid: MessageId, entries: Sequence[bytes]) -> bytes:
    return digest(pn, sn, mid, encode_batch(entries))


# -- signatures ---------------------------------------------------------------


class SignatureScheme:
    """sign/verify keyed by replica id. Subclasses hold the key material."""

    name = "abstract"
    sig_len = 0

    def sign(self, signer: int, data: bytes) -> bytes:
        raise NotImplementedError

    def verify(self, signer: int, data: bytes, sig: bytes) -> bool:
        raise NotImplementedError


def _replica_secret(seed: bytes, signer: int) -> bytes:
    return hashlib.sha256(seed + b"/replica/" + str(signer).encode()).digest()


@dataclass
class KeyedTagScheme(SignatureScheme):
    """Deterministic keyed-tag stand-in for simulation.

    A tag is a truncated HMAC of the signed bytes under a per-replica secret;
    verification recomputes it. Only unforgeable against code that does not
    read the secrets, which holds for the simulator's adversaries.
    """

    seed: bytes = b"ringbft"
    sig_len: int = 16
    name: str = "keyed-tag"
    _keys: dict = field(default_factory=dict, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def _key(self, signer: int) -> bytes:
        k = self._keys.get(signer)
        if k is None:
            k = self._keys[signer] = _replica_secret(self.seed, signer)
        return k

    def sign(self, signer: int, data: bytes) -> bytes:
        return hmac.new(self._key(signer), data, hashlib.sha256).digest()[: self.sig_len]

    def verify(self, signer: int, data: bytes, sig: bytes) -> bool:
        if signer < 0:
            return False
        key = (signer, data, sig)
        ok = self._cache.get(key)
        if ok is None:
            ok = hmac.compare_digest(self.sign(signer, data), sig)
            if len(self._cache) > 200_000:
                self._cache.clear()
            self._cache[key] = ok
        return ok


class Ed25519Scheme(SignatureScheme):
    """Ed25519 signatures; keys derived from a shared deployment seed.

    Deriving every private key from one seed is a test-deployment shortcut;
    a real deployment would load per-replica keys and only public keys of peers.
    """

    name = "ed25519"
    sig_len = 64

    def __init__(self, seed: bytes = b"ringbft", n: int | None = None):
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        self.seed = seed
        self._priv: dict[int, object] = {}
        self._pub: dict[int, object] = {}
        self._cls = Ed25519PrivateKey
        self._cache: dict = {}
        for r in range(n or 0):
            self._load(r)

    def _load(self, r: int):
        if r not in self._priv:
            priv = self._cls.from_private_bytes(_replica_secret(self.seed, r))
            self._priv[r] = priv
            self._pub[r] = priv.public_key()
        return self._priv[r]

    def sign(self, signer: int, data: bytes) -> bytes:
        return self._load(signer).sign(data)

    def verify(self, signer: int, data: bytes, sig: bytes) -> bool:
        from cryptography.exceptions import InvalidSignature

        if signer < 0 or len(sig) != 64:
            return False
        key = (signer, data, sig)
        ok = self._cache.get(key)
        if ok is not None:
            return ok
        self._load(signer)
        try:
            self._pub[signer].verify(sig, data)
            ok = True
        except InvalidSignature:
            ok = False
        if len(self._cache) > 100_000:
            self._cache.clear()
        self._cache[key] = ok
        return ok


def make_scheme(name: str, seed: bytes = b"ringbft", n: int | None = None) -> SignatureScheme:
    if name in ("keyed-tag", "tag", "sim"):
        return KeyedTagScheme(seed=seed)
    if name == "ed25519":
        return Ed25519Scheme(seed=seed, n=n)
    raise ConfigError(f"unknown signature scheme {name!r}")


def quorum_intersection(n: int, f: int, q: int | None = None) -> int:
    """Minimum overlap of two quorums of size ``q`` among ``n`` replicas."""
    q = commit_quorum(f) if q is None else q
    return max(0, 2 * q - n)


def distinct(items: Iterable) -> bool:
    seen = set()
    for x in items:
        if x in seen:
            return False
        seen.add(x)
    return True
