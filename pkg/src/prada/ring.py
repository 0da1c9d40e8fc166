"""Consistent-hash ring: key partitioning and replica placement.

Keys map to 64-bit tokens via a murmur3-style hash (the x64 variant's first
word). Each node owns one or more tokens on the ring; the nodes responsible
for a key are found by walking clockwise from the key's token.
"""

from __future__ import annotations

from bisect import bisect_left
from random import Random

_M64 = (1 << 64) - 1
_C1 = 0x87C37B91114253D5
_C2 = 0x4CF5AD432745937F


class InvalidReplicationFactor(Exception):
    pass


def _rotl64(x: int, r: int) -> int:
    return ((x << r) | (x >> (64 - r))) & _M64


def _fmix64(k: int) -> int:
    k ^= k >> 33
    k = (k * 0xFF51AFD7ED558CCD) & _M64
    k ^= k >> 33
    k = (k * 0xC4CEB9FE1A85EC53) & _M64
    k ^= k >> 33
    return k


def murmur3_x64_128(data: bytes, seed: int = 0) -> tuple[int, int]:
    """128-bit murmur3 (x64 variant) as two unsigned 64-bit words."""
    length = len(data)
    h1 = h2 = seed & _M64
    nblocks = length // 16
    for i in range(nblocks):
        k1 = int.from_bytes(data[i * 16 : i * 16 + 8], "little")
        k2 = int.from_bytes(data[i * 16 + 8 : i * 16 + 16], "little")
        k1 = (k1 * _C1) & _M64
        k1 = _rotl64(k1, 31)
        k1 = (k1 * _C2) & _M64
        h1 ^= k1
        h1 = _rotl64(h1, 27)
        h1 = (h1 + h2) & _M64
        h1 = (h1 * 5 + 0x52DCE729) & _M64
        k2 = (k2 * _C2) & _M64
        k2 = _rotl64(k2, 33)
        k2 = (k2 * _C1) & _M64
        h2 ^= k2
        h2 = _rotl64(h2, 31)
        h2 = (h2 + h1) & _M64
        h2 = (h2 * 5 + 0x38495AB5) & _M64
    tail = data[nblocks * 16 :]
    if len(tail) > 8:
        k2 = int.from_bytes(tail[8:], "little")
        k2 = (k2 * _C2) & _M64
        k2 = _rotl64(k2, 33)
        k2 = (k2 * _C1) & _M64
        h2 ^= k2
    if tail:
        k1 = int.from_bytes(tail[:8], "little")
        k1 = (k1 * _C1) & _M64
        k1 = _rotl64(k1, 31)
        k1 = (k1 * _C2) & _M64
        h1 ^= k1
    h1 ^= length
    h2 ^= length
    h1 = (h1 + h2) & _M64
    h2 = (h2 + h1) & _M64
    h1 = _fmix64(h1)
    h2 = _fmix64(h2)
    h1 = (h1 + h2) & _M64
    h2 = (h2 + h1) & _M64
    return h1, h2


def hash_key(key: bytes | str) -> int:
    if isinstance(key, str):
        key = key.encode("utf-8")
    return murmur3_x64_128(key)[0]


class TokenRing:
    """Sorted token ring over a fixed node set.

    The ring is a value object: placement depends only on the (token, node)
    pairs, never on their insertion order.
    """

    def __init__(self, tokens: list[tuple[int, str]]):
        if not tokens:
            raise ValueError("ring needs at least one token")
        self.entries = sorted(tokens)
        self._tokens = [t for t, _ in self.entries]
        self._owners = [n for _, n in self.entries]
        if len(set(self._tokens)) != len(self._tokens):
            raise ValueError("duplicate tokens on the ring")
        self.node_ids = sorted(set(self._owners))

    @classmethod
    def equal_spaced(cls, node_ids: list[str], vnodes: int = 1) -> "TokenRing":
        """Tokens evenly spread over the key space, interleaving nodes."""
        n = len(node_ids)
        total = n * vnodes
        return cls([((i * (1 << 64)) // total, node_ids[i % n]) for i in range(total)])

    @classmethod
    def random_tokens(cls, node_ids: list[str], rng: Random, vnodes: int = 1) -> "TokenRing":
        taken: set[int] = set()
        tokens = []
        for node in node_ids:
            for _ in range(vnodes):
                t = rng.getrandbits(64)
                while t in taken:
                    t = rng.getrandbits(64)
                taken.add(t)
                tokens.append((t, node))
        return cls(tokens)

    def successor_index(self, token: int) -> int:
        """Index of the first ring entry at or after the token (wrapping)."""
        i = bisect_left(self._tokens, token)
        return i % len(self._tokens)

    def responsible_for_token(self, token: int, r: int) -> list[str]:
        if not 1 <= r <= len(self.node_ids):
            raise InvalidReplicationFactor(f"r={r} with {len(self.node_ids)} nodes")
        result: list[str] = []
        i = self.successor_index(token)
        for step in range(len(self.entries)):
            owner = self._owners[(i + step) % len(self.entries)]
            if owner not in result:
                result.append(owner)
                if len(result) == r:
                    break
        return result

    def responsible_nodes(self, key: bytes | str, r: int) -> list[str]:
        """The r distinct nodes clockwise from the key's ring position."""
        return self.responsible_for_token(hash_key(key), r)

    def to_json(self) -> list:
        return [[t, n] for t, n in self.entries]

    @classmethod
    def from_json(cls, doc: list) -> "TokenRing":
        return cls([(int(t), str(n)) for t, n in doc])
