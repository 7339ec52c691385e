"""Counter-mode SHA-256 PRNG for reproducible, publicly verifiable draws.

Draw ``k`` on stream ``label`` is ``SHA-256("<seed>,<label>,<k>")`` read as a
big-endian 256-bit integer.  Integers in ``range(n)`` come from rejection
sampling: values at or above the largest multiple of ``n`` that fits in
2**256 are discarded and the next counter value is used.  Nothing depends on
the platform's float or integer width.
"""

from __future__ import annotations

import hashlib

HASH_BITS = 256
HASH_RANGE = 1 << HASH_BITS


def hash_int(seed: str, label: str, counter: int) -> int:
    msg = f"{seed},{label},{counter}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(msg).digest(), "big")


def acceptance_limit(n: int) -> int:
    """Largest multiple of n that is <= 2**256; hash values below it are accepted."""
    return (HASH_RANGE // n) * n


class HashPRNG:
    def __init__(self, seed: str, label: str = "", counter: int = 0):
        if not isinstance(seed, str) or not seed:
            raise ValueError("seed must be a nonempty string")
        self.seed = seed
        self.label = label
        self.counter = counter

    def next_hash(self) -> int:
        self.counter += 1
        return hash_int(self.seed, self.label, self.counter)

    def randbelow(self, n: int) -> int:
        if n < 1:
            raise ValueError("range must be positive")
        limit = acceptance_limit(n)
        while True:
            h = self.next_hash()
            if h < limit:
                return h % n

    def shuffle(self, items: list) -> None:
        """Fisher-Yates, in place."""
        for i in range(len(items) - 1, 0, -1):
            k = self.randbelow(i + 1)
            items[i], items[k] = items[k], items[i]

    def sample(self, n: int, k: int) -> list[int]:
        """k distinct integers from range(n), in draw order."""
        pool = list(range(n))
        out = []
        for _ in range(k):
            r = self.randbelow(len(pool))
            out.append(pool[r])
            pool[r] = pool[-1]
            pool.pop()
        return out


def derive_prng(seed: str, stream_label: str) -> HashPRNG:
    return HashPRNG(seed, stream_label)
