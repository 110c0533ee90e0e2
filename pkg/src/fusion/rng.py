"""Seedable, splittable randomness backed by the ChaCha20 keystream."""
from __future__ import annotations

import hashlib
import struct

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

_CHUNK = 4096


class ChaChaRNG:
    """Deterministic cryptographic RNG.

    The 256-bit key is SHA-256 of the seed material, so two generators built
    from the same seed produce the same stream. :meth:`child` derives an
    independent stream for a named purpose.
    """

    def __init__(self, seed=0, *, _key: bytes | None = None):
        if _key is None:
            _key = hashlib.sha256(b"fusion-rng:" + _seed_bytes(seed)).digest()
        self._key = _key
        cipher = Cipher(algorithms.ChaCha20(_key, b"\x00" * 16), mode=None)
        self._enc = cipher.encryptor()
        self._buf = b""
        self._pos = 0

    def child(self, *labels) -> "ChaChaRNG":
        h = hashlib.sha256(self._key)
        for label in labels:
            h.update(b"/" + _seed_bytes(label))
        return ChaChaRNG(_key=h.digest())

    def bytes(self, n: int) -> bytes:
        out = bytearray()
        while n > 0:
            if self._pos >= len(self._buf):
                self._buf = self._enc.update(b"\x00" * max(_CHUNK, n))
                self._pos = 0
            take = min(n, len(self._buf) - self._pos)
            out += self._buf[self._pos : self._pos + take]
            self._pos += take
            n -= take
        return bytes(out)

    def words(self, n: int) -> np.ndarray:
        """``n`` uniform ring elements as ``uint64``."""
        return np.frombuffer(self.bytes(8 * n), dtype="<u8").astype(np.uint64)

    def randbelow(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by rejection sampling."""
        if n <= 0:
            raise ValueError("n must be positive")
        if n == 1:
            return 0
        bits = (n - 1).bit_length()
        nbytes = (bits + 7) // 8
        mask = (1 << bits) - 1
        while True:
            v = int.from_bytes(self.bytes(nbytes), "little") & mask
            if v < n:
                return v

    def random(self) -> float:
        """Uniform float in ``[0, 1)`` with 53 random bits."""
        return (struct.unpack("<Q", self.bytes(8))[0] >> 11) * (1.0 / (1 << 53))

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for j in range(len(items) - 1, 0, -1):
            k = self.randbelow(j + 1)
            items[j], items[k] = items[k], items[j]

    def permutation(self, n: int) -> list[int]:
        perm = list(range(n))
        self.shuffle(perm)
        return perm

    def sample(self, n: int, k: int) -> list[int]:
        """``k`` distinct indices from ``range(n)``, uniformly."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} of {n}")
        pool = list(range(n))
        for j in range(k):
            r = j + self.randbelow(n - j)
            pool[j], pool[r] = pool[r], pool[j]
        return pool[:k]


def _seed_bytes(seed) -> bytes:
    if isinstance(seed, ChaChaRNG):
        return seed._key
    if isinstance(seed, bytes):
        return seed
    if isinstance(seed, int):
        return b"i" + seed.to_bytes((seed.bit_length() + 8) // 8 or 1, "little", signed=True)
    return b"s" + str(seed).encode()


def as_rng(seed) -> ChaChaRNG:
    return seed if isinstance(seed, ChaChaRNG) else ChaChaRNG(seed)
