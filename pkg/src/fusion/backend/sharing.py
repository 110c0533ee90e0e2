"""Additive sharing over Z_{2^64}, Beaver matrix-vector products and the
dealer's truncation / non-linear gates.

The dealer is a simulation device standing in for the semi-honest
functionality's non-linear sub-protocols: it sees reconstructed values.
Nothing here is private against the dealer.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from ..fixedpoint import from_ring, ring_matmul, to_ring, truncate
from ..rng import ChaChaRNG


class ReuseError(RuntimeError):
    """Correlated randomness presented twice."""


def share(x, rng: ChaChaRNG) -> Tuple[np.ndarray, np.ndarray]:
    """Split fixed-point ``x`` into two uniformly masked ring shares."""
    x = to_ring(np.asarray(x, dtype=np.int64))
    s0 = rng.words(x.size).reshape(x.shape)
    with np.errstate(over="ignore"):
        return s0, x - s0


def reconstruct(s0, s1) -> np.ndarray:
    with np.errstate(over="ignore"):
        return from_ring(np.asarray(s0, dtype=np.uint64) + np.asarray(s1, dtype=np.uint64))


def _add(*xs):
    with np.errstate(over="ignore"):
        out = np.asarray(xs[0], dtype=np.uint64)
        for x in xs[1:]:
            out = out + np.asarray(x, dtype=np.uint64)
        return out


def _sub(a, b):
    with np.errstate(over="ignore"):
        return np.asarray(a, dtype=np.uint64) - np.asarray(b, dtype=np.uint64)


@dataclass(frozen=True)
class TripleShare:
    """One party's share of ``(A, b, c = A b)`` plus a truncation mask share."""

    nonce: int
    A: np.ndarray  # (rows, cols)
    b: np.ndarray  # (cols,)
    c: np.ndarray  # (rows,)
    mask: np.ndarray  # (rows,)

    def to_words(self) -> np.ndarray:
        return np.concatenate([[np.uint64(self.nonce)], self.A.reshape(-1), self.b, self.c, self.mask]).astype(np.uint64)

    @classmethod
    def from_words(cls, words, rows: int, cols: int) -> "TripleShare":
        w = np.asarray(words, dtype=np.uint64)
        if len(w) != 1 + rows * cols + cols + 2 * rows:
            raise ValueError("triple payload has the wrong length")
        o = 1
        A = w[o : o + rows * cols].reshape(rows, cols); o += rows * cols
        b = w[o : o + cols]; o += cols
        c = w[o : o + rows]; o += rows
        return cls(int(w[0]), A, b, c, w[o : o + rows])


@dataclass(frozen=True)
class MaskShare:
    nonce: int
    mask: np.ndarray

    def to_words(self) -> np.ndarray:
        return np.concatenate([[np.uint64(self.nonce)], self.mask]).astype(np.uint64)

    @classmethod
    def from_words(cls, words) -> "MaskShare":
        w = np.asarray(words, dtype=np.uint64)
        return cls(int(w[0]), w[1:])


class NonceRegistry:
    """Rejects a nonce the second time it is seen."""

    def __init__(self, what: str = "triple"):
        self.what = what
        self._seen = set()

    def use(self, nonce: int) -> None:
        if nonce in self._seen:
            raise ReuseError(f"{self.what} {nonce} reused")
        self._seen.add(nonce)


def open_step(W_share, x_share, triple: TripleShare):
    """This party's contribution to the openings ``W - A`` and ``x - b``."""
    return _sub(W_share, triple.A), _sub(x_share, triple.b)


def combine_step(party: int, E, f, triple: TripleShare) -> np.ndarray:
    """Share of ``W x`` from the opened ``E = W - A`` and ``f = x - b``:
    ``[party == 0] E f + E b_j + A_j f + c_j``."""
    z = _add(ring_matmul(E, triple.b), ring_matmul(triple.A, f), triple.c)
    if party == 0:
        z = _add(z, ring_matmul(E, f))
    return z


class DealerState:
    """Issues triples and masks, and finishes masked gates.

    Every issued nonce can be redeemed exactly once.
    """

    def __init__(self, rng: ChaChaRNG, scale_bits: int):
        self.rng = rng
        self.scale_bits = scale_bits
        self._next = 1
        self._pending: Dict[int, Tuple[str, np.ndarray]] = {}
        self._spent = NonceRegistry("mask")

    def _nonce(self) -> int:
        n = self._next
        self._next += 1
        return n

    def issue_triple(self, rows: int, cols: int) -> Tuple[TripleShare, TripleShare]:
        w = self.rng.words
        A0, A1 = w(rows * cols).reshape(rows, cols), w(rows * cols).reshape(rows, cols)
        b0, b1 = w(cols), w(cols)
        c0 = w(rows)
        m0, m1 = w(rows), w(rows)
        c1 = _sub(ring_matmul(_add(A0, A1), _add(b0, b1)), c0)
        nonce = self._nonce()
        self._pending[nonce] = ("trunc", _add(m0, m1))
        return TripleShare(nonce, A0, b0, c0, m0), TripleShare(nonce, A1, b1, c1, m1)

    def issue_mask(self, width: int, gate: str) -> Tuple[MaskShare, MaskShare]:
        m0, m1 = self.rng.words(width), self.rng.words(width)
        nonce = self._nonce()
        self._pending[nonce] = (gate, _add(m0, m1))
        return MaskShare(nonce, m0), MaskShare(nonce, m1)

    def finish(self, nonce: int, masked0, masked1) -> Tuple[np.ndarray, np.ndarray]:
        """Unmask, apply the gate bound to ``nonce`` and reshare."""
        if nonce not in self._pending:
            self._spent.use(nonce)  # raises for a replay
            raise ReuseError(f"unknown nonce {nonce}")
        gate, mask = self._pending.pop(nonce)
        self._spent.use(nonce)
        z = from_ring(_sub(_add(masked0, masked1), mask))
        f = self.scale_bits
        if gate == "trunc":
            out = truncate(z, f)
        elif gate == "relu":
            out = np.maximum(z, 0)
        elif gate == "square":
            with np.errstate(over="ignore"):
                out = truncate(z * z, f)
        else:
            raise ValueError(f"unknown gate {gate}")
        return share(out, self.rng)


def beaver_matvec(W_shares, x_shares, triples, dealer: DealerState):
    """Shares of ``trunc(W x)`` from shares of ``W`` and ``x``.

    Runs both parties' local steps in-process; the networked endpoints use
    the same :func:`open_step` / :func:`combine_step` pair.
    """
    t0, t1 = triples
    E0, f0 = open_step(W_shares[0], x_shares[0], t0)
    E1, f1 = open_step(W_shares[1], x_shares[1], t1)
    E, f = _add(E0, E1), _add(f0, f1)
    z0 = combine_step(0, E, f, t0)
    z1 = combine_step(1, E, f, t1)
    return dealer.finish(t0.nonce, _add(z0, t0.mask), _add(z1, t1.mask))


def dealer_relu(x_shares, masks, dealer: DealerState):
    """Shares of ``max(x, 0)`` through the dealer (or the truncated square,
    if the masks were issued for a square gate)."""
    m0, m1 = masks
    return dealer.finish(m0.nonce, _add(x_shares[0], m0.mask), _add(x_shares[1], m1.mask))
