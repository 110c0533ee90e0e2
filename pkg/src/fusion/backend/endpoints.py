"""Client, server and dealer state machines.

Each endpoint owns its state and talks only through :class:`Channel`
objects, so the same code runs over in-memory queues or TCP sockets.

Message schedule for one batch of ``N`` samples:

    server -> client, dealer   SHARE_VECTOR  public architecture + output head
    client -> server, dealer   SHARE_VECTOR  [N]
    server -> client           SHARE_VECTOR  client's shares of every weight matrix
    per sample, per layer:
      dense:  dealer -> both   TRIPLE_ISSUE  [nonce, A_j, b_j, c_j, mask_j]
              client -> server SHARE_VECTOR  server's share of the input (first layer only)
              both <-> peer    OPENING       [nonce, W_j - A_j, x_j - b_j]
              both -> dealer   MASKED_VALUE  [nonce, z_j + mask_j]
              dealer -> both   SHARE_VECTOR  fresh shares of trunc(W x); server adds bias
      gate:   dealer -> both   TRIPLE_ISSUE  [nonce, mask_j]
              both -> dealer   MASKED_VALUE  [nonce, h_j + mask_j]
              dealer -> both   SHARE_VECTOR  fresh shares of relu(h) or trunc(h*h)
    per sample: server -> client RESULT      server's share of the logits

One round is counted per dense layer, per gate and per result reveal.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..fixedpoint import from_ring, to_ring
from ..model import DefenseParams, FixedPointNetwork, head_labels
from ..rng import ChaChaRNG
from .channel import Channel, ProtocolError
from .sharing import (
    DealerState,
    MaskShare,
    NonceRegistry,
    ReuseError,
    TripleShare,
    _add,
    _sub,
    combine_step,
    open_step,
    reconstruct,
    share,
)
from .wire import MsgType

logger = logging.getLogger(__name__)

_LAYER_CODES = {"dense": 1, "relu": 2, "square": 3}
_LAYER_NAMES = {v: k for k, v in _LAYER_CODES.items()}


@dataclass(frozen=True)
class Architecture:
    """What every endpoint may know about the served model."""

    scale_bits: int
    layers: tuple  # ("dense", rows, cols) | ("relu",) | ("square",)
    classifier: str = "argmax"
    defense: Optional[DefenseParams] = None

    @classmethod
    def of(cls, model: FixedPointNetwork) -> "Architecture":
        return cls(model.scale_bits, tuple(model.architecture()), model.classifier, model.defense_)

    @property
    def in_dim(self) -> int:
        return self.layers[0][2]

    @property
    def dense_shapes(self) -> List[tuple]:
        return [l[1:] for l in self.layers if l[0] == "dense"]

    def to_words(self) -> np.ndarray:
        w = [self.scale_bits, len(self.layers)]
        for l in self.layers:
            w += [_LAYER_CODES[l[0]], *(l[1:] if l[0] == "dense" else (0, 0))]
        d = self.defense
        floats = [d.beta, d.gamma, d.clamp_eps] if d else [0.0, 0.0, 0.0]
        w += [int(self.classifier == "softmax"), int(d is not None)]
        words = np.array(w, dtype=np.uint64)
        return np.concatenate([words, np.array(floats, dtype=np.float64).view(np.uint64)])

    @classmethod
    def from_words(cls, words) -> "Architecture":
        w = [int(v) for v in words]
        try:
            f, n = w[0], w[1]
            layers = []
            for k in range(n):
                code, rows, cols = w[2 + 3 * k : 5 + 3 * k]
                name = _LAYER_NAMES[code]
                layers.append(("dense", rows, cols) if name == "dense" else (name,))
            o = 2 + 3 * n
            classifier = "softmax" if w[o] else "argmax"
            beta, gamma, eps = np.asarray(words[o + 2 : o + 5], dtype=np.uint64).view(np.float64)
            defense = DefenseParams(float(beta), float(gamma), float(eps)) if w[o + 1] else None
        except (IndexError, KeyError, ValueError) as exc:
            raise ProtocolError(f"malformed architecture message: {exc}") from None
        return cls(f, tuple(layers), classifier, defense)


@dataclass
class ClientResult:
    labels: np.ndarray
    logits: np.ndarray
    rounds: int


def _check_nonce(registry: NonceRegistry, nonce: int, channel: Channel):
    try:
        registry.use(nonce)
    except ReuseError as exc:
        channel.abort(str(exc))


def _party_dense(j, W_j, h_j, rows, cols, peer: Channel, dealer: Channel, seen: NonceRegistry):
    triple = TripleShare.from_words(dealer.recv(MsgType.TRIPLE_ISSUE, 1 + rows * cols + cols + 2 * rows), rows, cols)
    _check_nonce(seen, triple.nonce, dealer)
    E_j, f_j = open_step(W_j, h_j, triple)
    peer.send(MsgType.OPENING, np.concatenate([[np.uint64(triple.nonce)], E_j.reshape(-1), f_j]))
    other = peer.recv(MsgType.OPENING, 1 + rows * cols + cols)
    if int(other[0]) != triple.nonce:
        peer.abort(f"opening for nonce {int(other[0])}, expected {triple.nonce}")
    E = _add(E_j, other[1 : 1 + rows * cols].reshape(rows, cols))
    f = _add(f_j, other[1 + rows * cols :])
    z_j = combine_step(j, E, f, triple)
    dealer.send(MsgType.MASKED_VALUE, np.concatenate([[np.uint64(triple.nonce)], _add(z_j, triple.mask)]))
    return dealer.recv(MsgType.SHARE_VECTOR, rows)


def _party_gate(h_j, dealer: Channel, seen: NonceRegistry):
    mask = MaskShare.from_words(dealer.recv(MsgType.TRIPLE_ISSUE, 1 + len(h_j)))
    _check_nonce(seen, mask.nonce, dealer)
    dealer.send(MsgType.MASKED_VALUE, np.concatenate([[np.uint64(mask.nonce)], _add(h_j, mask.mask)]))
    return dealer.recv(MsgType.SHARE_VECTOR, len(h_j))


def run_client(samples, to_server: Channel, to_dealer: Channel, rng: ChaChaRNG) -> ClientResult:
    """Client endpoint: inputs fixed-point rows, learns one label per row."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.int64))
    arch = Architecture.from_words(to_server.recv(MsgType.SHARE_VECTOR))
    if samples.shape[1] != arch.in_dim:
        to_server.abort(f"samples have {samples.shape[1]} features, model expects {arch.in_dim}")
    n = len(samples)
    to_server.send(MsgType.SHARE_VECTOR, [n])
    to_dealer.send(MsgType.SHARE_VECTOR, [n])

    shapes = arch.dense_shapes
    flat = to_server.recv(MsgType.SHARE_VECTOR, sum(r * c for r, c in shapes))
    W0, o = [], 0
    for r, c in shapes:
        W0.append(flat[o : o + r * c].reshape(r, c))
        o += r * c

    seen = NonceRegistry("triple")
    rounds = 0
    logits = np.zeros((n, shapes[-1][0]), dtype=np.int64)
    for s in range(n):
        x0, x1 = share(samples[s], rng)
        h, d = x0, 0
        for k, layer in enumerate(arch.layers):
            if layer[0] == "dense":
                if k == 0:
                    to_server.send(MsgType.SHARE_VECTOR, x1)
                h = _party_dense(0, W0[d], h, layer[1], layer[2], to_server, to_dealer, seen)
                d += 1
            else:
                h = _party_gate(h, to_dealer, seen)
            rounds += 1
        logits[s] = reconstruct(h, to_server.recv(MsgType.RESULT, len(h)))
        rounds += 1
    labels = head_labels(logits, arch.scale_bits, arch.classifier, arch.defense)
    return ClientResult(labels, logits, rounds)


ModelAssigner = Callable[[int], FixedPointNetwork]


def run_server(assign: ModelAssigner, arch: Architecture, to_client: Channel, to_dealer: Channel, rng: ChaChaRNG) -> int:
    """Server endpoint. ``assign(position)`` gives the network evaluated at
    that batch position; all must share ``arch``. Returns the batch size."""
    words = arch.to_words()
    to_dealer.send(MsgType.SHARE_VECTOR, words)
    to_client.send(MsgType.SHARE_VECTOR, words)
    (n,) = to_client.recv(MsgType.SHARE_VECTOR, 1)
    n = int(n)

    shapes = arch.dense_shapes
    W0 = [rng.words(r * c).reshape(r, c) for r, c in shapes]
    to_client.send(MsgType.SHARE_VECTOR, np.concatenate([w.reshape(-1) for w in W0]) if W0 else [])

    seen = NonceRegistry("triple")
    cache = {}
    for s in range(n):
        model = assign(s)
        key = id(model)
        if key not in cache:
            if Architecture.of(model).layers != arch.layers:
                to_client.abort("server model changed shape mid-batch")
            dense = model.dense_layers
            cache[key] = [(_sub(to_ring(l.weights), W0[k]), to_ring(l.bias)) for k, l in enumerate(dense)]
        params = cache[key]
        h, d = None, 0
        for k, layer in enumerate(arch.layers):
            if layer[0] == "dense":
                if k == 0:
                    h = to_client.recv(MsgType.SHARE_VECTOR, layer[2])
                W1, bias = params[d]
                h = _add(_party_dense(1, W1, h, layer[1], layer[2], to_client, to_dealer, seen), bias)
                d += 1
            else:
                h = _party_gate(h, to_dealer, seen)
        to_client.send(MsgType.RESULT, h)
    return n


def run_dealer(to_client: Channel, to_server: Channel, rng: ChaChaRNG) -> int:
    """Dealer endpoint: correlated randomness, truncation and gates."""
    arch = Architecture.from_words(to_server.recv(MsgType.SHARE_VECTOR))
    (n,) = to_client.recv(MsgType.SHARE_VECTOR, 1)
    state = DealerState(rng, arch.scale_bits)
    peers = (to_client, to_server)

    def finish(nonce, width):
        masked = []
        for ch in peers:
            w = ch.recv(MsgType.MASKED_VALUE, 1 + width)
            if int(w[0]) != nonce:
                ch.abort(f"masked value for nonce {int(w[0])}, expected {nonce}")
            masked.append(w[1:])
        try:
            out = state.finish(nonce, *masked)
        except ReuseError as exc:
            to_client.abort(str(exc))
        for ch, sh in zip(peers, out):
            ch.send(MsgType.SHARE_VECTOR, sh)

    for _ in range(int(n)):
        width = arch.in_dim
        for layer in arch.layers:
            if layer[0] == "dense":
                rows, cols = layer[1], layer[2]
                t = state.issue_triple(rows, cols)
                for ch, tj in zip(peers, t):
                    ch.send(MsgType.TRIPLE_ISSUE, tj.to_words())
                finish(t[0].nonce, rows)
                width = rows
            else:
                m = state.issue_mask(width, layer[0])
                for ch, mj in zip(peers, m):
                    ch.send(MsgType.TRIPLE_ISSUE, mj.to_words())
                finish(m[0].nonce, width)
    return int(n)
