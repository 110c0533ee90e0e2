"""Semi-honest inference behind one ``run_batch`` contract.

:class:`OracleBackend` evaluates in the clear. :class:`TwoPartyBackend` runs
client, server and dealer endpoints over additive shares, in-process or
over TCP, and reports channel statistics.
"""
from __future__ import annotations

import logging
import socket
import threading
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..model import FixedPointNetwork
from ..rng import as_rng
from .channel import (
    Channel,
    PeerAborted,
    ProtocolError,
    SocketChannel,
    TransportError,
    connect,
    listen,
    queue_pair,
)
from .endpoints import Architecture, run_client, run_dealer, run_server
from .sharing import DealerState, beaver_matvec, dealer_relu, reconstruct, share
from .wire import MsgType

__all__ = [
    "ChannelStats",
    "OracleBackend",
    "TwoPartyBackend",
    "ProtocolError",
    "TransportError",
    "resolve_assignment",
    "share",
    "reconstruct",
    "beaver_matvec",
    "dealer_relu",
    "DealerState",
    "serve_dealer",
    "serve_server",
]

logger = logging.getLogger(__name__)


@dataclass
class ChannelStats:
    bytes_client_to_server: int = 0
    bytes_server_to_client: int = 0
    bytes_dealer_total: int = 0
    rounds: int = 0

    @property
    def client_server_total(self) -> int:
        return self.bytes_client_to_server + self.bytes_server_to_client

    def as_dict(self) -> dict:
        return asdict(self)


def resolve_assignment(server, samples) -> Callable[[int], FixedPointNetwork]:
    """Turn an honest model or an adversary into ``position -> model``.

    An adversary is anything with ``assign(samples) -> list of models``; it
    sees the server's view of the batch and nothing else.
    """
    if isinstance(server, FixedPointNetwork):
        return lambda p: server
    models = list(server.assign(samples))
    if len(models) != len(samples):
        raise ValueError("adversary must assign one model per position")
    return models.__getitem__


class OracleBackend:
    """Plaintext evaluation; the reference every other backend must match."""

    kind = "oracle"

    def run_batch(self, server, samples):
        samples = np.atleast_2d(np.asarray(samples, dtype=np.int64))
        assign = resolve_assignment(server, samples)
        labels = np.empty(len(samples), dtype=np.int64)
        by_model = {}
        for p in range(len(samples)):
            m = assign(p)
            by_model.setdefault(id(m), (m, []))[1].append(p)
        for model, positions in by_model.values():
            labels[positions] = model.predict_fixed(samples[positions])
        return labels, ChannelStats()


def _notify_abort(*channels):
    for ch in channels:
        try:
            ch.send(MsgType.ABORT)
        except Exception:
            pass


def _join(threads, errors):
    for t in threads:
        t.join()
    if errors:
        raise errors[0]


class TwoPartyBackend:
    """Secret-shared evaluation across client, server and dealer endpoints.

    ``transport`` is ``"memory"`` (threads and queues) or ``"tcp"``. With
    ``"tcp"`` and no addresses, dealer and server are started on local
    ephemeral ports; with ``dealer_addr``/``server_addr`` this process acts
    as the client only and connects to already running endpoints.
    """

    kind = "two-party"

    def __init__(self, transport="memory", seed=0, dealer_addr=None, server_addr=None, timeout=60.0, record=False):
        if transport not in ("memory", "tcp"):
            raise ValueError(f"unknown transport {transport!r}")
        self.transport = transport
        self.seed = seed
        self.dealer_addr = dealer_addr
        self.server_addr = server_addr
        self.timeout = timeout
        self.record = record
        self.last_transcript = None
        self.last_logits = None
        self._batches = 0

    def _rngs(self):
        root = as_rng(self.seed).child("two-party", self._batches)
        self._batches += 1
        return root.child("client"), root.child("server"), root.child("dealer")

    def run_batch(self, server, samples):
        samples = np.atleast_2d(np.asarray(samples, dtype=np.int64))
        if self.transport == "tcp" and (self.dealer_addr or self.server_addr):
            if server is not None:
                logger.info("remote endpoints in use; local server argument ignored")
            return self._run_remote(samples)
        if server is None:
            raise ValueError("a model or adversary is required for local endpoints")
        return self._run_local(server, samples)

    def _run_local(self, server, samples):
        assign = resolve_assignment(server, samples)
        arch = Architecture.of(assign(0))
        c_rng, s_rng, d_rng = self._rngs()
        errors: List[BaseException] = []

        def guarded(fn, *args):
            def body():
                try:
                    fn(*args)
                except BaseException as exc:  # surfaced by _join
                    errors.append(exc)
                    _notify_abort(*[ch for ch in args if isinstance(ch, Channel)])

            return threading.Thread(target=body, daemon=True)

        if self.transport == "memory":
            c_s, s_c = queue_pair("client->server", "server->client", self.timeout, record_a=self.record)
            c_d, d_c = queue_pair("client->dealer", "dealer->client", self.timeout, record_a=self.record)
            s_d, d_s = queue_pair("server->dealer", "dealer->server", self.timeout)
            threads = [guarded(run_dealer, d_c, d_s, d_rng), guarded(run_server, assign, arch, s_c, s_d, s_rng)]
            for t in threads:
                t.start()
            chans = (c_s, s_c, c_d, d_c, s_d, d_s)
            try:
                result = run_client(samples, c_s, c_d, c_rng)
            except BaseException:
                _notify_abort(c_s, c_d)
                for t in threads:
                    t.join()
                raise
            _join(threads, errors)
        else:
            dealer_sock = listen("127.0.0.1:0")
            dealer_addr = "127.0.0.1:%d" % dealer_sock.getsockname()[1]
            holder = {}
            server_ready = threading.Event()

            def dealer_main():
                d_s, d_c = _accept_pair(dealer_sock, self.timeout)
                holder["dealer"] = (d_c, d_s)
                try:
                    run_dealer(d_c, d_s, d_rng)
                finally:
                    d_c.close(); d_s.close()

            def server_main():
                # dealer first, then open our own port for the client
                s_d = connect(dealer_addr, "server->dealer", self.timeout)
                server_sock = listen("127.0.0.1:0")
                holder["server_addr"] = "127.0.0.1:%d" % server_sock.getsockname()[1]
                server_ready.set()
                server_sock.settimeout(self.timeout)
                try:
                    conn, _ = server_sock.accept()
                finally:
                    server_sock.close()
                s_c = SocketChannel(conn, "server->client", self.timeout)
                holder["server"] = (s_c, s_d)
                try:
                    run_server(assign, arch, s_c, s_d, s_rng)
                finally:
                    s_c.close(); s_d.close()

            threads = [guarded(dealer_main), guarded(server_main)]
            threads[0].start()
            threads[1].start()
            if not server_ready.wait(self.timeout):
                _join(threads, errors)
                raise TransportError("server endpoint did not start")
            c_s = connect(holder["server_addr"], "client->server", self.timeout)
            c_s.transcript = [] if self.record else None
            c_d = connect(dealer_addr, "client->dealer", self.timeout)
            c_d.transcript = [] if self.record else None
            try:
                result = run_client(samples, c_s, c_d, c_rng)
            finally:
                c_s.close(); c_d.close()
            _join(threads, errors)
            s_c, s_d = holder["server"]
            d_c, d_s = holder["dealer"]
            chans = (c_s, s_c, c_d, d_c, s_d, d_s)

        c_s, s_c, c_d, d_c, s_d, d_s = chans
        stats = ChannelStats(
            bytes_client_to_server=c_s.bytes_sent,
            bytes_server_to_client=s_c.bytes_sent,
            bytes_dealer_total=d_c.bytes_sent + d_s.bytes_sent + c_d.bytes_sent + s_d.bytes_sent,
            rounds=result.rounds,
        )
        self.last_logits = result.logits
        if self.record:
            self.last_transcript = {"from_server": c_s.transcript, "from_dealer": c_d.transcript}
        return result.labels.astype(np.int64), stats

    def _run_remote(self, samples):
        if not (self.dealer_addr and self.server_addr):
            raise ValueError("both dealer_addr and server_addr are required")
        c_rng, _, _ = self._rngs()
        # the server connects to the dealer before accepting us, so the
        # dealer sees the server first
        c_s = connect(self.server_addr, "client->server", self.timeout)
        c_d = connect(self.dealer_addr, "client->dealer", self.timeout)
        try:
            result = run_client(samples, c_s, c_d, c_rng)
        finally:
            c_s.close(); c_d.close()
        stats = ChannelStats(
            bytes_client_to_server=c_s.bytes_sent,
            bytes_server_to_client=c_s.bytes_received,
            bytes_dealer_total=c_d.bytes_sent + c_d.bytes_received,
            rounds=result.rounds,
        )
        self.last_logits = result.logits
        return result.labels.astype(np.int64), stats


def _accept_pair(sock: socket.socket, timeout: float):
    """Dealer side: the server connects first, then the client."""
    sock.settimeout(timeout)
    try:
        first, _ = sock.accept()
        second, _ = sock.accept()
    except socket.timeout:
        raise TransportError("dealer: peers did not connect in time") from None
    finally:
        sock.close()
    return SocketChannel(first, "dealer->server", timeout), SocketChannel(second, "dealer->client", timeout)


def serve_dealer(addr: str, seed=0, timeout: float = 600.0) -> int:
    """Run one dealer session on ``addr``; returns the batch size served."""
    sock = listen(addr)
    logger.info("dealer listening on %s", addr)
    d_s, d_c = _accept_pair(sock, timeout)
    try:
        return run_dealer(d_c, d_s, as_rng(seed).child("dealer"))
    finally:
        d_c.close(); d_s.close()


def serve_server(addr: str, dealer_addr: str, server, seed=0, timeout: float = 600.0) -> int:
    """Run one server session: connect to the dealer, then accept the client.

    ``server`` must be an honest model here; adversaries need the batch
    before it exists, so they run only with local endpoints.
    """
    if not isinstance(server, FixedPointNetwork):
        raise TypeError("remote server endpoints serve a fixed model")
    s_d = connect(dealer_addr, "server->dealer", timeout)
    sock = listen(addr)
    logger.info("server listening on %s", addr)
    sock.settimeout(timeout)
    try:
        conn, _ = sock.accept()
    finally:
        sock.close()
    s_c = SocketChannel(conn, "server->client", timeout)
    try:
        return run_server(lambda p: server, Architecture.of(server), s_c, s_d, as_rng(seed).child("server"))
    finally:
        s_c.close(); s_d.close()
