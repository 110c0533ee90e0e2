"""Reliable ordered duplex channels carrying protocol frames."""
from __future__ import annotations

import queue
import socket
import threading
from typing import List, Optional, Tuple

import numpy as np

from .wire import HEADER_SIZE, FrameError, MsgType, decode_frame, decode_header, decode_payload, encode_frame

DEFAULT_TIMEOUT = 60.0


class TransportError(ConnectionError):
    pass


class ProtocolError(RuntimeError):
    """Protocol violation; the endpoint has aborted."""


class PeerAborted(ProtocolError):
    pass


class Channel:
    """One endpoint's side of a pairwise link, with byte accounting.

    Subclasses move raw frames; this class handles framing checks, the
    expected-type discipline, abort propagation and counters.
    """

    def __init__(self, name: str = "", record: bool = False):
        self.name = name
        self.bytes_sent = 0
        self.bytes_received = 0
        self.frames_sent = 0
        self.transcript: Optional[List[Tuple[MsgType, np.ndarray]]] = [] if record else None
        self._closed = False

    def _write(self, frame: bytes) -> None:
        raise NotImplementedError

    def _read(self) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        self._closed = True

    def send(self, msg_type: MsgType, words=()) -> None:
        frame = encode_frame(msg_type, words)
        self._write(frame)
        self.bytes_sent += len(frame)
        self.frames_sent += 1

    def recv(self, expect: Optional[MsgType] = None, length: Optional[int] = None) -> np.ndarray:
        frame = self._read()
        self.bytes_received += len(frame)
        try:
            msg_type, words = decode_frame(frame)
        except FrameError as exc:
            self.abort(f"framing violation: {exc}")
        if self.transcript is not None:
            self.transcript.append((msg_type, words))
        if msg_type == MsgType.ABORT:
            raise PeerAborted(f"{self.name}: peer aborted")
        if expect is not None and msg_type != expect:
            self.abort(f"expected {expect.name}, got {msg_type.name}")
        if length is not None and len(words) != length:
            self.abort(f"{msg_type.name} carries {len(words)} words, expected {length}")
        return words

    def abort(self, reason: str):
        try:
            self.send(MsgType.ABORT)
        except Exception:
            pass
        raise ProtocolError(f"{self.name}: {reason}")


class QueueChannel(Channel):
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, name: str = "", timeout: float = DEFAULT_TIMEOUT, record=False):
        super().__init__(name, record)
        self._inbox = inbox
        self._outbox = outbox
        self._timeout = timeout

    def _write(self, frame: bytes) -> None:
        self._outbox.put(frame)

    def _read(self) -> bytes:
        try:
            return self._inbox.get(timeout=self._timeout)
        except queue.Empty:
            raise TransportError(f"{self.name}: receive timed out") from None


def queue_pair(name_a: str, name_b: str, timeout: float = DEFAULT_TIMEOUT, record_a=False, record_b=False):
    ab, ba = queue.Queue(), queue.Queue()
    return (
        QueueChannel(ba, ab, name_a, timeout, record_a),
        QueueChannel(ab, ba, name_b, timeout, record_b),
    )


class SocketChannel(Channel):
    def __init__(self, sock: socket.socket, name: str = "", timeout: float = DEFAULT_TIMEOUT, record=False):
        super().__init__(name, record)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(timeout)
        self._sock = sock
        self._lock = threading.Lock()

    def _write(self, frame: bytes) -> None:
        try:
            with self._lock:
                self._sock.sendall(frame)
        except OSError as exc:
            raise TransportError(f"{self.name}: send failed: {exc}") from None

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self._sock.recv(n - len(buf))
            except OSError as exc:
                raise TransportError(f"{self.name}: receive failed: {exc}") from None
            if not chunk:
                raise TransportError(f"{self.name}: connection closed")
            buf += chunk
        return bytes(buf)

    def _read(self) -> bytes:
        header = self._read_exact(HEADER_SIZE)
        try:
            _, length = decode_header(header)
        except FrameError as exc:
            self.abort(f"framing violation: {exc}")
        return header + self._read_exact(length)

    def close(self) -> None:
        super().close()
        try:
            self._sock.close()
        except OSError:
            pass


def parse_addr(addr: str) -> Tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {addr!r}")
    return host, int(port)


def connect(addr: str, name: str, timeout: float = DEFAULT_TIMEOUT, retries: int = 50) -> SocketChannel:
    import time

    host, port = parse_addr(addr)
    last = None
    for _ in range(retries):
        try:
            return SocketChannel(socket.create_connection((host, port), timeout=timeout), name, timeout)
        except OSError as exc:
            last = exc
            time.sleep(0.1)
    raise TransportError(f"{name}: cannot connect to {addr}: {last}")


def listen(addr: str) -> socket.socket:
    host, port = parse_addr(addr)
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen(4)
    return srv
