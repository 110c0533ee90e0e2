import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fusion.backend.channel import PeerAborted, ProtocolError, queue_pair
from fusion.backend.wire import (
    HEADER_SIZE,
    FrameError,
    MsgType,
    decode_frame,
    decode_header,
    encode_frame,
    frame_size,
)


def test_exact_layout():
    frame = encode_frame(MsgType.OPENING, [1, 2**64 - 1])
    assert frame[:2] == b"\xfa\x51"
    assert frame[2] == 0x01 and frame[3] == 0x02
    assert frame[4:8] == struct.pack("<I", 16)
    assert frame[8:16] == (1).to_bytes(8, "little")
    assert frame[16:] == b"\xff" * 8
    assert len(frame) == frame_size(2)


def test_type_codes():
    assert [int(t) for t in MsgType] == [1, 2, 3, 4, 5, 6]


@given(st.sampled_from(list(MsgType)), st.lists(st.integers(0, 2**64 - 1), max_size=50))
def test_round_trip(t, words):
    got_t, got = decode_frame(encode_frame(t, words))
    assert got_t == t and got.tolist() == words


@pytest.mark.parametrize(
    "mutate, msg",
    [
        (lambda f: b"\xfa\x52" + f[2:], "magic"),
        (lambda f: f[:2] + b"\x02" + f[3:], "version"),
        (lambda f: f[:3] + b"\x07" + f[4:], "type"),
        (lambda f: f[:4] + struct.pack("<I", 12) + f[8:], "whole number"),
        (lambda f: f[:-1], "payload bytes"),
        (lambda f: f[:5], "short header"),
    ],
)
def test_rejects(mutate, msg):
    with pytest.raises(FrameError, match=msg):
        decode_frame(mutate(encode_frame(MsgType.RESULT, [5, 6])))


def test_header_only():
    assert decode_header(encode_frame(MsgType.ABORT)) == (MsgType.ABORT, 0)
    assert HEADER_SIZE == 8


class TestChannel:
    def test_accounting(self):
        a, b = queue_pair("a", "b")
        a.send(MsgType.SHARE_VECTOR, [1, 2, 3])
        assert b.recv(MsgType.SHARE_VECTOR, 3).tolist() == [1, 2, 3]
        assert a.bytes_sent == b.bytes_received == frame_size(3)

    def test_wrong_type_aborts_peer(self):
        a, b = queue_pair("a", "b")
        a.send(MsgType.OPENING, [1])
        with pytest.raises(ProtocolError, match="expected RESULT"):
            b.recv(MsgType.RESULT)
        with pytest.raises(PeerAborted):
            a.recv()

    def test_wrong_length_aborts(self):
        a, b = queue_pair("a", "b")
        a.send(MsgType.RESULT, [1])
        with pytest.raises(ProtocolError, match="expected 2"):
            b.recv(MsgType.RESULT, 2)

    def test_garbage_frame_aborts(self):
        a, b = queue_pair("a", "b")
        a._write(b"\x00" * 8)
        with pytest.raises(ProtocolError, match="framing violation"):
            b.recv()

    def test_recording(self):
        a, b = queue_pair("a", "b", record_b=True)
        a.send(MsgType.RESULT, [9])
        b.recv()
        assert b.transcript[0][0] == MsgType.RESULT
