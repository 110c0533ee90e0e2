"""Frame codec for the three-endpoint protocol.

    magic 0xFA51 (2 bytes, big-endian) | version 0x01 | msg_type (1 byte)
    | payload_len (u32, little-endian) | payload (little-endian u64 words)
"""
from __future__ import annotations

import enum
import struct
from typing import Tuple

import numpy as np

MAGIC = 0xFA51
VERSION = 0x01
HEADER = struct.Struct(">HBB")  # magic, version, type; length follows LE
HEADER_SIZE = 8
MAX_PAYLOAD = 1 << 31


class MsgType(enum.IntEnum):
    SHARE_VECTOR = 0x01
    OPENING = 0x02
    TRIPLE_ISSUE = 0x03
    MASKED_VALUE = 0x04
    RESULT = 0x05
    ABORT = 0x06


class FrameError(ValueError):
    """Malformed or unexpected frame."""


def encode_frame(msg_type: MsgType, words=()) -> bytes:
    payload = np.ascontiguousarray(np.asarray(words, dtype=np.uint64).reshape(-1), dtype="<u8").tobytes()
    return HEADER.pack(MAGIC, VERSION, int(msg_type)) + struct.pack("<I", len(payload)) + payload


def decode_header(header: bytes) -> Tuple[MsgType, int]:
    if len(header) != HEADER_SIZE:
        raise FrameError(f"short header: {len(header)} bytes")
    magic, version, mtype = HEADER.unpack_from(header)
    (length,) = struct.unpack_from("<I", header, 4)
    if magic != MAGIC:
        raise FrameError(f"bad magic 0x{magic:04X}")
    if version != VERSION:
        raise FrameError(f"unsupported version {version}")
    try:
        msg_type = MsgType(mtype)
    except ValueError:
        raise FrameError(f"unknown message type 0x{mtype:02X}") from None
    if length % 8:
        raise FrameError(f"payload length {length} is not a whole number of words")
    if length > MAX_PAYLOAD:
        raise FrameError(f"payload length {length} too large")
    return msg_type, length


def decode_payload(payload: bytes) -> np.ndarray:
    return np.frombuffer(payload, dtype="<u8").astype(np.uint64)


def decode_frame(frame: bytes) -> Tuple[MsgType, np.ndarray]:
    msg_type, length = decode_header(frame[:HEADER_SIZE])
    if len(frame) != HEADER_SIZE + length:
        raise FrameError(f"frame holds {len(frame) - HEADER_SIZE} payload bytes, header says {length}")
    return msg_type, decode_payload(frame[HEADER_SIZE:])


def frame_size(n_words: int) -> int:
    return HEADER_SIZE + 8 * n_words
