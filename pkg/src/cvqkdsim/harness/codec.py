"""Length-prefixed framing for the classical channel.

A frame is a 4-byte big-endian payload length, one type byte, then the
payload. The channel is unauthenticated.
"""

from __future__ import annotations

import enum
import io
import struct
from dataclasses import dataclass

__all__ = ["MessageType", "ClassicalMessage", "CodecError", "encode", "decode",
           "decode_stream", "ClassicalChannel"]

_HEADER = struct.Struct(">IB")


class MessageType(enum.IntEnum):
    FRAME_IDS = 1
    MD_MAPS = 2
    SYNDROME = 3
    VERIFY_HASH = 4
    PE_DATA = 5
    PA_SEED = 6
    KEY_ID_ANNOUNCE = 7


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class ClassicalMessage:
    type: MessageType
    payload: bytes = b""

    def __post_init__(self):
        try:
            object.__setattr__(self, "type", MessageType(self.type))
        except ValueError:
            raise CodecError(f"unknown message type {self.type!r}") from None
        object.__setattr__(self, "payload", bytes(self.payload))


def encode(msg: ClassicalMessage) -> bytes:
    return _HEADER.pack(len(msg.payload), int(msg.type)) + msg.payload


def decode(data: bytes) -> ClassicalMessage:
    """Decode exactly one frame; trailing or missing bytes are errors."""
    msg, used = _decode_at(data, 0)
    if used != len(data):
        raise CodecError(f"{len(data) - used} trailing bytes after frame")
    return msg


def decode_stream(data: bytes) -> list[ClassicalMessage]:
    """All frames in ``data``; a truncated tail raises and yields nothing."""
    out, pos = [], 0
    while pos < len(data):
        msg, pos = _decode_at(data, pos)
        out.append(msg)
    return out


def _decode_at(data: bytes, pos: int) -> tuple[ClassicalMessage, int]:
    if len(data) - pos < _HEADER.size:
        raise CodecError("truncated header")
    length, kind = _HEADER.unpack_from(data, pos)
    start = pos + _HEADER.size
    if len(data) - start < length:
        raise CodecError(f"truncated payload: need {length}, have {len(data) - start}")
    return ClassicalMessage(kind, data[start:start + length]), start + length


class ClassicalChannel:
    """Ordered, reliable byte pipe with one buffer per direction."""

    def __init__(self):
        self._buf = {"tx->rx": io.BytesIO(), "rx->tx": io.BytesIO()}
        self._read = {"tx->rx": 0, "rx->tx": 0}
        self.bytes_sent = 0

    def send(self, direction: str, msg: ClassicalMessage) -> None:
        frame = encode(msg)
        self._buf[direction].write(frame)
        self.bytes_sent += len(frame)

    def receive(self, direction: str, expect: MessageType | None = None) -> ClassicalMessage:
        data = self._buf[direction].getvalue()
        msg, pos = _decode_at(data, self._read[direction])
        self._read[direction] = pos
        if expect is not None and msg.type != expect:
            raise CodecError(f"expected {expect.name}, got {msg.type.name}")
        return msg
