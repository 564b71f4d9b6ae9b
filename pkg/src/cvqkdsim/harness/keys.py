"""Key buffering, key-pair issue and the key files handed to encryptors."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import ClassicalMessage, MessageType

__all__ = ["KEY_PAIR_BITS", "KeysExhausted", "KeyPairRecord", "KeyBuffer", "KeyManager",
           "write_key_files", "read_key_files"]

log = logging.getLogger(__name__)

KEY_PAIR_BITS = 512


class KeysExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class KeyPairRecord:
    key_id: int
    bits: np.ndarray

    def __post_init__(self):
        if not 0 <= self.key_id < 2**64:
            raise ValueError("key_id must fit in 64 bits")
        if np.asarray(self.bits).size != KEY_PAIR_BITS:
            raise ValueError(f"a key pair has {KEY_PAIR_BITS} bits")

    @property
    def key_bytes(self) -> bytes:
        return np.packbits(np.asarray(self.bits, dtype=np.uint8)).tobytes()

    @property
    def first(self) -> bytes:
        return self.key_bytes[:32]

    @property
    def second(self) -> bytes:
        return self.key_bytes[32:]


class KeyBuffer:
    """FIFO of final key bits; every bit is handed out at most once."""

    def __init__(self, bits=None):
        self._bits = np.zeros(0, np.uint8)
        self._pos = 0
        if bits is not None:
            self.append(bits)

    def append(self, bits) -> None:
        b = np.asarray(bits, dtype=np.uint8).reshape(-1)
        if np.any(b > 1):
            raise ValueError("key material must be bits")
        self._bits = np.concatenate([self._bits[self._pos:], b])
        self._pos = 0

    def __len__(self) -> int:
        return self._bits.size - self._pos

    def pop(self, count: int) -> np.ndarray:
        if len(self) < count:
            raise KeysExhausted(f"{len(self)} bits buffered, {count} needed")
        out = self._bits[self._pos:self._pos + count].copy()
        self._pos += count
        return out


class KeyManager:
    """Issues 512-bit pairs with sequential ids from a :class:`KeyBuffer`."""

    def __init__(self, buffer: KeyBuffer | None = None, first_id: int = 0):
        self.buffer = buffer if buffer is not None else KeyBuffer()
        self.next_id = first_id
        self.issued: dict[int, KeyPairRecord] = {}
        self.announcements: list[ClassicalMessage] = []

    def issue(self) -> KeyPairRecord:
        try:
            bits = self.buffer.pop(KEY_PAIR_BITS)
        except KeysExhausted:
            log.warning("key buffer underrun at key_id %d", self.next_id)
            raise
        rec = KeyPairRecord(self.next_id, bits)
        self.issued[rec.key_id] = rec
        self.announcements.append(
            ClassicalMessage(MessageType.KEY_ID_ANNOUNCE, struct.pack(">Q", rec.key_id)))
        self.next_id += 1
        return rec

    def get(self, key_id: int) -> KeyPairRecord:
        """Look up an issued pair, issuing forward to reach ``key_id``."""
        while key_id not in self.issued:
            if key_id < self.next_id:
                raise KeyError(f"key_id {key_id} was never issued here")
            self.issue()
        return self.issued[key_id]


def write_key_files(directory, records, stem: str = "keys") -> tuple[Path, Path]:
    """Binary key material plus a JSON index mapping key_id to byte offset."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bin_path = directory / f"{stem}.bin"
    idx_path = directory / f"{stem}.json"
    index = []
    with open(bin_path, "wb") as fh:
        for rec in records:
            index.append({"key_id": rec.key_id, "offset": fh.tell(), "bits": KEY_PAIR_BITS})
            fh.write(rec.key_bytes)
    idx_path.write_text(json.dumps({"file": bin_path.name, "keys": index}, indent=2) + "\n")
    return bin_path, idx_path


def read_key_files(index_path) -> list[KeyPairRecord]:
    index_path = Path(index_path)
    meta = json.loads(index_path.read_text())
    data = (index_path.parent / meta["file"]).read_bytes()
    out = []
    for entry in meta["keys"]:
        raw = np.frombuffer(data, np.uint8, KEY_PAIR_BITS // 8, entry["offset"])
        out.append(KeyPairRecord(entry["key_id"], np.unpackbits(raw)))
    return out
