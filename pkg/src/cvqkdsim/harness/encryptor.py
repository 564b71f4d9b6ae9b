"""Mock link encryptor: AES-256-GCM over fixed 864-bit messages.

Each endpoint owns a key manager fed from its copy of the final key. A
pair's first half encrypts the A->B direction, the second half B->A.
Packets carry the key_id and the 96-bit nonce in the clear.
"""

from __future__ import annotations

import logging
import struct
import time
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .keys import KeyManager, KeysExhausted

__all__ = ["MESSAGE_BYTES", "AuthenticationFailed", "NonceExhausted", "RefreshPolicy",
           "Encryptor"]

log = logging.getLogger(__name__)

MESSAGE_BYTES = 864 // 8


class AuthenticationFailed(ValueError):
    pass


class NonceExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class RefreshPolicy:
    period_s: float = 5.0
    max_messages: int = 1000
    nonce_limit: int = 2**32


class Encryptor:
    """One endpoint; ``side`` is ``"A"`` or ``"B"``.

    ``clock`` returns seconds and defaults to the monotonic clock; the
    harness passes its logical clock instead.
    """

    def __init__(self, side: str, keys: KeyManager, policy: RefreshPolicy | None = None,
                 clock=None):
        if side not in ("A", "B"):
            raise ValueError("side must be 'A' or 'B'")
        self.side = side
        self.keys = keys
        self.policy = policy or RefreshPolicy()
        self.clock = clock or time.monotonic
        self.events: list[tuple[str, int]] = []
        self._current = None
        self._refresh(initial=True)

    @property
    def key_id(self) -> int:
        return self._current.key_id

    def _refresh(self, initial: bool = False) -> None:
        try:
            rec = self.keys.issue()
        except KeysExhausted:
            if initial:
                raise
            # Keep encrypting on the current key until material arrives.
            self.events.append(("exhausted", self._current.key_id))
            self._since = self.clock()
            self._count = 0
            return
        self._current = rec
        self._since = self.clock()
        self._count = 0
        self._nonce = 0
        self.events.append(("refresh" if not initial else "start", rec.key_id))

    def _tx_key(self, rec) -> bytes:
        return rec.first if self.side == "A" else rec.second

    def _rx_key(self, rec) -> bytes:
        return rec.second if self.side == "A" else rec.first

    def encrypt(self, payload: bytes) -> bytes:
        if len(payload) != MESSAGE_BYTES:
            raise ValueError(f"payload must be {MESSAGE_BYTES} bytes")
        if self._nonce >= self.policy.nonce_limit:
            raise NonceExhausted(f"key_id {self.key_id} used {self._nonce} nonces")
        rec = self._current
        nonce = struct.pack(">IQ", 0 if self.side == "A" else 1, self._nonce)
        self._nonce += 1
        header = struct.pack(">Q", rec.key_id) + nonce
        ct = AESGCM(self._tx_key(rec)).encrypt(nonce, bytes(payload), header[:8])
        self._count += 1
        if (self._count >= self.policy.max_messages
                or self.clock() - self._since >= self.policy.period_s):
            self._refresh()
        return header + ct

    def decrypt(self, packet: bytes) -> bytes:
        if len(packet) < 20 + 16:
            raise AuthenticationFailed("packet too short")
        key_id = struct.unpack(">Q", packet[:8])[0]
        nonce = packet[8:20]
        try:
            rec = self.keys.get(key_id)
        except (KeyError, KeysExhausted) as exc:
            raise AuthenticationFailed(f"no key for key_id {key_id}") from exc
        try:
            return AESGCM(self._rx_key(rec)).decrypt(nonce, packet[20:], packet[:8])
        except InvalidTag:
            raise AuthenticationFailed(f"tag mismatch under key_id {key_id}") from None
