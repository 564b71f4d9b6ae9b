"""Feed a run's final keys into both mock encryptors and exchange traffic."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encryptor import MESSAGE_BYTES, AuthenticationFailed, Encryptor, RefreshPolicy
from .keys import KeyBuffer, KeyManager

__all__ = ["DeliveryReport", "key_manager", "deliver"]


@dataclass
class DeliveryReport:
    messages: int = 0
    failures: int = 0
    refreshes: int = 0
    first_refresh_at: int | None = None
    exhausted: int = 0
    key_ids_used: list = field(default_factory=list)
    key_ids_agree: bool = True

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def key_manager(records) -> KeyManager:
    """A fresh manager that re-issues ``records`` in order."""
    records = list(records)
    bits = np.concatenate([r.bits for r in records]) if records else np.zeros(0, np.uint8)
    first = records[0].key_id if records else 0
    return KeyManager(KeyBuffer(bits), first_id=first)


class _Clock:
    def __init__(self):
        self.t = 0.0

    def __call__(self) -> float:
        return self.t


def deliver(alice_keys, bob_keys, messages: int, policy: RefreshPolicy, rng,
            interval_s: float = 1e-3) -> DeliveryReport:
    """Alternate A->B and B->A messages, ``messages`` in each direction.

    Both endpoints run on a logical clock that advances ``interval_s`` per
    message pair. Encryptors that run out of key material keep their
    current key, which shows up as ``exhausted`` events.
    """
    report = DeliveryReport()
    if not alice_keys or not bob_keys:
        return report
    clock = _Clock()
    a = Encryptor("A", key_manager(alice_keys), policy, clock)
    b = Encryptor("B", key_manager(bob_keys), policy, clock)
    used = set()
    for i in range(messages):
        for src, dst in ((a, b), (b, a)):
            msg = rng.bytes(MESSAGE_BYTES)
            sent_id = src.key_id
            n_events = len(src.events)
            packet = src.encrypt(msg)
            if len(src.events) > n_events and src.events[-1][0] == "refresh":
                report.refreshes += 1
                if report.first_refresh_at is None:
                    report.first_refresh_at = i + 1
            used.add(sent_id)
            try:
                ok = dst.decrypt(packet) == msg
            except AuthenticationFailed:
                ok = False
            report.failures += not ok
            if dst.keys.issued.get(sent_id) is None or not np.array_equal(
                    dst.keys.issued[sent_id].bits, src.keys.issued[sent_id].bits):
                report.key_ids_agree = False
        report.messages += 1
        clock.t += interval_s
    report.exhausted = sum(1 for e in a.events + b.events if e[0] == "exhausted")
    report.key_ids_used = sorted(int(k) for k in used)
    return report
