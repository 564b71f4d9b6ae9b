"""Frame-level reverse reconciliation: Bob encodes, Alice decodes and verifies."""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field, fields

import numpy as np

from .ldpc import LdpcCode, ldpc_decode
from .md import md_llr, md_reconcile_map, MdMap
from .privacy import poly_hash64

__all__ = [
    "RateAdaptation",
    "ReconReport",
    "BobFrame",
    "ReconOutcome",
    "adapt_rate",
    "bob_encode",
    "alice_decode",
    "reconcile",
    "secure_key_length",
]

_KNOWN_LLR = 40.0


@dataclass(frozen=True)
class RateAdaptation:
    """Punctured and shortened positions of a mother code.

    Punctured bits are part of Bob's word but carry no channel symbol;
    shortened bits are disclosed. The effective rate is
    ``(n - m - s) / (n - p - s)``.
    """

    n: int
    m: int
    punctured: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    shortened: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def channel_positions(self) -> np.ndarray:
        mask = np.ones(self.n, bool)
        mask[self.punctured] = False
        mask[self.shortened] = False
        return np.flatnonzero(mask)

    @property
    def n_channel(self) -> int:
        return self.n - self.punctured.size - self.shortened.size

    @property
    def key_positions(self) -> np.ndarray:
        mask = np.ones(self.n, bool)
        mask[self.shortened] = False
        return np.flatnonzero(mask)

    @property
    def rate(self) -> float:
        return (self.n - self.m - self.shortened.size) / self.n_channel

    @classmethod
    def none(cls, code: LdpcCode) -> "RateAdaptation":
        return cls(code.n, code.m)


def adapt_rate(code: LdpcCode, snr: float, beta: float, d: int = 8,
               max_fraction: float = 0.1, seed: int = 0) -> RateAdaptation:
    """Puncture or shorten so the effective rate is ``beta * C(snr)``.

    At most ``max_fraction`` of the block is touched; beyond that the
    clamped adaptation is returned and the efficiency simply differs from
    ``beta``. Counts are rounded so the channel part stays a multiple of ``d``.
    """
    if not snr > 0:
        raise ValueError("SNR must be positive")
    n, m = code.n, code.m
    target = beta * 0.5 * math.log2(1.0 + snr)
    k = n - m
    if target >= k / n:
        count = n - k / target if target > 0 else 0.0
        kind = "p"
    else:
        count = (k - target * n) / (1.0 - target)
        kind = "s"
    count = int(round(max(count, 0.0) / d)) * d
    count = min(count, int(max_fraction * n) // d * d)
    rng = np.random.default_rng(seed)
    pos = np.sort(rng.permutation(n)[:count]).astype(np.int64)
    empty = np.zeros(0, np.int64)
    if kind == "p":
        return RateAdaptation(n, m, punctured=pos, shortened=empty)
    return RateAdaptation(n, m, punctured=empty, shortened=pos)


@dataclass
class ReconReport:
    frames_attempted: int = 0
    frames_decoded: int = 0
    beta: float = float("nan")
    residual_ber: float = 0.0
    code: str = ""
    code_rate: float = float("nan")
    snr: float = float("nan")
    undetected: int = 0
    error_bits: int = 0
    checked_bits: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def fer(self) -> float:
        if self.frames_attempted == 0:
            return 0.0
        return 1.0 - self.frames_decoded / self.frames_attempted

    @property
    def failures(self) -> int:
        return self.frames_attempted - self.frames_decoded

    def record(self, decoded: bool, undetected: bool = False, errors: int = 0,
               bits: int = 0) -> None:
        with self._lock:
            self.frames_attempted += 1
            self.frames_decoded += int(decoded)
            self.undetected += int(undetected)
            if decoded:
                self.error_bits += errors
                self.checked_bits += bits
                self.residual_ber = self.error_bits / self.checked_bits if self.checked_bits else 0.0

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if not f.name.startswith("_")}
        out["fer"] = self.fer
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def from_json(cls, text: str) -> "ReconReport":
        d = json.loads(text)
        d.pop("fer", None)
        return cls(**d)


@dataclass
class BobFrame:
    """Everything Bob discloses for one code frame."""

    syndrome: np.ndarray
    md: MdMap
    shortened_bits: np.ndarray
    hash_key: int
    hash_value: int


def bob_encode(code: LdpcCode, bob_values, rng, adapt: RateAdaptation | None = None,
               d: int = 8) -> tuple[np.ndarray, BobFrame]:
    """Draw Bob's word for one frame and build his public messages."""
    adapt = adapt or RateAdaptation.none(code)
    y = np.asarray(bob_values, dtype=float).reshape(-1)
    if y.size != adapt.n_channel:
        raise ValueError(f"frame needs {adapt.n_channel} values, got {y.size}")
    u = rng.integers(0, 2, code.n).astype(np.uint8)
    md = md_reconcile_map(y, u[adapt.channel_positions], d)
    hash_key = int(rng.integers(1, 2**63))
    return u, BobFrame(
        syndrome=code.syndrome(u),
        md=md,
        shortened_bits=u[adapt.shortened].copy(),
        hash_key=hash_key,
        hash_value=poly_hash64(u, hash_key),
    )


def alice_decode(code: LdpcCode, alice_values, frame: BobFrame, gain: float,
                 noise_var: float, adapt: RateAdaptation | None = None,
                 llr_scale: float = 1.0, max_iters: int = 500,
                 patience: int = 100) -> tuple[np.ndarray | None, bool]:
    """Alice's estimate of Bob's word, or ``None`` when verification fails.

    The second value is true when the decoder met the syndrome but the
    hash disagreed.
    """
    adapt = adapt or RateAdaptation.none(code)
    llr = np.zeros(code.n)
    llr[adapt.channel_positions] = md_llr(frame.md, alice_values, gain, noise_var, llr_scale)
    llr[adapt.shortened] = _KNOWN_LLR * (1.0 - 2.0 * frame.shortened_bits)
    res = ldpc_decode(llr, code, frame.syndrome, max_iters, patience)
    if not res.success:
        return None, False
    if poly_hash64(res.bits, frame.hash_key) != frame.hash_value:
        return None, True
    return res.bits, False


@dataclass
class ReconOutcome:
    alice_bits: np.ndarray
    bob_bits: np.ndarray
    report: ReconReport
    decoded_frames: int
    channel_values_decoded: int


def reconcile(code: LdpcCode, alice, bob, gain: float, noise_var: float, rng,
              d: int = 8, llr_scale: float = 1.0, adapt: RateAdaptation | None = None,
              max_iters: int = 500, max_frames: int | None = None,
              snr: float | None = None) -> ReconOutcome:
    """Reconcile paired real-valued data frame by frame.

    Values that do not fill a whole frame are dropped. Key bits are the
    non-disclosed positions of Bob's words for verified frames.
    """
    adapt = adapt or RateAdaptation.none(code)
    x = np.asarray(alice, dtype=float).reshape(-1)
    y = np.asarray(bob, dtype=float).reshape(-1)
    if x.size != y.size:
        raise ValueError("Alice and Bob data differ in length")
    nc = adapt.n_channel
    frames = x.size // nc
    if max_frames is not None:
        frames = min(frames, max_frames)
    if snr is None:
        snr = gain * gain * float(np.var(x)) / noise_var if x.size else float("nan")
    report = ReconReport(code=code.name, code_rate=adapt.rate, snr=snr)
    if snr > 0:
        report.beta = adapt.rate / (0.5 * math.log2(1.0 + snr))
    keys = adapt.key_positions
    a_out, b_out = [], []
    for f in range(frames):
        sl = slice(f * nc, (f + 1) * nc)
        u, msg = bob_encode(code, y[sl], rng, adapt, d)
        est, undetected = alice_decode(code, x[sl], msg, gain, noise_var, adapt,
                                       llr_scale, max_iters)
        if est is None:
            report.record(False, undetected)
            continue
        errors = int(np.count_nonzero(est != u))
        report.record(True, errors=errors, bits=code.n)
        a_out.append(est[keys])
        b_out.append(u[keys])
    cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, np.uint8)
    return ReconOutcome(cat(a_out), cat(b_out), report, report.frames_decoded,
                        report.frames_decoded * nc)


def secure_key_length(outcome: ReconOutcome, code: LdpcCode, chi_be: float,
                      ceiling_bits: float | None = None) -> int:
    """Bits left after removing the syndrome leak and Eve's information.

    ``chi_be`` is per complex symbol, i.e. per two channel values.
    ``ceiling_bits`` caps the result, typically the asymptotic
    ``n_symbols * (beta * I_AB - chi_BE)`` bound for the round.
    """
    raw = outcome.bob_bits.size - outcome.decoded_frames * code.m
    bits = raw - chi_be * outcome.channel_values_decoded / 2.0
    if ceiling_bits is not None:
        bits = min(bits, ceiling_bits)
    return max(int(math.floor(bits)), 0)
