"""Transmitter DSP: symbol generation, frame assembly and waveform synthesis.

Time and frequency layout
-------------------------
The DAC runs at 1 GS/s and every band carries 20 MBaud symbols, so one
symbol slot spans 50 samples. A frame is 20,000 slots (1 ms). In the
quantum band (80 MHz) a frame holds a 200-symbol Zadoff-Chu preamble, the
10,000 Gaussian symbols and a silent tail; the QPSK band (160 MHz) carries
a 64-bit header, the frame ID three times and a known PRBS filler. Two pure
tones at 25 and 120 MHz run continuously, including between bursts.

All components are phase-referenced to absolute DAC sample 0 and frames
start on multiples of 200 samples, so every tone and band centre has zero
phase at each frame boundary (5 MHz divides all four frequencies). The
receiver relies on this to tie its pilot phase tracks to the band phases.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal, special

from .core import RngStream

__all__ = [
    "FS",
    "BAUD",
    "SPS",
    "FRAME_SLOTS",
    "FRAME_SAMPLES",
    "QUANTUM_PER_FRAME",
    "FRAMES_PER_BLOCK",
    "CAZAC_LEN",
    "HEADER_BITS",
    "TxSignalPlan",
    "Frame",
    "Waveform",
    "TxStream",
    "gaussian_alphabet",
    "quantize_gaussian",
    "sample_gaussian_symbols",
    "generate_cazac",
    "qpsk_map",
    "qpsk_demap",
    "frame_id_bits",
    "filler_bits",
    "rrc_taps",
    "assemble_frame",
    "synthesize_waveform",
    "set_modulation_power",
    "fractional_interpolate",
]

FS = 1e9
BAUD = 20e6
SPS = 50
FRAME_SLOTS = 20_000
FRAME_SAMPLES = FRAME_SLOTS * SPS
QUANTUM_PER_FRAME = 10_000
FRAMES_PER_BLOCK = 20
CAZAC_LEN = 200
CAZAC_ROOT = 1
# Frames must start on this grid for all components to be phase-aligned.
FRAME_ALIGN = 200

HEADER_BITS = np.array([int(b) for b in f"{0x350914E367E09237:064b}"], dtype=np.uint8)
ID_BITS = 16
ID_REPEATS = 3
_HEADER_SYMS = HEADER_BITS.size // 2
_ID_SYMS = ID_BITS * ID_REPEATS // 2
FILLER_SYMS = FRAME_SLOTS - _HEADER_SYMS - _ID_SYMS

RRC_SPAN = 8  # symbols each side


# ---------------------------------------------------------------------------
# Plan


@dataclass(frozen=True)
class TxSignalPlan:
    """Frequency plan and relative power levels.

    Powers are in squared field units where one unit per symbol in the
    quantum band equals one SNU at the channel input: ``v_mod`` is the
    per-quadrature variance of the Gaussian symbols, ``qpsk_power`` the QPSK
    symbol energy and ``pilot_power`` the squared amplitude of each tone.
    """

    quantum_band_center_hz: float = 80e6
    qpsk_band_center_hz: float = 160e6
    pilot1_hz: float = 25e6
    pilot2_hz: float = 120e6
    band_width_hz: float = BAUD
    rrc_rolloff: float = 0.2
    v_mod: float = 4.0
    pilot_power: float = 20.0
    qpsk_power: float = 2000.0
    cazac_ratio: float = 50.0
    image_suppression_db: float | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.v_mod > 0:
            raise ValueError("v_mod must be positive")
        if not 0 < self.rrc_rolloff <= 1:
            raise ValueError("rolloff must be in (0, 1]")
        if self.band_width_hz != BAUD:
            raise ValueError("band width must equal the 20 MBaud symbol rate")
        half = 0.5 * self.band_width_hz * (1 + self.rrc_rolloff)
        spans = sorted([
            (self.quantum_band_center_hz - half, self.quantum_band_center_hz + half),
            (self.qpsk_band_center_hz - half, self.qpsk_band_center_hz + half),
            (self.pilot1_hz, self.pilot1_hz),
            (self.pilot2_hz, self.pilot2_hz),
        ])
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            if b0 <= a1:
                raise ValueError(f"overlapping components: {a0/1e6:g}-{a1/1e6:g} MHz "
                                 f"and {b0/1e6:g}-{b1/1e6:g} MHz")
        if spans[0][0] <= 0 or spans[-1][1] >= FS / 2:
            raise ValueError("components must lie inside (0, fs/2)")
        for f in (self.quantum_band_center_hz, self.qpsk_band_center_hz,
                  self.pilot1_hz, self.pilot2_hz):
            if (f * FRAME_ALIGN / FS) % 1:
                raise ValueError(f"{f:g} Hz is not a multiple of {FS / FRAME_ALIGN:g} Hz")

    @property
    def cazac_amplitude(self) -> float:
        return math.sqrt(self.cazac_ratio * 2.0 * self.v_mod)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Symbols


def gaussian_alphabet(sigma: float = 1.0) -> np.ndarray:
    """The 64 quantizer levels: centres of equal cells spanning +-3.5 sigma."""
    step = 7.0 / 64
    return sigma * (-3.5 + step * (np.arange(64) + 0.5))


def _alphabet_index(u):
    x = special.ndtri(np.clip(u, 1e-300, 1 - 1e-16))
    return np.clip(np.floor((x + 3.5) / (7.0 / 64)), 0, 63).astype(np.intp)


def quantize_gaussian(u, sigma: float = 1.0) -> np.ndarray:
    """Map uniforms in [0, 1) to the discrete Gaussian alphabet by inverse CDF."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return gaussian_alphabet(sigma)[_alphabet_index(np.asarray(u, dtype=float))]


def sample_gaussian_symbols(rng: RngStream, count: int, sigma: float) -> np.ndarray:
    """Complex symbols whose quadratures are i.i.d. discrete-Gaussian draws."""
    if count <= 0 or not sigma > 0:
        raise ValueError("count and sigma must be positive")
    u = rng.random((2, count))
    re = quantize_gaussian(u[0], sigma)
    im = quantize_gaussian(u[1], sigma)
    return re + 1j * im


def generate_cazac(length: int, root: int = CAZAC_ROOT) -> np.ndarray:
    if length < 2:
        raise ValueError("length must be at least 2")
    if root <= 0 or math.gcd(root, length) != 1:
        raise ValueError(f"root {root} must be positive and coprime with {length}")
    k = np.arange(length, dtype=np.int64)
    # k^2 (or k(k+1)) mod 2N keeps the phase argument small and exact.
    num = (k * k) if length % 2 == 0 else (k * (k + 1))
    num = (root * num) % (2 * length)
    return np.exp(-1j * np.pi * num / length)


def qpsk_map(bits) -> np.ndarray:
    """Gray-mapped unit-energy QPSK: bit pairs (b0, b1) -> ((1-2b0) + i(1-2b1))/sqrt 2."""
    b = np.asarray(bits, dtype=np.int8).reshape(-1, 2)
    return ((1 - 2 * b[:, 0]) + 1j * (1 - 2 * b[:, 1])) / math.sqrt(2)


def qpsk_demap(symbols) -> np.ndarray:
    s = np.asarray(symbols)
    out = np.empty((s.size, 2), dtype=np.uint8)
    out[:, 0] = s.real < 0
    out[:, 1] = s.imag < 0
    return out.ravel()


def frame_id_bits(frame_id: int) -> np.ndarray:
    if not 0 <= frame_id < 1 << ID_BITS:
        raise ValueError(f"frame_id must fit in {ID_BITS} bits")
    one = np.array([(frame_id >> (ID_BITS - 1 - i)) & 1 for i in range(ID_BITS)], dtype=np.uint8)
    return np.tile(one, ID_REPEATS)


def _prbs15(n: int) -> np.ndarray:
    # x^15 + x^14 + 1, all-ones seed
    state = 0x7FFF
    out = np.empty(n, dtype=np.uint8)
    for i in range(n):
        bit = ((state >> 14) ^ (state >> 13)) & 1
        state = ((state << 1) | bit) & 0x7FFF
        out[i] = bit
    return out


_FILLER = _prbs15(2 * FILLER_SYMS)


def filler_bits() -> np.ndarray:
    return _FILLER.copy()


def rrc_taps(rolloff: float = 0.2, sps: int = SPS, span: int = RRC_SPAN) -> np.ndarray:
    """Root-raised-cosine FIR normalized to unit energy, ``2*span*sps + 1`` taps."""
    t = np.arange(-span * sps, span * sps + 1) / sps
    b = rolloff
    h = np.empty_like(t)
    zero = np.isclose(t, 0.0)
    sing = np.isclose(np.abs(t), 1.0 / (4 * b)) if b > 0 else np.zeros_like(zero)
    reg = ~(zero | sing)
    tr = t[reg]
    h[reg] = (np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))) / (
        np.pi * tr * (1 - (4 * b * tr) ** 2))
    h[zero] = 1 - b + 4 * b / np.pi
    h[sing] = b / math.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                                  + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
    return h / np.linalg.norm(h)


# ---------------------------------------------------------------------------
# Frames


@dataclass(frozen=True)
class Frame:
    frame_id: int
    quantum: np.ndarray
    cazac: np.ndarray
    qpsk: np.ndarray

    @property
    def quantum_slots(self) -> np.ndarray:
        """Symbols in the quantum band over the 20,000 slots of the frame."""
        out = np.zeros(FRAME_SLOTS, dtype=complex)
        out[:CAZAC_LEN] = self.cazac
        out[CAZAC_LEN:CAZAC_LEN + QUANTUM_PER_FRAME] = self.quantum
        return out


def assemble_frame(frame_id: int, quantum_syms, plan: TxSignalPlan) -> Frame:
    q = np.asarray(quantum_syms, dtype=complex)
    if q.shape != (QUANTUM_PER_FRAME,):
        raise ValueError(f"expected {QUANTUM_PER_FRAME} quantum symbols, got {q.shape}")
    bits = np.concatenate([HEADER_BITS, frame_id_bits(frame_id), _FILLER])
    qpsk = math.sqrt(plan.qpsk_power) * qpsk_map(bits)
    cazac = plan.cazac_amplitude * generate_cazac(CAZAC_LEN)
    return Frame(frame_id, q, cazac, qpsk)


# ---------------------------------------------------------------------------
# Synthesis


def _tone(freq_hz: float, start: int, n: int) -> np.ndarray:
    # f/fs is rational, so the tone is a tiled table with exact phases
    r = Fraction(freq_hz / FS).limit_denominator(1 << 20)
    table = np.exp(2j * np.pi * np.arange(r.denominator) * r.numerator / r.denominator)
    first = start % r.denominator
    reps = -(-(first + n) // r.denominator)
    return np.tile(table, reps)[first:first + n]


class TxStream:
    """Sample-accurate description of a transmitted burst.

    Frames are laid back-to-back starting at DAC sample ``lead_in`` (rounded
    up to the 200-sample grid). ``render(a, b)`` returns DAC samples
    ``a..b-1``; outside the burst only the pilots are present.
    """

    def __init__(self, frames: list[Frame], plan: TxSignalPlan, lead_in: int = 0):
        self.frames = list(frames)
        self.plan = plan
        self.lead_in = -(-int(lead_in) // FRAME_ALIGN) * FRAME_ALIGN
        self.first_slot = self.lead_in // SPS
        taps = rrc_taps(plan.rrc_rolloff)
        self._half = (taps.size - 1) // 2
        rel = np.arange(taps.size) - self._half
        self._h = {
            "quantum": taps * np.exp(2j * np.pi * plan.quantum_band_center_hz / FS * rel),
            "qpsk": taps * np.exp(2j * np.pi * plan.qpsk_band_center_hz / FS * rel),
        }
        self._slots = {
            "quantum": np.concatenate([f.quantum_slots for f in self.frames])
            if self.frames else np.zeros(0, complex),
            "qpsk": np.concatenate([f.qpsk for f in self.frames])
            if self.frames else np.zeros(0, complex),
        }
        self._image = (10 ** (-plan.image_suppression_db / 20)
                       if plan.image_suppression_db is not None else 0.0)

    @property
    def burst_samples(self) -> int:
        return len(self.frames) * FRAME_SAMPLES

    @property
    def length(self) -> int:
        return self.lead_in + self.burst_samples

    def frame_start(self, index: int) -> int:
        return self.lead_in + index * FRAME_SAMPLES

    def _band(self, name: str, a: int, b: int) -> np.ndarray:
        out = np.zeros(b - a, dtype=complex)
        slots = self._slots[name]
        if not slots.size:
            return out
        reach = self._half // SPS + 1
        g0 = max(a // SPS - reach, self.first_slot)
        g1 = min(-(-b // SPS) + reach, self.first_slot + slots.size)
        if g1 <= g0:
            return out
        x = slots[g0 - self.first_slot:g1 - self.first_slot]
        y = signal.upfirdn(self._h[name], x, up=SPS)
        # y[j] sits at absolute sample SPS*g0 - half + j
        base = SPS * g0 - self._half
        lo, hi = max(a, base), min(b, base + y.size)
        if hi > lo:
            out[lo - a:hi - a] = y[lo - base:hi - base]
        return out

    def components(self, a: int, b: int) -> dict:
        p = self.plan
        amp = math.sqrt(p.pilot_power)
        return {
            "pilots": amp * (_tone(p.pilot1_hz, a, b - a) + _tone(p.pilot2_hz, a, b - a)),
            "quantum": self._band("quantum", a, b),
            "qpsk": self._band("qpsk", a, b),
        }

    def render(self, a: int, b: int, skew: float = 0.0) -> np.ndarray:
        """DAC output for receiver-clock samples ``a..b-1``.

        A nonzero ``skew`` models a DAC clock running fast by that fraction:
        receiver sample ``n`` sees DAC time ``n * (1 + skew)``.
        """
        if b < a:
            raise ValueError("empty range")
        if skew == 0.0:
            s = sum(self.components(a, b).values())
        else:
            pos = np.arange(a, b, dtype=float) * (1.0 + skew)
            k = 24
            lo = int(math.floor(pos[0])) - k
            hi = int(math.ceil(pos[-1])) + k + 1 if b > a else lo
            nominal = sum(self.components(lo, hi).values())
            s = fractional_interpolate(nominal, pos - lo, half_width=k)
        if self._image:
            s = s + self._image * np.conj(s)
        return s


_KERNELS: dict = {}


def _kernel_table(half_width: int, phases: int = 1024) -> np.ndarray:
    key = (half_width, phases)
    if key not in _KERNELS:
        j = np.arange(-half_width + 1, half_width + 1)
        frac = np.arange(phases + 1) / phases
        d = j[None, :] - frac[:, None]
        win = np.i0(8.0 * np.sqrt(np.clip(1 - (d / half_width) ** 2, 0, None))) / np.i0(8.0)
        _KERNELS[key] = np.sinc(d) * win
    return _KERNELS[key]


def fractional_interpolate(x, pos, half_width: int = 16, chunk: int = 1 << 15) -> np.ndarray:
    """Kaiser-windowed sinc interpolation of ``x`` at fractional indices ``pos``.

    The fractional part is quantized to 1/1024 of a sample.
    """
    x = np.asarray(x)
    pos = np.asarray(pos, dtype=float)
    table = _kernel_table(half_width)
    phases = table.shape[0] - 1
    out = np.empty(pos.size, dtype=complex if np.iscomplexobj(x) else float)
    j = np.arange(-half_width + 1, half_width + 1)
    xp = np.concatenate([np.zeros(half_width, x.dtype), x, np.zeros(half_width + 1, x.dtype)])
    for s in range(0, pos.size, chunk):
        p = pos[s:s + chunk]
        base = np.floor(p).astype(np.int64)
        ph = np.rint((p - base) * phases).astype(np.intp)
        idx = base[:, None] + (j + half_width)[None, :]
        out[s:s + chunk] = np.einsum("ij,ij->i", table[ph], xp[idx])
    return out


# ---------------------------------------------------------------------------
# Materialized waveforms


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: float = FS
    symbol_rate_baud: float = BAUD
    meta: dict = field(default_factory=dict)
    components: dict | None = None

    def __post_init__(self):
        if (self.sample_rate_hz / self.symbol_rate_baud) % 1:
            raise ValueError("sample rate must be an integer multiple of the symbol rate")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("non-finite samples")

    def __len__(self):
        return len(self.samples)

    def save(self, path: str | Path) -> None:
        """Little-endian float32 interleaved I/Q (or real) plus a JSON sidecar."""
        path = Path(path)
        s = np.asarray(self.samples)
        if np.iscomplexobj(s):
            data = np.empty(2 * s.size, dtype="<f4")
            data[0::2] = s.real
            data[1::2] = s.imag
        else:
            data = s.astype("<f4")
        data.tofile(path)
        side = {"sample_rate_hz": self.sample_rate_hz, "symbol_rate_baud": self.symbol_rate_baud,
                "complex": bool(np.iscomplexobj(s)), "count": int(s.size), **self.meta}
        path.with_name(path.name + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "Waveform":
        path = Path(path)
        side = json.loads(path.with_name(path.name + ".json").read_text())
        data = np.fromfile(path, dtype="<f4")
        samples = data[0::2] + 1j * data[1::2] if side.pop("complex") else data
        side.pop("count", None)
        return cls(samples.astype(complex if np.iscomplexobj(samples) else float),
                   side.pop("sample_rate_hz"), side.pop("symbol_rate_baud"), side)


def synthesize_waveform(frames: list[Frame], plan: TxSignalPlan, lead_in: int = 0,
                        skew: float = 0.0) -> Waveform:
    """Render a list of frames to 1 GS/s complex baseband."""
    if not frames:
        raise ValueError("no frames to synthesize")
    stream = TxStream(frames, plan, lead_in)
    comps = stream.components(0, stream.length) if skew == 0.0 else None
    if comps is None:
        samples = stream.render(0, stream.length, skew)
    else:
        samples = sum(comps.values())
        if stream._image:
            samples = samples + stream._image * np.conj(samples)
    meta = {"plan": plan.to_dict(), "v_mod": plan.v_mod, "lead_in": stream.lead_in,
            "frame_ids": [f.frame_id for f in frames]}
    return Waveform(samples, meta=meta, components=comps)


def set_modulation_power(wf: Waveform, target_v_mod: float) -> Waveform:
    """Rescale the quantum band so it corresponds to ``target_v_mod``."""
    if not target_v_mod > 0:
        raise ValueError("target v_mod must be positive")
    if wf.components is None or "quantum" not in wf.components:
        raise ValueError("waveform carries no separable quantum band")
    current = wf.meta["v_mod"]
    if target_v_mod == current:
        return wf
    g = math.sqrt(target_v_mod / current)
    comps = dict(wf.components)
    comps["quantum"] = comps["quantum"] * g
    meta = dict(wf.meta, v_mod=target_v_mod)
    if "plan" in meta:
        meta["plan"] = dict(meta["plan"], v_mod=target_v_mod)
    return replace(wf, samples=sum(comps.values()), meta=meta, components=comps)
