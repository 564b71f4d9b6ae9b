"""Sample-level link: transmitter stream, fiber and detector, rendered on demand."""

from __future__ import annotations

import numpy as np

from ..channel import evolve_sop, identity_sop, propagate
from ..core import LinkProfile, RngStream
from ..rxdsp import DetectorConfig, HeterodyneDetector
from ..txdsp import FRAME_SAMPLES, TxStream

__all__ = ["WaveformLink"]


class WaveformLink:
    """Detector output of one burst as a lazily evaluated sample source.

    The output is produced in fixed segments, each with its own random
    substream, so any range is reproducible regardless of access order.
    The LO phase walk and the SOP are carried from segment to segment,
    which makes generation sequential; recent segments are cached.
    """

    def __init__(self, stream: TxStream, profile: LinkProfile, det: DetectorConfig,
                 rng: RngStream, sop_model=None, sop_initial=None, compensation=None,
                 skew: float = 0.0, segment: int = FRAME_SAMPLES, cache: int = 4):
        self.stream = stream
        self.profile = profile
        self.det = det
        self.rng = rng
        self.sop_model = sop_model if sop_model is not None else profile.sop_model
        self.compensation = None if compensation is None else np.asarray(compensation, complex)
        self.skew = skew
        self.segment = segment
        self._cache_size = cache
        self._cache: dict[int, np.ndarray] = {}
        self._detector = HeterodyneDetector(det, rng.substream("lo"))
        self._sop = identity_sop() if sop_initial is None else np.asarray(sop_initial, complex)
        self._sop_rng = rng.substream("sop")
        self._next = 0
        self.sops: list[np.ndarray] = []

    @property
    def length(self) -> int:
        return self.stream.length

    def _produce(self, i: int) -> np.ndarray:
        seg_rng = self.rng.substream(f"segment-{i}")
        a = i * self.segment
        tx = self.stream.render(a, a + self.segment, self.skew)
        pwf = propagate(tx, self.profile, self._sop, seg_rng.substream("channel"))
        if self.compensation is not None:
            c = self.compensation
            pwf.x, pwf.y = c[0, 0] * pwf.x + c[0, 1] * pwf.y, c[1, 0] * pwf.x + c[1, 1] * pwf.y
        self._detector.rng = seg_rng.substream("detector")
        out = self._detector.detect(pwf, start=a)
        self.sops.append(self._sop)
        self._sop = evolve_sop(self.sop_model, self.segment / 1e9, self._sop, self._sop_rng)
        return out

    def _get(self, i: int) -> np.ndarray:
        if i in self._cache:
            return self._cache[i]
        if i < self._next:
            raise ValueError(f"segment {i} was evicted; sources are read forward only")
        while self._next <= i:
            self._cache[self._next] = self._produce(self._next)
            self._next += 1
            while len(self._cache) > self._cache_size:
                del self._cache[min(self._cache)]
        return self._cache[i]

    def read(self, a: int, b: int) -> np.ndarray:
        out = np.zeros(b - a)
        lo = max(a, 0)
        if b <= lo:
            return out
        for i in range(lo // self.segment, (b - 1) // self.segment + 1):
            s0 = i * self.segment
            seg = self._get(i)
            x0, x1 = max(lo, s0), min(b, s0 + self.segment)
            out[x0 - a:x1 - a] = seg[x0 - s0:x1 - s0]
        return out

    __call__ = read
