"""Symbol-level link model for full protocol runs.

Rendering a round of 200 frames at 1 GS/s takes minutes, so runs default to
this model: it draws Bob's calibrated symbols directly from the Gaussian
channel the waveform path realizes, with the polarization overlap between
the drifting channel SOP and the receiver's paddle setting acting as an
extra loss. The envelope seen by the trigger, the pilot SNR and the
per-frame QPSK SNR estimate follow the same powers as the waveform path.
"""

from __future__ import annotations

import math

import numpy as np

from ..channel import evolve_sop, rotation, random_axis
from ..core import LinkProfile, RngStream
from ..polctl import JonesObjective, PaddleState, paddle_unitary
from ..txdsp import FRAME_SLOTS, FRAMES_PER_BLOCK, SPS, TxSignalPlan

__all__ = ["SymbolLink", "FrameObservation", "ENVELOPE_RATE_HZ"]

ENVELOPE_RATE_HZ = 1000.0
FRAME_S = FRAME_SLOTS * SPS / 1e9
# Complex-baseband boxcar length behind the pilot SNR estimate.
PILOT_BOXCAR = 1000


class FrameObservation:
    """What the receiver recovers from one frame on the symbol path."""

    __slots__ = ("frame_id", "symbols", "pilot_snr_db", "qpsk_snr_db", "overlap")

    def __init__(self, frame_id, symbols, pilot_snr_db, qpsk_snr_db, overlap):
        self.frame_id = frame_id
        self.symbols = symbols
        self.pilot_snr_db = pilot_snr_db
        self.qpsk_snr_db = qpsk_snr_db
        self.overlap = overlap


class SymbolLink:
    """Channel state shared by the TX output and the RX input.

    Logical time advances with :meth:`advance`; the SOP follows the
    profile's drift model. ``gain`` is the detector's raw-units-per-SNU
    variance factor, so raw variances divided by it are in SNU.
    """

    def __init__(self, profile: LinkProfile, plan: TxSignalPlan, rng: RngStream,
                 eta_t: float, elec_noise: float, gain: float = 1.0):
        self.profile = profile
        self.plan = plan
        self.rng = rng
        self.eta_t = eta_t
        self.elec_noise = elec_noise
        self.gain = gain
        init = rng.substream("sop-initial")
        self.sop = rotation(init.uniform(0, math.pi), random_axis(init))
        self._sop_rng = rng.substream("sop")
        self.paddle = PaddleState.neutral()
        self.time_s = 0.0

    @property
    def noise_snu(self) -> float:
        """Per-quadrature noise of Bob's data in SNU."""
        return 1.0 + self.elec_noise + self.profile.excess_noise + self.profile.classical_crosstalk

    def overlap(self, paddle: PaddleState | None = None) -> float:
        j = paddle_unitary(paddle or self.paddle) @ self.sop
        return float(abs(j[0, 0]) ** 2)

    def advance(self, dt: float) -> None:
        if dt > 0:
            self.sop = evolve_sop(self.profile.sop_model, dt, self.sop, self._sop_rng)
            self.time_s += dt

    def objective(self, rng, measurement_noise: float, eval_s: float) -> JonesObjective:
        """Live RF-power objective; shares and advances this link's SOP."""
        return JonesObjective(self.sop, r_max=1.0, floor=0.1, noise=measurement_noise,
                              rng=rng, sop_model=self.profile.sop_model, dt=eval_s)

    def adopt(self, objective: JonesObjective, paddle: PaddleState, elapsed: float) -> None:
        """Take back the SOP after an optimization and set the paddles."""
        self.sop = objective.sop
        self.paddle = paddle
        self.time_s += elapsed

    def envelope(self, schedule, duration_s: float, rng) -> np.ndarray:
        """Mean detector power per millisecond over ``duration_s``.

        ``schedule`` lists block start times relative to now. The SOP is
        held at its current value over the capture window.
        """
        n = int(round(duration_s * ENVELOPE_RATE_HZ))
        eta = self.profile.transmittance * self.eta_t * self.overlap()
        p = self.plan
        idle = eta * p.pilot_power + self.noise_snu
        burst = eta * (p.qpsk_power + 2.0 * p.v_mod) / (2.0 * SPS)
        env = np.full(n, idle)
        block_ms = int(round(FRAMES_PER_BLOCK * FRAME_S * ENVELOPE_RATE_HZ))
        for t0 in schedule:
            i = int(round(t0 * ENVELOPE_RATE_HZ))
            env[max(i, 0):max(i + block_ms, 0)] += burst
        # each point averages 1e6 samples of a roughly Gaussian output
        env *= 1.0 + rng.standard_normal(n) * math.sqrt(2.0 / 1e6)
        return self.gain * env

    def observe_block(self, frame_ids, alice_blocks, v_mod: float, rng) -> list:
        """Bob's SNU symbols for one block, plus per-frame SNR estimates.

        ``alice_blocks`` holds Alice's symbols per frame. The SOP advances
        by one frame time between frames.
        """
        out = []
        noise = self.noise_snu
        t_link = self.profile.transmittance * self.eta_t
        for fid, x in zip(frame_ids, alice_blocks):
            ov = self.overlap()
            eta = t_link * ov
            t = math.sqrt(eta / 2.0)
            n = rng.standard_normal((2, x.size))
            y = t * x + math.sqrt(noise) * (n[0] + 1j * n[1])
            pilot_lin = eta * self.plan.pilot_power * PILOT_BOXCAR / (4.0 * noise)
            pilot_lin *= 1.0 + rng.standard_normal() * math.sqrt(2.0 / PILOT_BOXCAR)
            # decision-directed estimate over the 20,000 QPSK symbols of the frame
            q_true = t * t * self.plan.qpsk_power / (2.0 * noise)
            q_hat = q_true / (rng.chisquare(2 * FRAME_SLOTS) / (2 * FRAME_SLOTS))
            out.append(FrameObservation(
                int(fid), y,
                10.0 * math.log10(max(pilot_lin, 1e-30)),
                10.0 * math.log10(max(q_hat, 1e-30)),
                ov,
            ))
            self.advance(FRAME_S)
        return out
