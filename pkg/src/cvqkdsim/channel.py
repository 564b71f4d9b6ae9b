"""Fiber channel: attenuation, excess-noise injection and SOP drift.

Polarization is handled in Jones calculus with SU(2) matrices. A random
rotation of angle ``theta`` on the Poincare sphere about unit axis ``n`` is
``cos(theta/2) I - i sin(theta/2) n.sigma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import FastFluct, LinkProfile, RngStream, SopModel, Static
from .security import ETA_T

__all__ = [
    "PolarizedWaveform",
    "identity_sop",
    "rotation",
    "random_axis",
    "rotation_angle",
    "is_unitary",
    "evolve_sop",
    "sop_series",
    "propagate",
    "SOP_BLOCK_SAMPLES",
]

SOP_BLOCK_SAMPLES = 1_000_000  # 1 ms at 1 GS/s

_PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)


@dataclass
class PolarizedWaveform:
    x: np.ndarray
    y: np.ndarray
    sample_rate_hz: float = 1e9

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError("polarization components differ in length")

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.x) ** 2 + np.abs(self.y) ** 2))


def identity_sop() -> np.ndarray:
    return np.eye(2, dtype=complex)


def rotation(angle: float, axis) -> np.ndarray:
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    return (math.cos(angle / 2) * np.eye(2)
            - 1j * math.sin(angle / 2) * np.tensordot(n, _PAULI, axes=1))


def random_axis(rng) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def rotation_angle(u) -> float:
    """Poincare-sphere rotation angle of an SU(2) matrix, in [0, 2 pi]."""
    c = np.clip(np.real(np.trace(u)) / 2, -1.0, 1.0)
    return 2.0 * math.acos(c)


def is_unitary(u, tol: float = 1e-10) -> bool:
    u = np.asarray(u)
    return (np.allclose(u.conj().T @ u, np.eye(2), atol=tol)
            and abs(abs(np.linalg.det(u)) - 1) < tol)


def evolve_sop(model: SopModel, dt: float, state, rng) -> np.ndarray:
    """Advance the channel SOP by ``dt`` seconds."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if isinstance(model, Static):
        return np.asarray(state)
    u = rotation(rng.normal(0.0, math.sqrt(model.diffusion * dt)), random_axis(rng))
    if isinstance(model, FastFluct):
        for _ in range(rng.poisson(model.burst_rate * dt)):
            u = rotation(rng.normal(0.0, model.burst_angle), random_axis(rng)) @ u
    out = u @ state
    # re-project onto SU(2) so round-off cannot accumulate over long walks
    a, b = out[0, 0], out[0, 1]
    norm = math.sqrt(abs(a) ** 2 + abs(b) ** 2)
    a, b = a / norm, b / norm
    return np.array([[a, b], [-np.conj(b), np.conj(a)]])


def sop_series(model: SopModel, n_steps: int, dt: float, rng, initial=None) -> np.ndarray:
    """``n_steps`` consecutive SOP matrices spaced ``dt``; the first is ``initial``."""
    out = np.empty((n_steps, 2, 2), dtype=complex)
    u = identity_sop() if initial is None else np.asarray(initial, dtype=complex)
    for i in range(n_steps):
        out[i] = u
        if i + 1 < n_steps:
            u = evolve_sop(model, dt, u, rng)
    return out


def propagate(samples, profile: LinkProfile, sop, rng: RngStream | None = None,
              start: int = 0, block_samples: int = SOP_BLOCK_SAMPLES,
              eta_t: float = ETA_T) -> PolarizedWaveform:
    """Send x-polarized samples through the link.

    ``sop`` is a single 2x2 matrix or a series indexed by
    ``(start + n) // block_samples``. Excess noise and crosstalk are white
    complex Gaussian on both polarizations, scaled so that after the
    receiver's ``eta_t`` they add ``profile.excess_noise +
    profile.classical_crosstalk`` SNU per quadrature at Bob's output.
    """
    s = np.asarray(getattr(samples, "samples", samples), dtype=complex) * math.sqrt(profile.transmittance)
    n = s.size
    series = np.asarray(sop, dtype=complex)
    if series.ndim == 2:
        x, y = series[0, 0] * s, series[1, 0] * s
    else:
        idx = (start + np.arange(n)) // block_samples
        lo = idx[0] if n else 0
        if n and idx[-1] >= series.shape[0]:
            raise ValueError("SOP series too short for the requested samples")
        x = np.empty(n, complex)
        y = np.empty(n, complex)
        for b in range(lo, (idx[-1] + 1) if n else lo):
            sel = slice(max(b * block_samples - start, 0), min((b + 1) * block_samples - start, n))
            x[sel] = series[b, 0, 0] * s[sel]
            y[sel] = series[b, 1, 0] * s[sel]
    xi = profile.excess_noise + profile.classical_crosstalk
    if xi > 0:
        if rng is None:
            raise ValueError("noise injection needs an rng")
        sigma = math.sqrt(2.0 * xi / eta_t)
        noise = rng.standard_normal((4, n)) * sigma
        x = x + noise[0] + 1j * noise[1]
        y = y + noise[2] + 1j * noise[3]
    elif xi < 0:
        raise ValueError("negative injected noise is not physical")
    return PolarizedWaveform(x, y)
