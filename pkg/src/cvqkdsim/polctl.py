"""Polarization control: piezo paddle model and SPSA optimization.

The receiver's LO is x-polarized, so the detected signal power is
``R_max * |J[0, 0]|^2`` with ``J = paddle @ channel``. The controller
maximizes the measured RF power by simultaneous perturbation stochastic
approximation. The gain schedule and its defaults are a stand-in tuned
for this model, not a reproduction of any particular hardware loop.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import evolve_sop

__all__ = [
    "V_PI",
    "V_MAX",
    "PaddleState",
    "SpsaConfig",
    "TraceRow",
    "JonesObjective",
    "paddle_unitary",
    "rf_power_objective",
    "spsa_iterate",
    "optimize_polarization",
    "write_trace_csv",
]

V_PI = 2.5
V_MAX = 5.0
AXES_DEG = (0.0, 45.0, 0.0, 45.0)


@dataclass(frozen=True)
class PaddleState:
    voltages: tuple

    def __post_init__(self):
        v = tuple(float(x) for x in self.voltages)
        if len(v) != 4:
            raise ValueError("paddle controller has four actuators")
        if any(not 0.0 <= x <= V_MAX for x in v):
            raise ValueError(f"voltages must lie in [0, {V_MAX}]: {v}")
        object.__setattr__(self, "voltages", v)

    @classmethod
    def clamped(cls, v) -> "PaddleState":
        return cls(tuple(np.clip(np.asarray(v, dtype=float), 0.0, V_MAX)))

    @classmethod
    def neutral(cls) -> "PaddleState":
        """Quarter-wave on every actuator: far from the half-wave settings
        where two same-axis plates lose a degree of freedom."""
        return cls((V_PI / 2,) * 4)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.voltages)


@dataclass(frozen=True)
class SpsaConfig:
    a: float = 2.5
    c: float = 0.3
    A: float = 3.0
    alpha: float = 0.602
    gamma: float = 0.101
    n_iter: int = 30
    measurement_noise: float = 0.01

    def __post_init__(self):
        if not (self.a > 0 and self.c > 0):
            raise ValueError("a and c must be positive")
        if self.n_iter < 1:
            raise ValueError("n_iter must be at least 1")
        if self.measurement_noise < 0:
            raise ValueError("measurement noise must be non-negative")


def _waveplate(retardance: float, axis_deg: float) -> np.ndarray:
    t = math.radians(2 * axis_deg)
    h = math.cos(retardance / 2)
    s = math.sin(retardance / 2)
    return np.array([[h - 1j * s * math.cos(t), -1j * s * math.sin(t)],
                     [-1j * s * math.sin(t), h + 1j * s * math.cos(t)]])


def paddle_unitary(state: PaddleState, v_pi: float = V_PI) -> np.ndarray:
    """Jones matrix of the four waveplates, first actuator applied first."""
    u = np.eye(2, dtype=complex)
    for v, axis in zip(state.voltages, AXES_DEG):
        u = _waveplate(math.pi * v / v_pi, axis) @ u
    return u


def rf_power_objective(rx_samples, floor: float, measurement_noise: float = 0.0,
                       rng=None) -> float:
    """Mean squared detector output above the calibrated noise floor.

    ``measurement_noise`` is the standard deviation of an additive Gaussian
    term standing in for electromagnetic interference.
    """
    x = np.asarray(rx_samples, dtype=float)
    if x.size < 10_000:
        raise ValueError("need at least 1e4 samples")
    r = float(np.mean(x * x)) - floor
    if measurement_noise:
        r += rng.normal(0.0, measurement_noise)
    return r


class JonesObjective:
    """Fast stand-in for measuring R on a live link.

    Evaluates ``R_max |J00|^2`` for the composite SOP and adds the
    statistical error of a ``snippet``-sample power estimate on top of
    a ``floor`` plus EMI noise of ``noise * R_max``. The channel SOP
    advances by ``dt`` per evaluation under ``sop_model``.
    """

    def __init__(self, channel_sop, r_max: float = 1.0, floor: float = 0.0,
                 noise: float = 0.0, snippet: int = 10_000, rng=None,
                 sop_model=None, dt: float = 0.01):
        self.sop = np.asarray(channel_sop, dtype=complex)
        self.r_max = r_max
        self.floor = floor
        self.noise = noise
        self.snippet = snippet
        self.rng = rng
        self.sop_model = sop_model
        self.dt = dt
        if (noise or floor) and rng is None:
            raise ValueError("noisy objective needs an rng")

    def true_value(self, state: PaddleState) -> float:
        j = paddle_unitary(state) @ self.sop
        return self.r_max * abs(j[0, 0]) ** 2

    def __call__(self, state: PaddleState) -> float:
        r = self.true_value(state)
        if self.rng is not None:
            sd = math.hypot(math.sqrt(2.0 / self.snippet) * (r + self.floor),
                            self.noise * self.r_max)
            r += self.rng.normal(0.0, sd)
        if self.sop_model is not None:
            self.sop = evolve_sop(self.sop_model, self.dt, self.sop, self.rng)
        return r


def spsa_iterate(state: PaddleState, k: int, cfg: SpsaConfig, objective, rng,
                 scale: float = 1.0) -> tuple[PaddleState, float, float]:
    """One ascent step; returns ``(state', R+, R-)``.

    ``scale`` divides the measured difference so the gains stay
    meaningful whatever the absolute RF power is.
    """
    if k < 1:
        raise ValueError("iteration index starts at 1")
    a_k = cfg.a / (cfg.A + k) ** cfg.alpha
    c_k = cfg.c / k ** cfg.gamma
    delta = rng.integers(0, 2, size=4) * 2 - 1
    v = state.array
    r_plus = objective(PaddleState.clamped(v + c_k * delta))
    r_minus = objective(PaddleState.clamped(v - c_k * delta))
    grad = (r_plus - r_minus) / (2.0 * c_k * delta) / scale
    return PaddleState.clamped(v + a_k * grad), r_plus, r_minus


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    r: float
    voltages: tuple
    r_true: float | None = field(default=None, compare=False)


def optimize_polarization(initial: PaddleState, objective, cfg: SpsaConfig, rng,
                          r_scale: float | None = None) -> tuple[PaddleState, list]:
    """Run ``cfg.n_iter`` SPSA steps; the trace holds R at every iterate.

    ``objective`` is any callable mapping a :class:`PaddleState` to a
    measured R; when it has ``true_value`` the noiseless R is recorded too.
    """
    truth = getattr(objective, "true_value", None)
    state = initial
    r0 = objective(state)
    scale = r_scale if r_scale is not None else getattr(objective, "r_max", 1.0)
    trace = [TraceRow(0, r0, state.voltages, truth(state) if truth else None)]
    for k in range(1, cfg.n_iter + 1):
        state, _, _ = spsa_iterate(state, k, cfg, objective, rng, scale)
        r = objective(state)
        trace.append(TraceRow(k, r, state.voltages, truth(state) if truth else None))
    return state, trace


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "R", "v1", "v2", "v3", "v4"])
        for row in trace:
            w.writerow([row.iteration, f"{row.r:.9g}", *(f"{v:.6f}" for v in row.voltages)])
