"""Shot-noise calibration, Gaussian parameter estimation and key-rate bounds.

Conventions
-----------
Alice's symbols ``x`` are complex with per-quadrature variance ``v_mod``
(SNU). Bob's heterodyne output, once normalized by the calibration factor,
has per-quadrature variance

    var(y) = eta * v_mod / 2 + 1 + xi,        eta = eta_t * eta_u

where ``xi = xi_t + xi_u`` is the total output-referred excess noise and the
trusted part ``xi_t`` is the electronic noise ``v_el``. The only conversion
to input-referred quantities happens in :func:`holevo_bound`, where the
untrusted noise becomes ``eps = 2 * xi_u / eta`` at the channel input.

The Holevo bound uses the standard trusted-detector heterodyne model for
reverse reconciliation under collective attacks (asymptotic regime).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CalibrationInvalid",
    "NonPhysicalState",
    "CalibrationRecord",
    "ChannelEstimate",
    "SecurityResult",
    "calibrate_snu",
    "estimate_channel",
    "symplectic_eigenvalues",
    "entropy_g",
    "holevo_bound",
    "holevo_from_params",
    "mutual_information",
    "secret_key_rate",
    "evaluate_security",
    "XI_U_FLOOR",
    "ETA_T",
]

ETA_T = 0.33
# Untrusted-noise value substituted for non-positive estimates before key-rate use.
XI_U_FLOOR = 0.002


class CalibrationInvalid(ValueError):
    pass


class NonPhysicalState(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationRecord:
    """Vacuum calibration from a pair of signal-off captures.

    ``u = var_on - var_off`` is the raw variance of one shot-noise unit.
    """

    var_on: float
    var_off: float
    u: float
    v_el: float

    def normalize(self, samples):
        """Scale raw amplitudes to SNU amplitudes."""
        return np.asarray(samples) / math.sqrt(self.u)


def calibrate_snu(var_on: float, var_off: float) -> CalibrationRecord:
    var_on, var_off = float(var_on), float(var_off)
    u = var_on - var_off
    if not (u > 0) or var_off < 0:
        raise CalibrationInvalid(f"need var_on > var_off >= 0, got {var_on!r}, {var_off!r}")
    return CalibrationRecord(var_on=var_on, var_off=var_off, u=u, v_el=var_off / u)


@dataclass(frozen=True)
class ChannelEstimate:
    v_mod: float
    eta: float
    xi: float
    v_el: float
    n_symbols: int
    eta_t: float = ETA_T
    eta_se: float = 0.0
    xi_se: float = 0.0

    def __post_init__(self):
        if not 0 < self.eta_t <= 1:
            raise ValueError("eta_t must be in (0, 1]")

    @property
    def xi_t(self) -> float:
        return self.v_el

    @property
    def eta_u(self) -> float:
        return self.eta / self.eta_t

    @property
    def xi_u(self) -> float:
        """Raw untrusted noise estimate, possibly negative."""
        return self.xi - self.xi_t

    @property
    def xi_u_key(self) -> float:
        """Untrusted noise used for key-rate evaluation."""
        return self.xi_u if self.xi_u > 0 else XI_U_FLOOR

    @property
    def loss_u_db(self) -> float:
        return -10.0 * math.log10(self.eta_u) if self.eta_u > 0 else math.inf

    @property
    def snr(self) -> float:
        """Per-quadrature SNR of Bob's data with the key-rate noise value."""
        return (self.eta * self.v_mod / 2.0) / (1.0 + self.xi_t + self.xi_u_key)


def estimate_channel(alice, bob, cal: CalibrationRecord, v_mod: float | None = None,
                     eta_t: float = ETA_T) -> ChannelEstimate:
    """Estimate transmittance and excess noise from paired symbols.

    Parameters
    ----------
    alice : array of complex
        Alice's modulation symbols (SNU amplitudes).
    bob : array of complex
        Bob's heterodyne symbols, already normalized with ``cal``.
    cal : CalibrationRecord
        Calibration of the capture the symbols come from.
    v_mod : float, optional
        Nominal modulation variance; the empirical value is used when omitted.

    Returns
    -------
    ChannelEstimate
        Includes standard errors for ``eta`` and ``xi``.
    """
    a = np.asarray(alice)
    b = np.asarray(bob)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if not isinstance(cal, CalibrationRecord) or not cal.u > 0:
        raise CalibrationInvalid("calibration record invalid")
    n = a.size
    if n < 2:
        raise ValueError("need at least two symbols")

    etas, xis, eta_vars, xi_vars, vas = [], [], [], [], []
    for qa, qb in ((a.real, b.real), (a.imag, b.imag)):
        saa = float(np.dot(qa, qa))
        t = float(np.dot(qa, qb)) / saa
        resid = float(np.mean((qb - t * qa) ** 2))
        var_a = saa / n
        # var(B) - eta*var(A)/2 - 1 with eta = 2 t^2
        etas.append(2.0 * t * t)
        xis.append(resid - 1.0)
        eta_vars.append((4.0 * t) ** 2 * resid / saa)
        xi_vars.append(2.0 * resid * resid / n)
        vas.append(var_a)

    return ChannelEstimate(
        v_mod=float(np.mean(vas)) if v_mod is None else float(v_mod),
        eta=float(np.mean(etas)),
        xi=float(np.mean(xis)),
        v_el=cal.v_el,
        n_symbols=int(n),
        eta_t=eta_t,
        eta_se=0.5 * math.sqrt(sum(eta_vars)),
        xi_se=0.5 * math.sqrt(sum(xi_vars)),
    )


# ---------------------------------------------------------------------------
# Gaussian-state entropies


def symplectic_eigenvalues(cov, tol: float = 1e-9):
    """Symplectic spectrum of a 2n x 2n covariance matrix (xpxp ordering).

    Raises
    ------
    NonPhysicalState
        If the matrix is not symmetric positive-definite or violates the
        uncertainty relation (an eigenvalue below ``1 - tol``).
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or cov.shape[0] % 2:
        raise ValueError("covariance must be 2n x 2n")
    if not np.allclose(cov, cov.T, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise NonPhysicalState("covariance not symmetric")
    n = cov.shape[0] // 2
    omega = np.kron(np.eye(n), np.array([[0.0, 1.0], [-1.0, 0.0]]))
    ev = np.abs(np.linalg.eigvals(1j * omega @ cov))
    nu = np.sort(ev)[::2]
    if np.any(np.linalg.eigvalsh(cov) <= 0) or np.any(nu < 1 - tol):
        raise NonPhysicalState(f"symplectic eigenvalues {nu} violate uncertainty relation")
    return nu


def entropy_g(x):
    """Von Neumann entropy (bits) of a thermal state with mean photon number ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    xp = x[pos]
    out[pos] = (xp + 1) * np.log2(xp + 1) - xp * np.log2(xp)
    return out if out.ndim else float(out)


def _s(nu):
    return entropy_g((np.asarray(nu) - 1.0) / 2.0)


def _two_mode_spectrum(a: float, b: float, c: float) -> tuple[float, float]:
    """Symplectic eigenvalues of ``[[a I, c Z], [c Z, b I]]``.

    Unlike the invariant-based roots this never takes the square root of a
    near-zero discriminant, so pure states come out at 1 to rounding.
    """
    root = math.sqrt((a + b) ** 2 - 4.0 * c * c)
    return 0.5 * (root + (b - a)), 0.5 * (root - (b - a))


def holevo_from_params(v_mod: float, eta_u: float, xi_u: float, eta_t: float = ETA_T,
                       v_el: float = 0.0) -> float:
    """Holevo information chi_BE (bits/symbol), heterodyne, trusted detector.

    ``xi_u`` is the output-referred untrusted noise; ``v_el`` the trusted
    electronic noise (SNU). The receiver is a beamsplitter of transmittance
    ``eta_t`` whose other port carries half of an EPR pair (modes F, G)
    sized to reproduce ``v_el``; Eve holds the purification of A and B.
    """
    if not (0 < eta_u <= 1) or not (0 < eta_t <= 1):
        raise NonPhysicalState(f"transmittances out of range: eta_u={eta_u}, eta_t={eta_t}")
    if v_mod <= 0 or v_el < 0:
        raise NonPhysicalState("v_mod must be positive and v_el non-negative")
    if eta_t == 1 and v_el > 0:
        raise NonPhysicalState("electronic noise needs eta_t < 1 in the beamsplitter model")
    if xi_u < 0:
        raise NonPhysicalState("untrusted noise must be non-negative")
    V = v_mod + 1.0
    T = eta_u
    eps = 2.0 * xi_u / (eta_t * eta_u)  # input-referred
    a = V
    b = T * (V - 1.0 + eps) + 1.0
    c = math.sqrt(T * (V * V - 1.0))
    s_ab = float(np.sum(_s(_two_mode_spectrum(a, b, c))))

    # conditional state of (A, F', G) after Bob heterodynes B' = t B + r F
    t2, r2 = eta_t, 1.0 - eta_t
    t, r = math.sqrt(t2), math.sqrt(r2)
    v = 1.0 + 2.0 * v_el / r2 if r2 > 0 else 1.0
    d = math.sqrt(v * v - 1.0)
    m1 = t2 * b + r2 * v + 1.0
    k = t * r * (v - b)
    z = np.diag([1.0, -1.0])
    eye = np.eye(2)
    blocks = {
        (0, 0): (a - t2 * c * c / m1) * eye,
        (1, 1): (r2 * b + t2 * v - k * k / m1) * eye,
        (2, 2): (v - r2 * d * d / m1) * eye,
        (0, 1): (-r * c - t * c * k / m1) * z,
        (0, 2): (-t * r * c * d / m1) * eye,
        (1, 2): (t * d - k * r * d / m1) * z,
    }
    cond = np.zeros((6, 6))
    for (i, j), blk in blocks.items():
        cond[2 * i:2 * i + 2, 2 * j:2 * j + 2] = blk
        cond[2 * j:2 * j + 2, 2 * i:2 * i + 2] = blk.T
    s_cond = float(np.sum(_s(symplectic_eigenvalues(cond))))
    return max(s_ab - s_cond, 0.0)


def holevo_bound(est: ChannelEstimate) -> float:
    return holevo_from_params(est.v_mod, est.eta_u, est.xi_u_key, est.eta_t, est.v_el)


def mutual_information(est: ChannelEstimate) -> float:
    """Alice-Bob information for heterodyne detection, bits per complex symbol."""
    return math.log2(1.0 + est.snr)


def secret_key_rate(baud: float, fer: float, beta: float, i_ab: float, chi_be: float) -> float:
    """``baud * (1 - fer) * (beta * i_ab - chi_be)``, floored at zero."""
    if not 0 <= fer <= 1:
        raise ValueError(f"FER must be in [0, 1], got {fer!r}")
    if not 0 < beta <= 1:
        raise ValueError(f"beta must be in (0, 1], got {beta!r}")
    net = beta * i_ab - chi_be
    if net <= 0:
        return 0.0
    return baud * (1.0 - fer) * net


@dataclass(frozen=True)
class SecurityResult:
    i_ab: float
    chi_be: float
    beta: float
    fer: float
    baud: float
    skr_bps: float
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def net_bits_per_symbol(self) -> float:
        """Asymptotic secret bits per symbol, floored at zero."""
        return max(self.beta * self.i_ab - self.chi_be, 0.0)


def evaluate_security(est: ChannelEstimate, baud: float = 20e6, fer: float = 0.5,
                      beta: float = 0.95) -> SecurityResult:
    i_ab = mutual_information(est)
    chi = holevo_bound(est)
    return SecurityResult(i_ab=i_ab, chi_be=chi, beta=beta, fer=fer, baud=baud,
                          skr_bps=secret_key_rate(baud, fer, beta, i_ab, chi))
