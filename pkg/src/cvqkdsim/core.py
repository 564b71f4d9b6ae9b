"""Shared domain types, unit conversions, link presets and seeded randomness.

Noise quantities are plain floats in shot-noise units (SNU, vacuum variance
= 1), always referred to the receiver output. Transmittances are plain
floats in [0, 1]. Both are validated at the API boundaries that accept them.
"""

from __future__ import annotations

import configparser
import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Union

import numpy as np

__all__ = [
    "SlowWalk",
    "FastFluct",
    "Static",
    "SopModel",
    "LinkProfile",
    "RngStream",
    "db_to_transmittance",
    "transmittance_to_db",
    "load_link_presets",
    "lookup_link",
    "read_link_file",
    "write_link_file",
    "LinkNotFound",
    "DEFAULT_SPOOL_DB_PER_KM",
]

# Assumed attenuation for the lab spool; the only preset without a measured loss.
DEFAULT_SPOOL_DB_PER_KM = 0.2


class LinkNotFound(KeyError):
    pass


def db_to_transmittance(loss_db: float) -> float:
    """Convert a loss in dB to a power transmittance ``10**(-loss_db/10)``."""
    loss_db = float(loss_db)
    if not math.isfinite(loss_db):
        raise ValueError(f"loss must be finite, got {loss_db!r}")
    if loss_db < 0:
        raise ValueError(f"loss must be non-negative, got {loss_db!r}")
    return 10.0 ** (-loss_db / 10.0)


def transmittance_to_db(t: float) -> float:
    """Inverse of :func:`db_to_transmittance`."""
    t = float(t)
    if not (0.0 < t <= 1.0):
        raise ValueError(f"transmittance must be in (0, 1], got {t!r}")
    return -10.0 * math.log10(t)


# ---------------------------------------------------------------------------
# Polarization drift models


@dataclass(frozen=True)
class Static:
    name = "Static"


@dataclass(frozen=True)
class SlowWalk:
    """Rotational diffusion of the SOP on the Poincaré sphere (rad²/s)."""

    diffusion: float = 1e-4
    name = "SlowWalk"

    def __post_init__(self):
        if not self.diffusion > 0:
            raise ValueError("diffusion must be positive")


@dataclass(frozen=True)
class FastFluct:
    """Diffusion plus Poisson-arriving burst rotations.

    ``burst_angle`` is the standard deviation (rad) of the rotation angle of
    a single burst.
    """

    diffusion: float = 1e-1
    burst_rate: float = 10.0
    burst_angle: float = 0.25
    name = "FastFluct"

    def __post_init__(self):
        if not self.diffusion > 0:
            raise ValueError("diffusion must be positive")
        if not self.burst_rate > 0:
            raise ValueError("burst rate must be positive")
        if self.burst_angle < 0:
            raise ValueError("burst angle must be non-negative")


SopModel = Union[Static, SlowWalk, FastFluct]


def _sop_to_text(model: SopModel) -> str:
    if isinstance(model, Static):
        return "Static"
    if isinstance(model, SlowWalk):
        return f"SlowWalk({model.diffusion:g})"
    return f"FastFluct({model.diffusion:g}, {model.burst_rate:g}, {model.burst_angle:g})"


def parse_sop_model(text: str) -> SopModel:
    """Parse ``Static``, ``SlowWalk(D)`` or ``FastFluct(D, rate[, angle])``."""
    text = text.strip()
    name, _, rest = text.partition("(")
    name = name.strip()
    args = [float(a) for a in rest.rstrip(")").split(",") if a.strip()] if rest else []
    if name == "Static" and not args:
        return Static()
    if name == "SlowWalk" and len(args) <= 1:
        return SlowWalk(*args)
    if name == "FastFluct" and len(args) <= 3:
        return FastFluct(*args)
    raise ValueError(f"cannot parse SOP model {text!r}")


@dataclass(frozen=True)
class LinkProfile:
    """Channel description.

    ``excess_noise`` and ``classical_crosstalk`` are output-referred SNU.
    ``extra_loss_db`` holds fixed insertion loss not contained in the
    physical fiber loss (connector adapters at the field sites).
    """

    label: str
    length_km: float
    loss_db: float
    sop_model: SopModel = field(default_factory=Static)
    excess_noise: float = 0.0
    classical_crosstalk: float = 0.0
    extra_loss_db: float = 0.0
    loss_assumed: bool = False

    def __post_init__(self):
        if not self.loss_db >= 0 or not self.extra_loss_db >= 0:
            raise ValueError("loss must be non-negative")
        if self.length_km < 0:
            raise ValueError("length must be non-negative")
        if not math.isfinite(self.excess_noise):
            raise ValueError("excess noise must be finite")
        if self.classical_crosstalk < 0:
            raise ValueError("crosstalk must be non-negative")

    @property
    def total_loss_db(self) -> float:
        return self.loss_db + self.extra_loss_db

    @property
    def transmittance(self) -> float:
        return db_to_transmittance(self.total_loss_db)

    def with_(self, **changes) -> "LinkProfile":
        return replace(self, **changes)


def load_link_presets() -> list[LinkProfile]:
    """Links L0-L4.

    L0 is the 10 km lab spool whose loss is derived from
    :data:`DEFAULT_SPOOL_DB_PER_KM` (flagged via ``loss_assumed``). The
    loopback links (L2-L4) carry 0.3 dB for the two extra fiber adapters
    absent from the OTDR figures.
    """
    return [
        LinkProfile("L0", 10.0, 10.0 * DEFAULT_SPOOL_DB_PER_KM, SlowWalk(2e-5),
                    excess_noise=0.002, loss_assumed=True),
        LinkProfile("L1", 0.55, 5.5, SlowWalk(1e-4), excess_noise=0.004),
        LinkProfile("L2", 13.2, 4.1, FastFluct(1e-1, 10.0), excess_noise=0.002,
                    extra_loss_db=0.3),
        LinkProfile("L3", 15.3, 6.7, FastFluct(5e-2, 5.0), excess_noise=0.003,
                    extra_loss_db=0.3),
        LinkProfile("L4", 25.9, 8.9, FastFluct(2e-1, 20.0), excess_noise=0.030,
                    extra_loss_db=0.3),
    ]


def lookup_link(label: str, presets: Iterable[LinkProfile] | None = None) -> LinkProfile:
    for link in presets if presets is not None else load_link_presets():
        if link.label == label:
            return link
    raise LinkNotFound(label)


def read_link_file(path: str | Path) -> list[LinkProfile]:
    """Read link profiles from an INI-style file.

    One section per label with keys ``length_km``, ``loss_db``,
    ``sop_model`` and ``excess_noise_msnu``; ``extra_loss_db`` and
    ``crosstalk_msnu`` are optional.
    """
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    links = []
    for label in parser.sections():
        sec = parser[label]
        links.append(LinkProfile(
            label=label,
            length_km=sec.getfloat("length_km"),
            loss_db=sec.getfloat("loss_db"),
            sop_model=parse_sop_model(sec.get("sop_model", "Static")),
            excess_noise=sec.getfloat("excess_noise_msnu", 0.0) / 1e3,
            classical_crosstalk=sec.getfloat("crosstalk_msnu", 0.0) / 1e3,
            extra_loss_db=sec.getfloat("extra_loss_db", 0.0),
            loss_assumed=sec.getboolean("loss_assumed", False),
        ))
    return links


def write_link_file(path: str | Path, links: Iterable[LinkProfile]) -> None:
    parser = configparser.ConfigParser()
    for link in links:
        parser[link.label] = {
            "length_km": repr(link.length_km),
            "loss_db": repr(link.loss_db),
            "sop_model": _sop_to_text(link.sop_model),
            "excess_noise_msnu": repr(link.excess_noise * 1e3),
            "crosstalk_msnu": repr(link.classical_crosstalk * 1e3),
            "extra_loss_db": repr(link.extra_loss_db),
            "loss_assumed": str(link.loss_assumed).lower(),
        }
    with open(path, "w") as fh:
        parser.write(fh)


# ---------------------------------------------------------------------------
# Randomness


class RngStream:
    """Seeded, counter-based random source.

    Wraps a Philox generator keyed by a 64-bit seed, so a stream is fully
    determined by ``(seed, counter)``. Named substreams derive independent
    seeds, which keeps results reproducible when the order of consumers
    changes. Unknown attributes are forwarded to the numpy generator.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self.counter = int(counter) & 0xFFFF_FFFF_FFFF_FFFF
        self._gen = np.random.Generator(
            np.random.Philox(key=self.seed, counter=self.counter))

    def __repr__(self):
        return f"RngStream(seed={self.seed:#x}, counter={self.counter})"

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def substream(self, label: str | int) -> "RngStream":
        tag = zlib.crc32(str(label).encode())
        child = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.counter, tag))
        return RngStream(int(child.generate_state(1, dtype=np.uint64)[0]))

    def __getattr__(self, name):
        return getattr(self._gen, name)
