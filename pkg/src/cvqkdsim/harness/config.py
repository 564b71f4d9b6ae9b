"""Run configuration: one INI section plus command-line overrides."""

from __future__ import annotations

import configparser
import typing
from dataclasses import dataclass, fields, replace
from pathlib import Path

__all__ = ["RunConfig", "load_config"]


@dataclass(frozen=True)
class RunConfig:
    link: str = "L2"
    links_file: str = ""
    rounds: int = 6
    seed: int = 0
    fidelity: str = "symbol"
    # TX schedule
    n_blocks: int = 10
    block_period_s: float = 0.18
    burst_fraction: float = 0.3
    v_mod: float = 4.0
    v_mod_auto: bool = False
    # receiver
    elec_noise: float = 0.1
    eta_t: float = 0.33
    calibration_samples: int = 10_000_000
    trigger_level: float = 3.0
    trigger_timeout_blocks: float = 2.0
    max_blocks: int = 100
    pilot_snr_threshold_db: float = 10.0
    dsp_s_per_block: float = 0.2
    # polarization control
    spsa_iters: int = 30
    spsa_eval_s: float = 0.01
    measurement_noise: float = 0.01
    # estimation and key rate
    pe_fraction: float = 0.5
    beta: float = 0.95
    fer: float = 0.5
    baud: float = 20e6
    # reconciliation
    code: str = "met_r010_n98304"
    d: int = 8
    llr_scale: float = 1.0
    max_iters: int = 3000
    recon_max_frames: int = 2
    rate_adapt: bool = True
    # key delivery
    refresh_messages: int = 1000
    refresh_period_s: float = 5.0
    messages: int = 1000
    message_interval_s: float = 1e-3

    def __post_init__(self):
        if self.rounds < 1 or self.n_blocks < 1:
            raise ValueError("rounds and n_blocks must be at least 1")
        if self.fidelity not in ("symbol", "waveform"):
            raise ValueError("fidelity must be 'symbol' or 'waveform'")
        if not 0 < self.burst_fraction <= 1:
            raise ValueError("burst_fraction must be in (0, 1]")
        if not 0 <= self.pe_fraction <= 1:
            raise ValueError("pe_fraction must be in [0, 1]")
        if not 0 < self.beta <= 1 or not 0 <= self.fer <= 1:
            raise ValueError("beta must be in (0, 1] and fer in [0, 1]")

    @property
    def burst_s(self) -> float:
        return self.n_blocks * self.block_period_s

    @property
    def round_period_s(self) -> float:
        return self.burst_s / self.burst_fraction

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


def _convert(kind, text: str):
    if kind is bool:
        return text.strip().lower() in ("1", "true", "yes", "on")
    if kind is int:
        return int(float(text))
    return kind(text)


def load_config(path=None, section: str = "run", **overrides) -> RunConfig:
    """Read ``path`` (if given), then apply non-``None`` keyword overrides."""
    values = {}
    hints = typing.get_type_hints(RunConfig)
    if path is not None:
        parser = configparser.ConfigParser()
        if not parser.read(Path(path)):
            raise FileNotFoundError(path)
        if parser.has_section(section):
            known = {f.name for f in fields(RunConfig)}
            for key, text in parser.items(section):
                if key not in known:
                    raise ValueError(f"unknown config key {key!r}")
                values[key] = _convert(hints[key], text)
    return RunConfig(**values).with_(**overrides)
