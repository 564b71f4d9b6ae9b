"""Per-run summaries: relative-SNR histograms and SKR statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

__all__ = ["RelativeSnrReport", "SkrSummary", "relative_snr_report", "skr_report",
           "write_relative_snr_csv"]

BIN_WIDTH = 0.01


@dataclass
class RelativeSnrReport:
    values: np.ndarray
    edges: np.ndarray
    density: np.ndarray
    std: float


def relative_snr_report(rounds, bin_width: float = BIN_WIDTH) -> RelativeSnrReport:
    """Histogram of per-frame linear SNR divided by its round mean.

    ``rounds`` is a sequence of per-round sequences of frame SNRs in dB.
    Rounds with fewer than two frames are skipped.
    """
    rel = []
    for snr_db in rounds:
        lin = 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)
        if lin.size < 2:
            continue
        rel.append(lin / lin.mean())
    if not rel:
        raise ValueError("need at least one round with two or more frames")
    values = np.concatenate(rel)
    # bins aligned so that 1.0 sits in the middle of a bin
    lo = math.floor((values.min() - 1.0) / bin_width - 0.5)
    hi = math.ceil((values.max() - 1.0) / bin_width + 0.5)
    edges = 1.0 + (np.arange(lo, hi + 1) + 0.5) * bin_width
    counts, _ = np.histogram(values, edges)
    density = counts / (counts.sum() * bin_width)
    return RelativeSnrReport(values, edges, density, float(np.std(values)))


def write_relative_snr_csv(path, report: RelativeSnrReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_low", "bin_high", "density"])
        for a, b, d in zip(report.edges[:-1], report.edges[1:], report.density):
            w.writerow([f"{a:.4f}", f"{b:.4f}", f"{d:.6g}"])


@dataclass(frozen=True)
class SkrSummary:
    mean_kbps: float
    std_kbps: float
    rounds: int

    def __str__(self):
        return f"{self.mean_kbps:.1f} ± {self.std_kbps:.1f} kbps over {self.rounds} rounds"


def skr_report(records) -> SkrSummary:
    """Mean and sample standard deviation of per-round SKR, zeros included."""
    skr = np.array([_skr_kbps(r) for r in records], dtype=float)
    if skr.size == 0:
        raise ValueError("need at least one record")
    std = float(np.std(skr, ddof=1)) if skr.size > 1 else 0.0
    return SkrSummary(float(skr.mean()), std, int(skr.size))


def _skr_kbps(rec) -> float:
    if isinstance(rec, (int, float)):
        return float(rec)
    return float(rec.skr_kbps)
