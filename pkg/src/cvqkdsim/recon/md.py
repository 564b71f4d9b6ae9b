"""Multidimensional reconciliation maps over the normed division algebras.

Bob's normalized block ``y / |y|`` is sent to the BPSK point ``u / sqrt(d)``
by left multiplication with ``m = (u / sqrt d) * conj(y / |y|)``. Since the
algebras of dimension 1, 2, 4 and 8 are alternative, ``m * (y/|y|)``
equals ``u / sqrt d`` exactly, and left multiplication by a unit element
is an isometry, so Alice's noise keeps its variance after the map.

Products are computed by Cayley-Dickson doubling,
``(a, b)(c, d) = (ac - conj(d) b, d a + b conj(c))``, vectorized over
leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["MdMap", "cd_mul", "cd_conj", "md_reconcile_map", "md_reconcile_apply",
           "md_llr", "bits_to_points"]


def cd_conj(a):
    a = np.asarray(a, dtype=float)
    out = -a
    out[..., 0] = a[..., 0]
    return out


def cd_mul(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = a.shape[-1]
    if d != b.shape[-1] or d not in (1, 2, 4, 8):
        raise ValueError("dimension must be 1, 2, 4 or 8 and match")
    if d == 1:
        return a * b
    h = d // 2
    p, q = a[..., :h], a[..., h:]
    r, s = b[..., :h], b[..., h:]
    left = cd_mul(p, r) - cd_mul(cd_conj(s), q)
    right = cd_mul(s, p) + cd_mul(q, cd_conj(r))
    return np.concatenate([left, right], axis=-1)


def bits_to_points(bits, d: int) -> np.ndarray:
    """``(1 - 2 bit) / sqrt(d)`` reshaped to ``(-1, d)``."""
    b = np.asarray(bits, dtype=float).reshape(-1, d)
    return (1.0 - 2.0 * b) / math.sqrt(d)


@dataclass
class MdMap:
    """Per-block rotation elements ``m`` and Bob's block norms."""

    d: int
    m: np.ndarray
    norms: np.ndarray

    def __post_init__(self):
        if self.d not in (1, 2, 4, 8):
            raise ValueError("d must be 1, 2, 4 or 8")
        self.m = np.asarray(self.m, dtype=float).reshape(-1, self.d)
        self.norms = np.asarray(self.norms, dtype=float).reshape(-1)
        if self.m.shape[0] != self.norms.size:
            raise ValueError("map and norm counts differ")

    def __len__(self):
        return self.norms.size


def md_reconcile_map(bob, code_bits, d: int = 8) -> MdMap:
    """Maps taking each normalized d-block of ``bob`` onto its BPSK point."""
    y = np.asarray(bob, dtype=float).reshape(-1, d)
    norms = np.linalg.norm(y, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm block cannot be mapped")
    u = bits_to_points(code_bits, d)
    if u.shape != y.shape:
        raise ValueError("bit count does not match the data")
    m = cd_mul(u, cd_conj(y / norms[:, None]))
    return MdMap(d, m, norms)


def md_reconcile_apply(md: MdMap, alice) -> np.ndarray:
    """Rotate Alice's blocks with Bob's maps; returns ``(blocks, d)`` values."""
    x = np.asarray(alice, dtype=float).reshape(-1, md.d)
    if x.shape[0] != len(md):
        raise ValueError(f"expected {len(md)} blocks of {md.d}, got {x.shape}")
    return cd_mul(md.m, x)


def md_llr(md: MdMap, alice, gain: float, noise_var: float, scale: float = 1.0) -> np.ndarray:
    """Soft inputs for decoding Bob's bits from Alice's data.

    With Bob's data ``y = gain * x + n`` and ``var(n) = noise_var`` per real
    dimension, the rotated values are BPSK at amplitude ``1 / sqrt(d)`` in
    noise of variance ``noise_var / |y|^2``; ``scale`` multiplies the
    resulting LLRs.
    """
    v = md_reconcile_apply(md, alice)
    llr = 2.0 * gain * md.norms[:, None] * v / (math.sqrt(md.d) * noise_var)
    return scale * llr.reshape(-1)
