"""Toeplitz privacy amplification and the frame verification hash."""

from __future__ import annotations

import numpy as np
from scipy import signal

__all__ = ["toeplitz_extract", "poly_hash64", "HASH_PRIME"]

# Largest prime below 2**64.
HASH_PRIME = (1 << 64) - 59


def toeplitz_extract(key_bits, seed_bits, out_len: int) -> np.ndarray:
    """Multiply ``key_bits`` by the binary Toeplitz matrix defined by ``seed_bits``.

    Row ``i`` of the matrix is ``seed[i + K - 1], seed[i + K - 2], ..., seed[i]``
    for a key of length ``K``, so the product is a window of the integer
    convolution of seed and key, reduced mod 2.
    """
    key = np.asarray(key_bits, dtype=np.uint8).reshape(-1)
    seed = np.asarray(seed_bits, dtype=np.uint8).reshape(-1)
    k = key.size
    if out_len < 0 or out_len > k:
        raise ValueError(f"output length {out_len} outside [0, {k}]")
    if seed.size != k + out_len - 1 and out_len > 0:
        raise ValueError(f"seed must have {k + out_len - 1} bits, got {seed.size}")
    if np.any(key > 1) or np.any(seed > 1):
        raise ValueError("inputs must be bits")
    if out_len == 0:
        return np.zeros(0, dtype=np.uint8)
    # Sums are integers below K, far inside float64 precision.
    conv = signal.fftconvolve(seed.astype(float), key.astype(float))
    window = conv[k - 1:k - 1 + out_len]
    return (np.rint(window).astype(np.int64) & 1).astype(np.uint8)


def poly_hash64(bits, key: int) -> int:
    """Polynomial hash of a bit string, evaluated at ``key`` modulo ``HASH_PRIME``.

    Bits are packed big-endian into 64-bit words (the last one zero-padded)
    and the length is appended, so strings differing only in trailing zeros
    hash differently. Two distinct strings of ``w`` words collide for at
    most ``w + 1`` keys.
    """
    b = np.asarray(bits, dtype=np.uint8).reshape(-1)
    key %= HASH_PRIME
    packed = np.packbits(b)
    pad = (-packed.size) % 8
    words = np.concatenate([packed, np.zeros(pad, np.uint8)]).view(">u8")
    h = 0
    for w in words.tolist():
        h = (h * key + w) % HASH_PRIME
    return (h * key + b.size) % HASH_PRIME
