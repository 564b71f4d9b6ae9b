"""LDPC codes: construction, text I/O and syndrome-based sum-product decoding.

Codes are stored as plain text, one check per line: ``row: col col col``.
A header line ``# n m`` gives the block length and the number of checks.
Decoding runs belief propagation against a target syndrome, which is
what reverse reconciliation needs: Bob publishes ``H u`` and Alice
recovers ``u`` from her soft values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numba
import numpy as np
import scipy.sparse as sp

__all__ = [
    "LdpcCode",
    "DecodeResult",
    "construct_code",
    "construct_met",
    "low_rate_met",
    "ldpc_decode",
    "load_code",
    "available_codes",
    "measure_beta",
    "snr_for_beta",
    "InvalidEfficiency",
]


class InvalidEfficiency(ValueError):
    pass


@dataclass
class LdpcCode:
    n: int
    m: int
    check_ptr: np.ndarray   # CSR row pointer over checks
    edge_var: np.ndarray    # variable index of each edge, grouped by check
    name: str = ""

    def __post_init__(self):
        self.check_ptr = np.asarray(self.check_ptr, dtype=np.int64)
        self.edge_var = np.asarray(self.edge_var, dtype=np.int64)
        if self.check_ptr.size != self.m + 1 or self.check_ptr[-1] != self.edge_var.size:
            raise ValueError("inconsistent check pointer")
        if self.edge_var.size and (self.edge_var.min() < 0 or self.edge_var.max() >= self.n):
            raise ValueError("variable index out of range")
        order = np.argsort(self.edge_var, kind="stable")
        self.var_edges = order.astype(np.int64)
        counts = np.bincount(self.edge_var, minlength=self.n)
        self.var_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    @property
    def rate(self) -> float:
        """Design rate ``1 - m / n``."""
        return 1.0 - self.m / self.n

    @property
    def n_edges(self) -> int:
        return int(self.edge_var.size)

    @property
    def H(self) -> sp.csr_matrix:
        data = np.ones(self.edge_var.size, dtype=np.uint8)
        return sp.csr_matrix((data, self.edge_var, self.check_ptr), shape=(self.m, self.n))

    def syndrome(self, bits) -> np.ndarray:
        b = np.asarray(bits, dtype=np.uint8)
        if b.size != self.n:
            raise ValueError(f"expected {self.n} bits, got {b.size}")
        return _syndrome(self.check_ptr, self.edge_var, b)

    def to_text(self) -> str:
        lines = [f"# {self.n} {self.m}"]
        for r in range(self.m):
            cols = self.edge_var[self.check_ptr[r]:self.check_ptr[r + 1]]
            lines.append(f"{r}: " + " ".join(map(str, cols)))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str, name: str = "") -> "LdpcCode":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("#"):
            raise ValueError("missing '# n m' header")
        n, m = (int(x) for x in lines[0][1:].split())
        ptr = [0]
        cols = []
        expect = 0
        for ln in lines[1:]:
            head, _, rest = ln.partition(":")
            if int(head) != expect:
                raise ValueError(f"rows must be consecutive, got {head}")
            row = [int(x) for x in rest.split()]
            cols.extend(row)
            ptr.append(len(cols))
            expect += 1
        if expect != m:
            raise ValueError(f"header says {m} rows, found {expect}")
        return cls(n, m, np.array(ptr), np.array(cols, dtype=np.int64), name)

    @classmethod
    def load(cls, path) -> "LdpcCode":
        p = Path(path)
        return cls.from_text(p.read_text(), p.stem)


@numba.njit(cache=True)
def _syndrome(check_ptr, edge_var, bits):
    m = check_ptr.size - 1
    out = np.zeros(m, dtype=np.uint8)
    for c in range(m):
        s = 0
        for e in range(check_ptr[c], check_ptr[c + 1]):
            s ^= bits[edge_var[e]]
        out[c] = s
    return out


def construct_code(n: int, var_degrees: dict, check_degrees: dict, rng, name: str = "") -> LdpcCode:
    """Random code with the given node-perspective degree fractions.

    Sockets are matched by a random permutation; parallel edges are then
    removed by swapping with random other edges.
    """
    vdeg = _allocate(n, var_degrees)
    n_edges = int(vdeg.sum())
    avg_c = sum(d * f for d, f in check_degrees.items())
    m = int(round(n_edges / avg_c))
    cdeg = _allocate(m, check_degrees)
    # fix edge count mismatch on the check side
    diff = n_edges - int(cdeg.sum())
    i = 0
    while diff:
        step = 1 if diff > 0 else -1
        j = rng.integers(0, m)
        if cdeg[j] + step >= 2:
            cdeg[j] += step
            diff -= step
        i += 1
    var_sock = np.repeat(np.arange(n), vdeg)
    rng.shuffle(var_sock)
    chk_sock = np.repeat(np.arange(m), cdeg)
    var_sock = _remove_parallel(var_sock, chk_sock, rng)
    order = np.lexsort((var_sock, chk_sock))
    ptr = np.concatenate([[0], np.cumsum(np.bincount(chk_sock, minlength=m))])
    return LdpcCode(n, m, ptr, var_sock[order], name)


def construct_met(var_types, check_types, rng, name: str = "") -> LdpcCode:
    """Random multi-edge-type code.

    ``var_types`` and ``check_types`` are lists of ``(count, degrees)``
    where ``degrees`` gives the number of edges of each type. Per edge type
    the socket totals must agree; sockets are matched independently per
    type.
    """
    n_types = len(var_types[0][1])
    n = int(sum(c for c, _ in var_types))
    m = int(sum(c for c, _ in check_types))
    v_of = np.repeat(np.arange(len(var_types)), [c for c, _ in var_types])
    c_of = np.repeat(np.arange(len(check_types)), [c for c, _ in check_types])
    var_all, chk_all = [], []
    for t in range(n_types):
        vdeg = np.array([d[t] for _, d in var_types])[v_of]
        cdeg = np.array([d[t] for _, d in check_types])[c_of]
        if vdeg.sum() != cdeg.sum():
            raise ValueError(f"edge type {t}: {vdeg.sum()} variable vs {cdeg.sum()} check sockets")
        vs = np.repeat(np.arange(n), vdeg)
        rng.shuffle(vs)
        cs = np.repeat(np.arange(m), cdeg)
        vs = _remove_parallel(vs, cs, rng)
        var_all.append(vs)
        chk_all.append(cs)
    vs = np.concatenate(var_all)
    cs = np.concatenate(chk_all)
    order = np.lexsort((vs, cs))
    ptr = np.concatenate([[0], np.cumsum(np.bincount(cs, minlength=m))])
    return LdpcCode(n, m, ptr, vs[order], name)


def low_rate_met(n: int, a: float, p2: float, d2: int, dx: float, rng,
                 name: str = "") -> LdpcCode:
    """Three-edge-type low-rate ensemble.

    A fraction ``a`` of the variables carries 2 (share ``p2``) or 3
    type-1 edges plus ``d2`` type-2 edges; the rest are degree-1 nodes on
    type 3. Type-1 checks have average degree ``dx``; every degree-1 node
    hangs off its own check with 2 or 3 type-2 edges. The rate is ``a``
    minus the type-1 check fraction.
    """
    n_a = int(round(a * n))
    n_b = n - n_a
    n_a2 = int(round(p2 * n_a))
    n_a3 = n_a - n_a2
    e1 = 2 * n_a2 + 3 * n_a3
    n_x = int(round(e1 / dx))
    lo = e1 // n_x
    n_hi = e1 - lo * n_x
    n_y3 = d2 * n_a - 2 * n_b
    if not 0 <= n_y3 <= n_b:
        raise ValueError("type-2 degree incompatible with the degree-1 share")
    var_types = [(n_a2, (2, d2, 0)), (n_a3, (3, d2, 0)), (n_b, (0, 0, 1))]
    check_types = [(n_x - n_hi, (lo, 0, 0)), (n_hi, (lo + 1, 0, 0)),
                   (n_b - n_y3, (0, 2, 1)), (n_y3, (0, 3, 1))]
    return construct_met([v for v in var_types if v[0] > 0],
                         [c for c in check_types if c[0] > 0], rng, name)


def _split(total: int, fractions) -> np.ndarray:
    f = np.asarray(fractions, dtype=float)
    raw = f / f.sum() * total
    k = np.floor(raw).astype(int)
    k[np.argsort(raw - k)[::-1][:total - k.sum()]] += 1
    return k


def _allocate(count: int, fractions: dict) -> np.ndarray:
    degs = sorted(fractions)
    raw = np.array([fractions[d] * count for d in degs])
    k = np.floor(raw).astype(int)
    rest = count - k.sum()
    k[np.argsort(raw - k)[::-1][:rest]] += 1
    return np.repeat(np.array(degs), k)[::-1].copy()


def _remove_parallel(var_sock, chk_sock, rng, max_rounds: int = 200):
    var_sock = var_sock.copy()
    for _ in range(max_rounds):
        key = chk_sock.astype(np.int64) * (var_sock.max() + 1) + var_sock
        order = np.argsort(key, kind="stable")
        dup = order[1:][np.diff(key[order]) == 0]
        if not dup.size:
            return var_sock
        other = rng.integers(0, var_sock.size, size=dup.size)
        var_sock[dup], var_sock[other] = var_sock[other], var_sock[dup].copy()
    raise RuntimeError("could not remove parallel edges")


# ---------------------------------------------------------------------------
# Decoding


@dataclass
class DecodeResult:
    bits: np.ndarray
    success: bool
    iterations: int


_LLR_CLIP = 40.0
_PHI_STEP = 1.0 / 512
_PHI_MIN = 1.0 / 64


def _phi_table():
    x = np.arange(0, _LLR_CLIP + 2, _PHI_STEP)
    x[0] = _PHI_STEP / 2
    return -np.log(np.tanh(x / 2.0))


_PHI_TAB = _phi_table()


@numba.njit(cache=True)
def _phi(x, tab):
    """``-log tanh(x / 2)``, its own inverse; tabulated above ``_PHI_MIN``."""
    if x < _PHI_MIN:
        if x < 1e-12:
            x = 1e-12
        return -math.log(math.tanh(x / 2.0))
    if x >= _LLR_CLIP:
        return 2.0 * math.exp(-x)
    f = x / _PHI_STEP
    i = int(f)
    w = f - i
    return tab[i] * (1.0 - w) + tab[i + 1] * w


@numba.njit(cache=True)
def _bp(llr, check_ptr, edge_var, syn, max_iters, tab, patience):
    """Layered (check-serial) sum-product decoding.

    Stops early once the number of unsatisfied checks has not reached a
    new minimum for ``patience`` iterations.
    """
    n = llr.size
    m = check_ptr.size - 1
    c2v = np.zeros(edge_var.size)
    total = llr.copy()
    bits = np.zeros(n, dtype=np.uint8)
    maxdeg = 0
    for c in range(m):
        maxdeg = max(maxdeg, check_ptr[c + 1] - check_ptr[c])
    buf = np.empty(maxdeg)
    best = m + 1
    best_it = 0
    for it in range(1, max_iters + 1):
        for c in range(m):
            e0 = check_ptr[c]
            e1 = check_ptr[c + 1]
            s = 0.0
            neg = syn[c]
            for e in range(e0, e1):
                x = total[edge_var[e]] - c2v[e]
                if x > _LLR_CLIP:
                    x = _LLR_CLIP
                elif x < -_LLR_CLIP:
                    x = -_LLR_CLIP
                buf[e - e0] = x
                if x < 0:
                    neg ^= 1
                    x = -x
                s += _phi(x, tab)
            for e in range(e0, e1):
                x = buf[e - e0]
                sg = neg
                if x < 0:
                    sg ^= 1
                    ax = -x
                else:
                    ax = x
                d = s - _phi(ax, tab)
                mag = _phi(d if d > 1e-12 else 1e-12, tab)
                new = -mag if sg else mag
                c2v[e] = new
                total[edge_var[e]] = x + new
        for v in range(n):
            bits[v] = 1 if total[v] < 0 else 0
        bad = 0
        for c in range(m):
            s2 = syn[c]
            for e in range(check_ptr[c], check_ptr[c + 1]):
                s2 ^= bits[edge_var[e]]
            bad += s2
        if bad == 0:
            return bits, True, it
        if bad < best:
            best = bad
            best_it = it
        elif it - best_it >= patience:
            return bits, False, it
    return bits, False, max_iters


def ldpc_decode(llrs, code: LdpcCode, syndrome, max_iters: int = 500,
                patience: int = 100) -> DecodeResult:
    """Sum-product decoding towards ``syndrome``.

    Positive LLR favours bit 0. Failure to satisfy the syndrome within
    ``max_iters`` is returned as ``success=False``, never raised.
    """
    llr = np.asarray(llrs, dtype=np.float64)
    syn = np.asarray(syndrome, dtype=np.uint8)
    if llr.size != code.n:
        raise ValueError(f"expected {code.n} LLRs, got {llr.size}")
    if syn.size != code.m:
        raise ValueError(f"expected {code.m} syndrome bits, got {syn.size}")
    bits, ok, it = _bp(llr, code.check_ptr, code.edge_var, syn, max_iters, _PHI_TAB, patience)
    return DecodeResult(bits, bool(ok), int(it))


# ---------------------------------------------------------------------------
# Efficiency


def measure_beta(code_rate: float, measured_snr: float, d: int = 8) -> float:
    """``code_rate / (0.5 log2(1 + snr))``; raises when the result exceeds 1.

    ``d`` is accepted for interface symmetry; the multidimensional map
    leaves the per-dimension capacity unchanged.
    """
    if not measured_snr > 0:
        raise ValueError("SNR must be positive")
    if d not in (1, 2, 4, 8):
        raise ValueError("d must be 1, 2, 4 or 8")
    beta = code_rate / (0.5 * math.log2(1.0 + measured_snr))
    if beta > 1.0:
        raise InvalidEfficiency(f"beta = {beta:.4f} > 1: code rate above capacity")
    return beta


def snr_for_beta(code_rate: float, beta: float) -> float:
    """SNR at which ``code_rate`` runs at efficiency ``beta``."""
    if not 0 < beta <= 1:
        raise ValueError("beta must be in (0, 1]")
    return 2.0 ** (2.0 * code_rate / beta) - 1.0


def available_codes() -> list[str]:
    pkg = resources.files("cvqkdsim") / "data"
    return sorted(p.name[:-4] for p in pkg.iterdir() if p.name.endswith(".txt"))


def load_code(name: str) -> LdpcCode:
    pkg = resources.files("cvqkdsim") / "data" / f"{name}.txt"
    return LdpcCode.from_text(pkg.read_text(), name)
