"""Disorder, spins, the pure p-spin Hamiltonian and dense symmetric tensors.

Spin configurations are plain ``int8`` arrays with entries in {-1, +1}. A
point ``u`` of the scaled hypercube {+-1/sqrt(n)}^n is stored as its spin
vector; the 1/sqrt(n) factor is applied where it is used.

Configuration codes: bit ``i`` of an integer code is set exactly when spin
``i`` equals -1, so code 0 is the all-plus configuration and the Hamming
distance between two configurations is the popcount of the XOR of codes.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from itertools import permutations
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import CacheIntegrityError, MemoryBudgetError
from .seeding import derive_seed

DEFAULT_MEMORY_BUDGET = 2 * 1024**3
BLOCK_SIZE = 1 << 16
MAGIC = b"PSPN1"
MAGIC_INSTANCE = b"PSPX1"
_HEADER = struct.Struct("<qqq")
_INSTANCE_EXTRA = struct.Struct("<dq")


def as_spins(x, n: int | None = None) -> np.ndarray:
    s = np.asarray(x)
    if s.ndim != 1:
        raise ValueError("a spin configuration is a 1-d array")
    if n is not None and s.shape[0] != n:
        raise ValueError(f"size mismatch: expected {n} spins, got {s.shape[0]}")
    if not np.all((s == 1) | (s == -1)):
        raise ValueError("spin entries must be exactly +1 or -1")
    return s.astype(np.int8, copy=False)


def spins_from_code(code: int, n: int) -> np.ndarray:
    bits = (int(code) >> np.arange(n)) & 1
    return (1 - 2 * bits).astype(np.int8)


def code_from_spins(sigma) -> int:
    s = as_spins(sigma)
    return int(np.sum((s < 0).astype(np.int64) << np.arange(s.shape[0], dtype=np.int64)))


def all_spins(n: int) -> np.ndarray:
    """All 2^n configurations as rows, row index equal to the code."""
    codes = np.arange(1 << n, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(n)) & 1
    return (1 - 2 * bits).astype(np.int8)


def popcounts(n: int) -> np.ndarray:
    pc = np.zeros(1, dtype=np.uint8)
    for _ in range(n):
        pc = np.concatenate([pc, pc + 1])
    return pc


def field_sums(h) -> np.ndarray:
    """``sum_i h_i sigma_i`` for every configuration code, without division by n."""
    h = as_spins(h)
    out = np.array([int(h.sum())], dtype=np.int64)
    for i, hi in enumerate(h):
        out = np.concatenate([out, out - 2 * int(hi)])
    return out


def _check_budget(count: int, budget: int, what: str) -> None:
    need = int(count) * 8
    if need > budget:
        raise MemoryBudgetError(
            f"{what} needs {need} bytes, above the memory budget of {budget} bytes", need
        )


@dataclass(frozen=True)
class Multilinear:
    """The Hamiltonian rewritten as a multilinear polynomial in the spins.

    Because sigma_i^2 = 1, each index tuple reduces to the monomial over the
    indices that occur an odd number of times. ``coef`` already carries the
    n^{-(p-1)/2} normalisation.
    """

    const: float
    coef: np.ndarray
    mono_idx: np.ndarray
    site_ptr: np.ndarray
    site_mono: np.ndarray

    @property
    def energy_all_plus(self) -> float:
        return float(self.const + self.coef.sum())


def _reduce(g: np.ndarray, n: int, p: int, scale: float) -> Multilinear:
    if n > 62:
        raise ValueError("the multilinear reduction supports n <= 62")
    bits = np.left_shift(np.uint64(1), np.arange(n, dtype=np.uint64))
    mask = np.zeros((1,) * p, dtype=np.uint64)
    for axis in range(p):
        shape = [1] * p
        shape[axis] = n
        mask = mask ^ bits.reshape(shape)
    masks, inverse = np.unique(mask.ravel(), return_inverse=True)
    coef = np.bincount(inverse.ravel(), weights=g, minlength=masks.shape[0]) * scale
    const = 0.0
    if masks[0] == 0:
        const = float(coef[0])
        masks, coef = masks[1:], coef[1:]
    bm = ((masks[:, None] >> np.arange(n, dtype=np.uint64)) & np.uint64(1)).astype(bool)
    padded = np.sort(np.where(bm, np.arange(n), n), axis=1)[:, :p]
    mono_idx = np.where(padded == n, -1, padded).astype(np.int32)
    site, mono = np.nonzero(bm.T)
    site_ptr = np.searchsorted(site, np.arange(n + 1)).astype(np.int64)
    return Multilinear(
        const=const,
        coef=np.ascontiguousarray(coef, dtype=np.float64),
        mono_idx=np.ascontiguousarray(mono_idx),
        site_ptr=site_ptr,
        site_mono=mono.astype(np.int32),
    )


@dataclass(frozen=True, eq=False)
class CouplingTensor:
    """I.i.d. standard Gaussian couplings g, stored flat in row-major order."""

    p: int
    n: int
    g: np.ndarray = field(repr=False)
    seed: int = -1

    def __post_init__(self):
        if self.p < 2 or self.n < 1:
            raise ValueError("need p >= 2 and n >= 1")
        g = np.ascontiguousarray(self.g, dtype=np.float64).ravel()
        if g.shape[0] != self.n**self.p:
            raise ValueError(f"expected {self.n ** self.p} couplings, got {g.shape[0]}")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    @property
    def tensor(self) -> np.ndarray:
        return self.g.reshape((self.n,) * self.p)

    @property
    def scale(self) -> float:
        return self.n ** (-(self.p - 1) / 2)

    @cached_property
    def multilinear(self) -> Multilinear:
        return _reduce(self.g, self.n, self.p, self.scale)

    @cached_property
    def energy_table(self) -> np.ndarray:
        """All 2^n energies by configuration code, computed once per tensor."""
        e = enumerate_energies(self)
        e.setflags(write=False)
        return e

    def scaled(self, a: float) -> "CouplingTensor":
        return CouplingTensor(self.p, self.n, a * self.g, self.seed)


def sample_couplings(n: int, p: int, seed: int, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> CouplingTensor:
    """Draw n^p standard Gaussians keyed on ``seed``.

    The flat array is cut into fixed blocks of ``BLOCK_SIZE`` entries and block
    ``b`` comes from its own stream keyed on ``(seed, b)``, so the result does
    not depend on the order in which blocks are filled.
    """
    if n < 1 or p < 2:
        raise ValueError("need n >= 1 and p >= 2")
    total = n**p
    _check_budget(total, memory_budget, f"a coupling tensor with n={n}, p={p}")
    g = np.empty(total, dtype=np.float64)
    for b, start in enumerate(range(0, total, BLOCK_SIZE)):
        stop = min(start + BLOCK_SIZE, total)
        gen = np.random.Generator(np.random.Philox(derive_seed(seed, b)))
        g[start:stop] = gen.standard_normal(stop - start)
    return CouplingTensor(p, n, g, seed)


def _contract_all(t: np.ndarray, vectors) -> float:
    out = t
    for v in reversed(vectors):
        out = out @ v
    return float(out)


def hamiltonian(c: CouplingTensor, sigma) -> float:
    """H_N(sigma) = n^{-(p-1)/2} sum over all n^p tuples, repeated indices included."""
    s = as_spins(sigma, c.n).astype(np.float64)
    return c.scale * _contract_all(c.tensor, [s] * c.p)


def hamiltonian_batch(c: CouplingTensor, spins: np.ndarray) -> np.ndarray:
    """Direct n^p evaluation for each row of ``spins``; the brute-force oracle."""
    s = np.asarray(spins, dtype=np.float64)
    out = np.tensordot(s, c.tensor, axes=([1], [c.p - 1]))
    for _ in range(c.p - 1):
        out = np.einsum("b...i,bi->b...", out, s)
    return c.scale * out


def hamiltonian_delta(c: CouplingTensor, sigma, k: int) -> float:
    """Energy change H(flip_k sigma) - H(sigma).

    Only tuples in which ``k`` occurs an odd number of times change sign.
    They are summed by inclusion over the set of positions holding ``k``,
    with the spin vector zeroed at ``k`` on the remaining positions so that
    those positions range over indices other than ``k``.
    """
    s = as_spins(sigma, c.n)
    if not 0 <= k < c.n:
        raise IndexError(f"site {k} out of range for n={c.n}")
    rest = s.astype(np.float64)
    rest[k] = 0.0
    t = c.tensor
    acc = 0.0
    for mask in range(1, 1 << c.p):
        if bin(mask).count("1") % 2 == 0:
            continue
        index = tuple(k if (mask >> a) & 1 else slice(None) for a in range(c.p))
        sub = t[index]
        free = c.p - bin(mask).count("1")
        acc += _contract_all(np.asarray(sub), [rest] * free) if free else float(sub)
    return -2.0 * float(s[k]) * c.scale * acc


def enumerate_energies(c: CouplingTensor, method: str = "factored",
                       memory_budget: int = DEFAULT_MEMORY_BUDGET) -> np.ndarray:
    """H_N for all 2^n configurations, indexed by configuration code.

    ``"gray"`` walks the reflected Gray code from the all-plus state, one spin
    flip and one incremental energy update per step. ``"factored"`` splits the
    spins into two halves A and B and writes every monomial as a product of
    an A-part and a B-part, so the whole table is one matrix product
    Phi_B C Phi_A^T over subset features; it is an order of magnitude faster.
    """
    _check_budget(1 << c.n, memory_budget, f"enumerating 2^{c.n} energies")
    m = c.multilinear
    if method == "gray":
        return _kernels.gray_energies(
            c.n, m.energy_all_plus, m.site_ptr, m.site_mono, m.mono_idx, m.coef
        )
    if method != "factored":
        raise ValueError(f"unknown enumeration method {method!r}")
    na = c.n // 2
    valid = m.mono_idx >= 0
    idx = np.where(valid, m.mono_idx, 0).astype(np.int64)
    in_a = valid & (idx < na)
    in_b = valid & (idx >= na)
    mask_a = np.where(in_a, np.left_shift(1, idx), 0).sum(axis=1)
    mask_b = np.where(in_b, np.left_shift(1, idx - na), 0).sum(axis=1)
    ua, ia = np.unique(np.concatenate([[0], mask_a]), return_inverse=True)
    ub, ib = np.unique(np.concatenate([[0], mask_b]), return_inverse=True)
    coef = np.zeros((ua.size, ub.size))
    np.add.at(coef, (ia, ib), np.concatenate([[m.const], m.coef]))
    fa = _subset_features(ua, na)
    fb = _subset_features(ub, c.n - na)
    return np.ascontiguousarray(((fb @ coef.T) @ fa.T).ravel())


def _subset_features(masks: np.ndarray, k: int) -> np.ndarray:
    # entry [code, j] is the product of the spins of `code` over subset masks[j]
    pc = popcounts(k).astype(np.int64)
    codes = np.arange(1 << k, dtype=np.int64)
    return (1 - 2 * (pc[codes[:, None] & masks[None, :]] & 1)).astype(np.float64)


def enumerate_energies_naive(c: CouplingTensor, chunk: int = 4096) -> np.ndarray:
    """Full recomputation for every configuration (oracle, small n only)."""
    out = np.empty(1 << c.n)
    for start in range(0, 1 << c.n, chunk):
        codes = np.arange(start, min(start + chunk, 1 << c.n), dtype=np.int64)
        bits = (codes[:, None] >> np.arange(c.n)) & 1
        out[start : start + codes.shape[0]] = hamiltonian_batch(c, 1 - 2 * bits)
    return out


def overlap(s1, s2) -> float:
    a = as_spins(s1)
    b = as_spins(s2, a.shape[0])
    return int(np.dot(a.astype(np.int64), b)) / a.shape[0]


def magnetization(sigma, h) -> float:
    """m_N(sigma) = (1/N) sum_i h_i sigma_i."""
    return overlap(sigma, h)


@dataclass(frozen=True, eq=False)
class SymTensor:
    """Dense order-p tensor over R^n, flat row-major storage."""

    p: int
    n: int
    data: np.ndarray = field(repr=False)
    symmetric: bool = False

    def __post_init__(self):
        d = np.ascontiguousarray(self.data, dtype=np.float64).ravel()
        if d.shape[0] != self.n**self.p:
            raise ValueError(f"expected {self.n ** self.p} entries, got {d.shape[0]}")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def tensor(self) -> np.ndarray:
        return self.data.reshape((self.n,) * self.p)

    def __add__(self, other: "SymTensor") -> "SymTensor":
        _same_shape(self, other)
        return SymTensor(self.p, self.n, self.data + other.data, self.symmetric and other.symmetric)

    def __mul__(self, a: float) -> "SymTensor":
        return SymTensor(self.p, self.n, a * self.data, self.symmetric)

    __rmul__ = __mul__


def _same_shape(a: SymTensor, b: SymTensor) -> None:
    if a.p != b.p or a.n != b.n:
        raise ValueError(f"shape mismatch: (p={a.p}, n={a.n}) vs (p={b.p}, n={b.n})")


def rank_one(tau, p: int) -> SymTensor:
    t = np.asarray(tau, dtype=np.float64)
    if t.ndim != 1:
        raise ValueError("tau must be a vector")
    out = t
    for _ in range(p - 1):
        out = np.multiply.outer(out, t)
    return SymTensor(p, t.shape[0], out, symmetric=True)


def inner(a: SymTensor, b: SymTensor) -> float:
    _same_shape(a, b)
    return float(np.dot(a.data, b.data))


def symmetrize(y: SymTensor) -> SymTensor:
    t = y.tensor
    acc = np.zeros_like(t)
    for perm in permutations(range(y.p)):
        acc += np.transpose(t, perm)
    return SymTensor(y.p, y.n, acc / math.factorial(y.p), symmetric=True)


def pairing(x: SymTensor, tau) -> float:
    """<x, tau^{(x)p}> without materialising the rank-one tensor."""
    t = np.asarray(tau, dtype=np.float64)
    if t.shape != (x.n,):
        raise ValueError("vector length does not match the tensor")
    return _contract_all(x.tensor, [t] * x.p)


def save_couplings(c: CouplingTensor, path) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(c.p, c.n, c.seed))
        fh.write(c.g.astype("<f8").tobytes())
    return path


def read_tensor_file(path):
    """Read either cache layout; returns ``(header, data)``.

    ``header`` holds ``p``, ``n``, ``seed`` and, for instance files, also
    ``beta`` and ``prior_seed``.
    """
    raw = Path(path).read_bytes()
    magic = raw[:5]
    if magic not in (MAGIC, MAGIC_INSTANCE):
        raise CacheIntegrityError(f"{path}: bad magic {magic!r}, expected {MAGIC!r} or {MAGIC_INSTANCE!r}")
    offset = 5
    if len(raw) < offset + _HEADER.size:
        raise CacheIntegrityError(f"{path}: truncated header")
    p, n, seed = _HEADER.unpack_from(raw, offset)
    offset += _HEADER.size
    header = {"p": p, "n": n, "seed": seed}
    if magic == MAGIC_INSTANCE:
        if len(raw) < offset + _INSTANCE_EXTRA.size:
            raise CacheIntegrityError(f"{path}: truncated instance header")
        beta, prior_seed = _INSTANCE_EXTRA.unpack_from(raw, offset)
        offset += _INSTANCE_EXTRA.size
        header.update(beta=beta, prior_seed=prior_seed)
    if p < 2 or n < 1 or n**p * 8 != len(raw) - offset:
        raise CacheIntegrityError(f"{path}: payload size does not match header (p={p}, n={n})")
    data = np.frombuffer(raw, dtype="<f8", offset=offset).astype(np.float64)
    return header, data


def load_couplings(path) -> CouplingTensor:
    header, data = read_tensor_file(path)
    return CouplingTensor(header["p"], header["n"], data, header["seed"])


def write_instance_file(path, p: int, n: int, seed: int, beta: float, prior_seed: int, data) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC_INSTANCE)
        fh.write(_HEADER.pack(p, n, seed))
        fh.write(_INSTANCE_EXTRA.pack(beta, prior_seed))
        fh.write(np.asarray(data, dtype="<f8").tobytes())
    return path
