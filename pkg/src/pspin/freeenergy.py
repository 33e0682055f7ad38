"""Exact finite-N free energies by enumeration, and disorder averages over them.

Every free energy here weights a configuration by exp((beta/sqrt 2) H_N)
under the uniform prior on {-1, +1}^n. The energy table of a coupling tensor
is enumerated once and reused by all the functionals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .core import CouplingTensor, as_spins, code_from_spins, popcounts, sample_couplings
from .errors import EmptyConstraintError, EnumerationCapError
from .seeding import derive_seed, parallel_map, rng

SINGLE_CAP = 22
PAIR_CAP = 14
_SQRT2 = math.sqrt(2.0)
KINDS = ("F", "AF", "L", "CF")


def _check_cap(n: int, cap: int, what: str) -> None:
    if n > cap:
        raise EnumerationCapError(f"{what} enumerates 2^{n} states; the cap is n <= {cap}")


def _log_mean_exp(terms: np.ndarray, n: int) -> float:
    # shift by the maximum so large beta * n stays finite
    top = float(terms.max())
    total = float(np.exp(terms - top).sum())
    return (top + math.log(total) - n * math.log(2.0)) / n


def _tilted_free_energy(c: CouplingTensor, beta: float, h=None, cw: float = 0.0, field: float = 0.0,
                        cap: int = SINGLE_CAP) -> float:
    """(1/n) log 2^-n sum exp((beta/sqrt 2) H + cw * n * m^p + field * n * m), m = (1/n) sum h_i sigma_i."""
    _check_cap(c.n, cap, "an exact free energy")
    terms = (beta / _SQRT2) * c.energy_table
    if h is not None and (cw != 0.0 or field != 0.0):
        # m takes n + 1 values, one per Hamming distance d from h
        m = 1.0 - 2.0 * np.arange(c.n + 1) / c.n
        table = cw * c.n * m**c.p + field * c.n * m
        terms = terms + table[distances_to(h, c.n)]
    return _log_mean_exp(terms, c.n)


def distances_to(h, n: int) -> np.ndarray:
    """Hamming distance from h to every configuration code."""
    hc = code_from_spins(as_spins(h, n))
    return _popcounts(n)[np.arange(1 << n) ^ hc]


@lru_cache(maxsize=4)
def _popcounts(n: int) -> np.ndarray:
    pc = popcounts(n)
    pc.setflags(write=False)
    return pc


def free_energy_exact(c: CouplingTensor, beta: float, cap: int = SINGLE_CAP) -> float:
    """F_N(beta) = (1/N) log sum_sigma 2^-N exp((beta/sqrt 2) H_N(sigma))."""
    return _tilted_free_energy(c, beta, cap=cap)


def interp_free_energy_exact(c: CouplingTensor, h, beta: float, x: float, cap: int = SINGLE_CAP) -> float:
    """L_N(x): adds (beta x / 2) N m^p to the exponent, so that L_N(0) = F_N and L_N(beta) = AF_N."""
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    return _tilted_free_energy(c, beta, h, cw=0.5 * beta * x, cap=cap)


def aux_free_energy_exact(c: CouplingTensor, h, beta: float, cap: int = SINGLE_CAP) -> float:
    """AF_N(beta): adds the Curie-Weiss term (beta^2 / 2) N m^p."""
    return interp_free_energy_exact(c, h, beta, beta, cap)


def field_free_energy_exact(c: CouplingTensor, h, beta: float, x: float, cap: int = SINGLE_CAP) -> float:
    """F_N(beta, x) with external field term x N m."""
    return _tilted_free_energy(c, beta, h, field=x, cap=cap)


def _allowed_distances(n: int, v: float, eps: float) -> np.ndarray:
    overlaps = 1.0 - 2.0 * np.arange(n + 1) / n
    ok = (overlaps >= v - eps - 1e-12) & (overlaps <= v + eps + 1e-12)
    if not ok.any():
        raise EmptyConstraintError(f"no overlap on the n={n} grid lies in [{v - eps}, {v + eps}]")
    return ok


def pair_weights_histogram(c: CouplingTensor, log_weights: np.ndarray):
    """Direct O(4^n) sums of w(a) w(b) over pairs, grouped by Hamming distance.

    Weights are shifted by their maximum; returns ``(hist, shift)`` with the
    true pair sum at distance d equal to ``hist[d] * exp(2 * shift)``.
    """
    shift = float(np.max(log_weights))
    w = np.exp(log_weights - shift)
    return _kernels.pair_histogram(w, _popcounts(c.n), c.n), shift


def coupled_free_energy_exact(c: CouplingTensor, beta: float, v: float, eps: float,
                              cap: int = PAIR_CAP) -> float:
    """CF_{N,v,eps}: two replicas constrained to overlap in [v - eps, v + eps], normalised by 2^-2N."""
    _check_cap(c.n, cap, "the coupled free energy")
    ok = _allowed_distances(c.n, v, eps)
    hist, shift = pair_weights_histogram(c, (beta / _SQRT2) * c.energy_table)
    total = float(np.sum(hist[ok]))
    return (math.log(total) + 2 * shift - 2 * c.n * math.log(2.0)) / c.n


def _fwht(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    size, h = out.shape[0], 1
    while h < size:
        blocks = out.reshape(-1, 2, h)
        lo = blocks[:, 0].copy()
        blocks[:, 0] += blocks[:, 1]
        np.subtract(lo, blocks[:, 1], out=blocks[:, 1])
        h *= 2
    return out


def overlap_distribution(c: CouplingTensor, beta: float, method: str = "fwht", cap: int = SINGLE_CAP):
    """Law of R_12 for two independent replicas under the Gibbs measure exp(beta H).

    Returns ``(R, prob)`` with ``R[d] = 1 - 2 d / n``. The pair sum is the XOR
    autocorrelation of the Gibbs weights, computed with two Walsh-Hadamard
    transforms (``method="fwht"``) or the direct pair loop (``"pairs"``).
    """
    _check_cap(c.n, cap if method == "fwht" else PAIR_CAP, "the two-replica overlap law")
    lw = beta * c.energy_table
    w = np.exp(lw - lw.max())
    w /= w.sum()
    if method == "fwht":
        t = _fwht(w)
        auto = _fwht(t * t) / w.shape[0]
        hist = np.bincount(_popcounts(c.n), weights=auto, minlength=c.n + 1)
        hist = np.clip(hist, 0.0, None)
    elif method == "pairs":
        hist = _kernels.pair_histogram(w, _popcounts(c.n), c.n)
    else:
        raise ValueError(f"unknown method {method!r}")
    r = 1.0 - 2.0 * np.arange(c.n + 1) / c.n
    return r, hist / hist.sum()


@dataclass(frozen=True)
class DisorderSample:
    seed: int
    value: float
    aux: float | None = None


@dataclass(frozen=True)
class FreeEnergySpec:
    """Which functional to evaluate. ``h`` is a spin vector or ``"random"`` (drawn per replica)."""

    kind: str
    beta: float
    x: float | None = None
    v: float | None = None
    eps: float | None = None
    h: object = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        need = {"F": set(), "AF": {"h"}, "L": {"h", "x"}, "CF": {"v", "eps"}}[self.kind]
        for name in ("x", "v", "eps", "h"):
            present = getattr(self, name) is not None
            if present != (name in need):
                state = "requires" if name in need else "does not take"
                raise ValueError(f"kind {self.kind} {state} field {name!r}")
        if isinstance(self.h, str) and self.h != "random":
            raise ValueError("h must be a spin vector or 'random'")

    def prior(self, n: int, seed: int):
        if isinstance(self.h, str):
            return (1 - 2 * rng(seed, 1).integers(0, 2, n)).astype(np.int8)
        return as_spins(self.h, n)

    def evaluate(self, c: CouplingTensor) -> float:
        if self.kind == "F":
            return free_energy_exact(c, self.beta)
        if self.kind == "CF":
            return coupled_free_energy_exact(c, self.beta, self.v, self.eps)
        h = self.prior(c.n, c.seed)
        if self.kind == "AF":
            return aux_free_energy_exact(c, h, self.beta)
        return interp_free_energy_exact(c, h, self.beta, self.x)


@dataclass
class SweepResult:
    samples: list = field(repr=False)
    mean: float
    std_error: float
    replicas: int


def summarize(values) -> tuple[float, float]:
    """Mean and standard error; fsum over the given order is exact up to one rounding."""
    vals = [float(v) for v in values]
    r = len(vals)
    mean = math.fsum(vals) / r
    if r < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in vals) / (r - 1)
    return mean, math.sqrt(var / r)


def replica_seed(master_seed: int, k: int) -> int:
    return derive_seed(master_seed, k)


def disorder_sweep(spec, n: int, p: int, replicas: int, master_seed: int,
                   threads: int = 1):
    """Evaluate ``spec`` on ``replicas`` independent coupling draws.

    Replica k uses couplings seeded by (master_seed, k); samples come back in
    replica order, so the aggregate does not depend on scheduling. ``spec``
    may also be a list of specs, evaluated on the same draws (one energy
    enumeration per draw); a list of results is returned then.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    specs = [spec] if isinstance(spec, FreeEnergySpec) else list(spec)

    def one(k):
        seed = replica_seed(master_seed, k)
        c = sample_couplings(n, p, seed)
        return [DisorderSample(seed, s.evaluate(c)) for s in specs]

    rows = parallel_map(one, range(replicas), threads)
    results = []
    for j in range(len(specs)):
        samples = [row[j] for row in rows]
        mean, se = summarize(s.value for s in samples)
        results.append(SweepResult(samples, mean, se, replicas))
    return results[0] if isinstance(spec, FreeEnergySpec) else results


@dataclass(frozen=True)
class Extrapolation:
    intercept: float
    intercept_se: float
    slope: float


def extrapolate_inverse_n(ns, means, ses) -> Extrapolation:
    """Weighted least-squares fit of mean = a + b / n; returns a with its standard error."""
    x = 1.0 / np.asarray(ns, dtype=np.float64)
    y = np.asarray(means, dtype=np.float64)
    w = 1.0 / np.asarray(ses, dtype=np.float64) ** 2
    design = np.vstack([np.ones_like(x), x]).T
    cov = np.linalg.inv(design.T @ (w[:, None] * design))
    a, b = cov @ design.T @ (w * y)
    return Extrapolation(float(a), float(np.sqrt(cov[0, 0])), float(b))


@dataclass
class MeanIdentityResult:
    betas: np.ndarray
    lhs: np.ndarray
    lhs_se: np.ndarray
    integrand: np.ndarray
    integrand_se: np.ndarray
    residual: np.ndarray
    residual_se: np.ndarray
    trapezoid_bias: np.ndarray

    @property
    def max_abs_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))

    def within(self, k: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.residual) <= k * self.residual_se + self.trapezoid_bias + 1e-15))


def _cumtrapz(y, x):
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * np.diff(x) * (y[1:] + y[:-1]))
    return out


def mean_identity_check(grid, n: int, p: int, replicas: int, master_seed: int,
                        threads: int = 1) -> MeanIdentityResult:
    """Residual of E F_N(beta) - [beta^2/4 - 1/2 int_0^beta l E<R^p>_l dl] along ``grid``.

    <.>_l is the two-replica Gibbs average at the same weight exp((l/sqrt 2) H)
    as the free energy. Both sides come from the same replicas, so the
    residual is averaged per replica and its standard error is paired.
    """
    betas = np.asarray(grid, dtype=np.float64)
    if betas.ndim != 1 or betas.size < 1 or betas[0] != 0.0 or np.any(np.diff(betas) <= 0):
        raise ValueError("grid must be strictly increasing and start at 0")

    def one(k):
        c = sample_couplings(n, p, replica_seed(master_seed, k))
        f = np.array([free_energy_exact(c, b) for b in betas])
        rp = np.empty_like(betas)
        for i, b in enumerate(betas):
            r, prob = overlap_distribution(c, b / _SQRT2)
            rp[i] = np.dot(prob, r**p)
        return f, rp

    out = parallel_map(one, range(replicas), threads)
    f = np.array([o[0] for o in out])
    rp = np.array([o[1] for o in out])
    res = f - betas**2 / 4 + 0.5 * np.array([_cumtrapz(betas * row, betas) for row in rp])
    stats = lambda a: np.array([summarize(col) for col in a.T])
    lhs, integ, resid = stats(f), stats(rp), stats(res)
    # trapezoid error on [a, b] for an L-Lipschitz integrand is at most L (b - a)^2 / 4
    y = betas * integ[:, 0]
    h = np.diff(betas)
    slope = np.abs(np.diff(y)) / h if h.size else np.zeros(0)
    lip = np.maximum(slope, np.concatenate([slope[1:], slope[-1:]])) if h.size else slope
    bias = np.concatenate([[0.0], np.cumsum(0.5 * lip * h**2 / 4)])
    return MeanIdentityResult(betas, lhs[:, 0], lhs[:, 1], integ[:, 0], integ[:, 1],
                              resid[:, 0], resid[:, 1], bias)
