"""Spiked Gaussian p-tensor detection: instances, likelihood ratio, TV and recovery.

Noise: Y has i.i.d. N(0, 2/n) entries, W is its symmetrization and the spiked
tensor is T = W + beta u^{(x)p} with u uniform on {+-1/sqrt(n)}^n. Writing
Y = g sqrt(2/n) ties an instance to the coupling tensor g drawn from the same
seed, which makes the likelihood ratio an exact free energy:

    log f_T/f_W (W) = -beta^2 n / 4 + n F_N(beta)
    log f_T/f_W (T) = -beta^2 n / 4 + n AF_N(beta)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import binomtest

from .core import (
    CouplingTensor,
    SymTensor,
    field_sums,
    rank_one,
    read_tensor_file,
    sample_couplings,
    symmetrize,
    write_instance_file,
)
from .errors import EnumerationCapError
from .freeenergy import SINGLE_CAP, aux_free_energy_exact, free_energy_exact, summarize
from .seeding import derive_seed, parallel_map, rng

NULL, ALT = 0, 1
DEFAULT_BETAS = (0.8, 1.0, 1.2, 1.535, 1.8, 2.2, 2.5)


def prior_seed_for(seed: int) -> int:
    return derive_seed(seed, 1)


def draw_prior(n: int, prior_seed: int) -> np.ndarray:
    return (1 - 2 * rng(prior_seed).integers(0, 2, n)).astype(np.int8)


@dataclass(frozen=True, eq=False)
class DetectionInstance:
    n: int
    p: int
    beta: float
    u: np.ndarray = field(repr=False)
    w: SymTensor = field(repr=False)
    t: SymTensor = field(repr=False)
    seed: int = -1
    prior_seed: int = -1


def generate_instance(n: int, p: int, beta: float, seed: int, prior_seed: int | None = None) -> DetectionInstance:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    c = sample_couplings(n, p, seed)
    y = SymTensor(p, n, c.g * math.sqrt(2.0 / n))
    w = symmetrize(y)
    ps = prior_seed_for(seed) if prior_seed is None else prior_seed
    u = draw_prior(n, ps)
    t = w + beta * rank_one(u / math.sqrt(n), p) if beta != 0 else w
    return DetectionInstance(n, p, float(beta), u, w, t, seed, ps)


def export_instance(inst: DetectionInstance, path, which: str = "t"):
    data = inst.t.data if which == "t" else inst.w.data
    return write_instance_file(path, inst.p, inst.n, inst.seed, inst.beta, inst.prior_seed, data)


def import_tensor(path) -> tuple[dict, SymTensor]:
    header, data = read_tensor_file(path)
    return header, SymTensor(header["p"], header["n"], data)


def _pairings(x: SymTensor, cap: int) -> np.ndarray:
    """<x, (tau / sqrt n)^{(x)p}> for every tau, indexed by configuration code."""
    if x.n > cap:
        raise EnumerationCapError(f"summing over 2^{x.n} prior points; the cap is n <= {cap}")
    c = CouplingTensor(x.p, x.n, x.data)
    # energy_table carries n^{-(p-1)/2}; one more 1/sqrt(n) gives n^{-p/2}
    return c.energy_table / math.sqrt(x.n)


def log_likelihood_ratio(x: SymTensor, beta: float, cap: int = SINGLE_CAP) -> float:
    """log f_T(x) / f_W(x) = -beta^2 n / 4 + log E_tau exp((beta n / 2) <x, (tau/sqrt n)^{(x)p}>)."""
    n = x.n
    lw = 0.5 * beta * n * _pairings(x, cap)
    return float(-0.25 * beta**2 * n + logsumexp(lw) - n * math.log(2.0))


@dataclass(frozen=True, eq=False)
class PosteriorTable:
    log_weights: np.ndarray = field(repr=False)
    log_normalizer: float

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_normalizer)


def posterior_enumerate(x: SymTensor, beta: float, cap: int = SINGLE_CAP) -> PosteriorTable:
    lw = 0.5 * beta * x.n * _pairings(x, cap)
    return PosteriorTable(lw, float(logsumexp(lw)))


def recovery_statistic(inst: DetectionInstance, cap: int = SINGLE_CAP) -> float:
    """Posterior mean of |<u, tau>| given the spiked tensor."""
    post = posterior_enumerate(inst.t, inst.beta, cap)
    ov = np.abs(field_sums(inst.u)) / inst.n
    return float(np.clip(np.dot(post.probabilities, ov), 0.0, 1.0))


@dataclass
class TVEstimate:
    value: float
    std_error: float
    replicas: int
    samples: np.ndarray = field(repr=False)
    stats: np.ndarray = field(repr=False)


def instance_seed(master_seed: int, side: int, k: int) -> int:
    return derive_seed(master_seed, side, k)


def _tv_run(side, n, p, beta, replicas, master_seed, threads, fixed_prior=False) -> TVEstimate:
    if replicas < 1:
        raise ValueError("replicas must be >= 1")

    def one(k):
        seed = instance_seed(master_seed, side, k)
        c = sample_couplings(n, p, seed)
        if side == NULL:
            f = free_energy_exact(c, beta)
            return f, -math.expm1(n * (f - 0.25 * beta**2))
        h = np.ones(n, np.int8) if fixed_prior else draw_prior(n, prior_seed_for(seed))
        af = aux_free_energy_exact(c, h, beta)
        return af, -math.expm1(n * (0.25 * beta**2 - af))

    out = parallel_map(one, range(replicas), threads)
    stats = np.array([o[0] for o in out])
    vals = np.array([max(o[1], 0.0) for o in out])
    mean, se = summarize(vals)
    return TVEstimate(mean, se, replicas, vals, stats)


def tv_mc_null(n: int, p: int, beta: float, replicas: int, master_seed: int, threads: int = 1) -> TVEstimate:
    """d_TV(W, T) = E[(1 - exp(n (F_N - beta^2/4)))_+] over noise draws."""
    return _tv_run(NULL, n, p, beta, replicas, master_seed, threads)


def tv_mc_alt(n: int, p: int, beta: float, replicas: int, master_seed: int, threads: int = 1,
              fixed_prior: bool = False) -> TVEstimate:
    """d_TV(W, T) = E[(1 - exp(n (beta^2/4 - AF_N)))_+] over spiked draws."""
    return _tv_run(ALT, n, p, beta, replicas, master_seed, threads, fixed_prior)


def tv_integral_form(stats, beta: float, n: int, side: int = NULL) -> float:
    """The x-integral form of d_TV evaluated by quadrature over the empirical law of ``stats``.

    null:  int_0^1 P(F_N < beta^2/4 + log(x)/n) dx
    alt:   int_0^1 P(AF_N > beta^2/4 - log(x)/n) dx
    """
    from scipy.integrate import quad

    s = np.asarray(stats, dtype=np.float64)
    if side == NULL:
        cuts = np.exp(n * (s - 0.25 * beta**2))
        prob = lambda x: np.mean(s < 0.25 * beta**2 + np.log(x) / n)
    else:
        cuts = np.exp(n * (0.25 * beta**2 - s))
        prob = lambda x: np.mean(s > 0.25 * beta**2 - np.log(x) / n)
    knots = np.unique(np.concatenate([[0.0], cuts[(cuts > 0) & (cuts < 1)], [1.0]]))
    total = 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        if b > a:
            total += quad(prob, a, b, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    return total


@dataclass
class ErrorRates:
    type1: float
    type2: float
    type1_ci: tuple
    type2_ci: tuple
    replicas: int

    @property
    def total(self) -> float:
        return self.type1 + self.type2


def hypothesis_test(n: int, p: int, beta: float, threshold: float = 0.0, replicas: int = 256,
                    master_seed: int = 0, threads: int = 1) -> ErrorRates:
    """Likelihood-ratio test: declare 'spiked' when log f_T/f_W exceeds ``threshold``."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")

    def one(args):
        side, k = args
        inst = generate_instance(n, p, beta, instance_seed(master_seed, side, k))
        llr = log_likelihood_ratio(inst.w if side == NULL else inst.t, beta)
        return llr > threshold if side == NULL else llr <= threshold

    errs = parallel_map(one, [(s, k) for s in (NULL, ALT) for k in range(replicas)], threads)
    e1 = int(sum(errs[:replicas]))
    e2 = int(sum(errs[replicas:]))
    ci = lambda k: tuple(binomtest(k, replicas).proportion_ci(0.95, method="wilson"))
    return ErrorRates(e1 / replicas, e2 / replicas, ci(e1), ci(e2), replicas)
