"""Two-replica Metropolis sampling of the Gibbs measure G(sigma) ~ exp(beta H_N(sigma)).

Note the convention: the Gibbs measure here has exponent beta H_N, while the
free energies weight by (beta / sqrt 2) H_N.

Randomness: the chain for disorder replica r and chain index j draws from the
stream keyed (master_seed, r, cfg.seed, j); proposal sites and acceptance
uniforms are generated in numpy and consumed by the compiled kernel, so a run
is reproducible bit for bit whatever the thread count.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import CouplingTensor, as_spins, hamiltonian, sample_couplings
from .errors import EnergyDriftError, EnumerationCapError
from .freeenergy import SINGLE_CAP, overlap_distribution, replica_seed, summarize
from .seeding import parallel_map, rng

REVALIDATE_EVERY = 10_000
DRIFT_TOL = 1e-8
EXCHANGE_EVERY = 10
_CHUNK = 1000


class EquilibrationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    sweeps: int = 20_000
    burnin: int = 5_000
    thin: int = 5
    seed: int = 0
    beta_ladder: tuple | None = None

    def __post_init__(self):
        if self.sweeps < 1 or self.burnin < 0 or self.burnin >= self.sweeps:
            raise ValueError("need 0 <= burnin < sweeps")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.beta_ladder is not None:
            ladder = tuple(float(b) for b in self.beta_ladder)
            if len(ladder) < 2 or any(b <= a for a, b in zip(ladder, ladder[1:])):
                raise ValueError("beta_ladder must be strictly increasing with at least two entries")
            object.__setattr__(self, "beta_ladder", ladder)


@dataclass
class ChainState:
    sigma: np.ndarray
    energy: float
    rng: np.random.Generator = field(repr=False)


def initial_state(c: CouplingTensor, gen: np.random.Generator, sigma=None) -> ChainState:
    s = (1 - 2 * gen.integers(0, 2, c.n)).astype(np.int8) if sigma is None else as_spins(sigma, c.n).copy()
    return ChainState(s, hamiltonian(c, s), gen)


def _run(state: ChainState, c: CouplingTensor, beta: float, sweeps: int, thin: int):
    """Advance ``state`` in place by ``sweeps`` sweeps; returns (snapshots, accepted)."""
    m = c.multilinear
    s = state.sigma.astype(np.float64)
    sites = state.rng.integers(0, c.n, size=(sweeps, c.n))
    u = state.rng.random((sweeps, c.n))
    e, acc, snaps = _kernels.metropolis_run(
        s, state.energy, beta, sites, u, thin, m.site_ptr, m.site_mono, m.mono_idx, m.coef
    )
    state.sigma = s.astype(np.int8)
    state.energy = float(e)
    return snaps, int(acc)


def metropolis_sweep(state: ChainState, c: CouplingTensor, beta: float) -> ChainState:
    """n single-site flip proposals at uniformly random sites, each accepted with min(1, exp(beta dH))."""
    new = ChainState(state.sigma.copy(), state.energy, state.rng)
    _run(new, c, beta, 1, 1)
    return new


def revalidate(state: ChainState, c: CouplingTensor, tol: float = DRIFT_TOL) -> None:
    exact = hamiltonian(c, state.sigma)
    if abs(exact - state.energy) > tol:
        raise EnergyDriftError(f"cached energy {state.energy!r} drifted from {exact!r}")
    state.energy = exact


def transition_matrix(c: CouplingTensor, beta: float) -> np.ndarray:
    """Exact one-sweep transition matrix over configuration codes (tiny n only)."""
    if c.n > 8:
        raise EnumerationCapError("the explicit transition matrix is for n <= 8")
    size = 1 << c.n
    e = c.energy_table
    single = np.zeros((size, size))
    for a in range(size):
        for k in range(c.n):
            b = a ^ (1 << k)
            acc = min(1.0, math.exp(beta * (e[b] - e[a])))
            single[a, b] += acc / c.n
            single[a, a] += (1.0 - acc) / c.n
    return np.linalg.matrix_power(single, c.n)


def gibbs_probabilities(c: CouplingTensor, beta: float) -> np.ndarray:
    lw = beta * c.energy_table
    w = np.exp(lw - lw.max())
    return w / w.sum()


def run_chain(c: CouplingTensor, beta: float, cfg: SamplerConfig, gen: np.random.Generator,
              sigma0=None):
    """Single chain; returns (post-burnin thinned snapshots, final state, acceptance rate)."""
    state = initial_state(c, gen, sigma0)
    snaps, acc = _advance(state, c, beta, cfg.sweeps, cfg.thin)
    keep = snaps[cfg.burnin // cfg.thin:]
    return keep, state, acc / (cfg.sweeps * c.n)


def _advance(state, c, beta, sweeps, thin):
    # chunks are whole multiples of thin so snapshot times stay aligned
    chunk = max(thin, _CHUNK - _CHUNK % thin)
    out, acc, done = [], 0, 0
    while done < sweeps:
        step = min(chunk, sweeps - done)
        snaps, a = _run(state, c, beta, step, thin)
        out.append(snaps)
        acc += a
        prev, done = done, done + step
        if done // REVALIDATE_EVERY > prev // REVALIDATE_EVERY:
            revalidate(state, c)
    return np.concatenate(out) if out else np.zeros((0, c.n), np.int8), acc


def _ladder_run(c, cfg: SamplerConfig, target: float, gen_chain):
    """Replica exchange over ``cfg.beta_ladder``; returns snapshots at the target beta."""
    ladder = list(cfg.beta_ladder)
    ti = int(np.argmin(np.abs(np.asarray(ladder) - target)))
    if abs(ladder[ti] - target) > 1e-12:
        raise ValueError(f"target beta {target} is not on the ladder {ladder}")
    states = [initial_state(c, gen_chain) for _ in ladder]
    swap_gen = np.random.Generator(np.random.Philox(int(gen_chain.integers(0, 2**63))))
    thin = math.gcd(cfg.thin, EXCHANGE_EVERY)
    snaps, acc, done = [], 0, 0
    while done < cfg.sweeps:
        step = min(EXCHANGE_EVERY, cfg.sweeps - done)
        for i, st in enumerate(states):
            sn, a = _run(st, c, ladder[i], step, thin)
            if i == ti:
                snaps.append(sn)
                acc += a
        prev, done = done, done + step
        if done // REVALIDATE_EVERY > prev // REVALIDATE_EVERY:
            for st in states:
                revalidate(st, c)
        for i in range(len(ladder) - 1):
            d = (ladder[i + 1] - ladder[i]) * (states[i].energy - states[i + 1].energy)
            if d >= 0 or swap_gen.random() < math.exp(d):
                states[i].sigma, states[i + 1].sigma = states[i + 1].sigma, states[i].sigma
                states[i].energy, states[i + 1].energy = states[i + 1].energy, states[i].energy
    all_snaps = np.concatenate(snaps)
    times = (np.arange(all_snaps.shape[0]) + 1) * thin
    keep = all_snaps[(times % cfg.thin == 0) & (times > cfg.burnin)]
    return keep, acc / (cfg.sweeps * c.n)


def overlap_trace(c: CouplingTensor, beta: float, cfg: SamplerConfig, keys) -> np.ndarray:
    """Overlaps R_12 of two independent chains at matching post-burnin sample times."""
    traces = []
    for j in (0, 1):
        gen = rng(*keys, j)
        if cfg.beta_ladder is None:
            snaps, _, _ = run_chain(c, beta, cfg, gen)
        else:
            snaps, _ = _ladder_run(c, cfg, beta, gen)
        traces.append(snaps.astype(np.int64))
    a, b = traces
    return np.einsum("ti,ti->t", a, b) / c.n


def _batch_se(x: np.ndarray, batches: int = 10) -> float:
    if x.size < 2 * batches:
        return float(np.std(x, ddof=1) / math.sqrt(max(x.size, 1))) if x.size > 1 else 0.0
    means = np.array([b.mean() for b in np.array_split(x, batches)])
    return float(np.std(means, ddof=1) / math.sqrt(batches))


def _half_run_disagrees(x: np.ndarray) -> bool:
    h = x.size // 2
    if h < 20:
        return False
    a, b = x[:h], x[h:]
    se = math.hypot(_batch_se(a), _batch_se(b))
    return abs(a.mean() - b.mean()) > 3 * se and se > 0


@dataclass
class MomentEstimate:
    even_moment: float
    even_moment_se: float
    p_moment: float
    p_moment_se: float
    k: int
    replicas: int
    flagged: int = 0
    per_replica: np.ndarray = field(default=None, repr=False)


def _disorder_keys(master_seed, r, cfg):
    return (master_seed, r, cfg.seed)


def _check_n(n):
    if n < 1:
        raise ValueError("n must be >= 1")


def two_replica_moments(n: int, p: int, beta: float, k: int, cfg: SamplerConfig,
                        disorder_replicas: int, master_seed: int, threads: int = 1) -> MomentEstimate:
    """E<R^{2k}> and E<R^p> from two independent Metropolis chains per disorder draw."""
    _check_n(n)
    if k < 1 or disorder_replicas < 1:
        raise ValueError("need k >= 1 and disorder_replicas >= 1")

    def one(r):
        c = sample_couplings(n, p, replica_seed(master_seed, r))
        ov = overlap_trace(c, beta, cfg, _disorder_keys(master_seed, r, cfg))
        flag = _half_run_disagrees(ov**2)
        return float(np.mean(ov ** (2 * k))), float(np.mean(ov**p)), flag

    out = parallel_map(one, range(disorder_replicas), threads)
    even, ep = summarize(o[0] for o in out)
    pm, pse = summarize(o[1] for o in out)
    flagged = sum(o[2] for o in out)
    if flagged:
        warnings.warn(
            f"{flagged} of {disorder_replicas} disorder samples failed the half-run equilibration check",
            EquilibrationWarning,
            stacklevel=2,
        )
    per = np.array([[o[0], o[1]] for o in out])
    return MomentEstimate(even, ep, pm, pse, k, disorder_replicas, flagged, per)


@dataclass
class TailEstimate:
    value: float
    std_error: float
    replicas: int
    flagged: int = 0


def tail_probability(n: int, p: int, beta: float, eps: float, cfg: SamplerConfig,
                     disorder_replicas: int, master_seed: int, threads: int = 1) -> TailEstimate:
    """E<1(|R_12| >= eps)> from the same two-chain scheme."""
    _check_n(n)
    if eps < 0:
        raise ValueError("eps must be >= 0")

    def one(r):
        c = sample_couplings(n, p, replica_seed(master_seed, r))
        ov = overlap_trace(c, beta, cfg, _disorder_keys(master_seed, r, cfg))
        ind = (np.abs(ov) >= eps - 1e-12).astype(np.float64)
        return float(ind.mean()), _half_run_disagrees(ind)

    out = parallel_map(one, range(disorder_replicas), threads)
    mean, se = summarize(o[0] for o in out)
    flagged = sum(o[1] for o in out)
    if flagged:
        warnings.warn(
            f"{flagged} of {disorder_replicas} disorder samples failed the half-run equilibration check",
            EquilibrationWarning,
            stacklevel=2,
        )
    return TailEstimate(mean, se, disorder_replicas, flagged)


@dataclass(frozen=True)
class ExactMoments:
    even_moment: float
    p_moment: float
    k: int


def two_replica_exact(c: CouplingTensor, beta: float, k: int = 1, cap: int = SINGLE_CAP) -> ExactMoments:
    """Exact <R^{2k}> and <R^p> under the Gibbs measure exp(beta H) for one coupling draw."""
    if c.n > cap:
        raise EnumerationCapError(f"exact two-replica averages need n <= {cap}, got {c.n}")
    r, prob = overlap_distribution(c, beta, cap=cap)
    return ExactMoments(float(np.dot(prob, r ** (2 * k))), float(np.dot(prob, r**c.p)), k)


def exact_tail(c: CouplingTensor, beta: float, eps: float, cap: int = SINGLE_CAP) -> float:
    r, prob = overlap_distribution(c, beta, cap=cap)
    return float(prob[np.abs(r) >= eps - 1e-12].sum())
