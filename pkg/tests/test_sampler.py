import numpy as np
import pytest

from pspin import core, sampler as sm
from pspin.errors import EnergyDriftError
from pspin.seeding import rng


def empirical_frequencies(c, beta, cfg, seed):
    snaps, _, _ = sm.run_chain(c, beta, cfg, rng(seed))
    codes = np.array([core.code_from_spins(s) for s in snaps])
    return np.bincount(codes, minlength=1 << c.n) / codes.size, codes.size


@pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
def test_transition_matrix_is_stochastic_and_stationary(beta):
    c = core.sample_couplings(3, 3, 11)
    t = sm.transition_matrix(c, beta)
    g = sm.gibbs_probabilities(c, beta)
    assert np.allclose(t.sum(axis=1), 1.0, atol=1e-12)
    assert np.max(np.abs(g @ t - g)) < 1e-10


def test_frequencies_match_gibbs():
    c = core.sample_couplings(3, 3, 11)
    cfg = sm.SamplerConfig(sweeps=40_000, burnin=1000, thin=10, seed=0)
    freq, count = empirical_frequencies(c, 1.0, cfg, 5)
    g = sm.gibbs_probabilities(c, 1.0)
    sigma = np.sqrt(g * (1 - g) / count)
    assert np.all(np.abs(freq - g) <= 5 * sigma)


def test_sweep_energy_bookkeeping():
    c = core.sample_couplings(6, 3, 2)
    state = sm.initial_state(c, rng(1))
    for _ in range(50):
        state = sm.metropolis_sweep(state, c, 1.5)
    assert state.energy == pytest.approx(core.hamiltonian(c, state.sigma), abs=1e-10)


def test_drift_detection():
    c = core.sample_couplings(5, 3, 2)
    state = sm.initial_state(c, rng(1))
    state.energy += 1e-3
    with pytest.raises(EnergyDriftError):
        sm.revalidate(state, c)


def test_config_validation():
    with pytest.raises(ValueError):
        sm.SamplerConfig(sweeps=100, burnin=100)
    with pytest.raises(ValueError):
        sm.SamplerConfig(beta_ladder=(1.0, 0.5))


def test_chain_is_reproducible():
    c = core.sample_couplings(8, 3, 4)
    cfg = sm.SamplerConfig(sweeps=500, burnin=100, thin=5)
    a = sm.overlap_trace(c, 1.0, cfg, (1, 2, 3))
    b = sm.overlap_trace(c, 1.0, cfg, (1, 2, 3))
    assert np.array_equal(a, b)
    assert a.size == (500 - 100) // 5


def test_beta_zero_moments_are_combinatorial():
    n = 10
    cfg = sm.SamplerConfig(sweeps=2000, burnin=100, thin=2)
    est = sm.two_replica_moments(n, 3, 0.0, 1, cfg, 16, 3)
    assert abs(est.even_moment - 1 / n) <= 3 * est.even_moment_se
    exact = sm.two_replica_exact(core.sample_couplings(n, 3, 0), 0.0, k=2)
    assert exact.even_moment == pytest.approx((3 * n - 2) / n**3, abs=1e-14)


def test_mcmc_agrees_with_exact_overlap():
    n, beta = 8, 1.0
    cfg = sm.SamplerConfig(sweeps=20_000, burnin=2000, thin=5)
    est = sm.two_replica_moments(n, 3, beta, 1, cfg, 12, 6)
    exact = np.mean([sm.two_replica_exact(core.sample_couplings(n, 3, sm.replica_seed(6, r)), beta).even_moment
                     for r in range(12)])
    assert abs(est.even_moment - exact) < 4 * est.even_moment_se + 0.01


def test_ladder_targets_ladder_point():
    c = core.sample_couplings(6, 3, 1)
    cfg = sm.SamplerConfig(sweeps=400, burnin=100, thin=5, beta_ladder=(0.5, 1.0, 1.5))
    ov = sm.overlap_trace(c, 1.5, cfg, (0,))
    assert ov.size > 0 and np.all(np.abs(ov) <= 1)
    with pytest.raises(ValueError):
        sm.overlap_trace(c, 1.2, cfg, (0,))


def test_exact_tail_beta_zero():
    from scipy.stats import binom

    n = 10
    c = core.sample_couplings(n, 3, 1)
    d = np.arange(n + 1)
    want = binom.pmf(d, n, 0.5)[np.abs(1 - 2 * d / n) >= 0.4 - 1e-12].sum()
    assert sm.exact_tail(c, 0.0, 0.4) == pytest.approx(want, abs=1e-14)
