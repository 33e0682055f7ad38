import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pspin import core
from pspin import freeenergy as fe
from pspin.analytic import MixtureSpec, rs_free_energy
from pspin.errors import EmptyConstraintError, EnumerationCapError

SQ2 = math.sqrt(2.0)


def brute_tilted(c, beta, h=None, cw=0.0, field=0.0):
    n = c.n
    terms = []
    for s in core.all_spins(n):
        e = beta / SQ2 * core.hamiltonian(c, s)
        if h is not None:
            m = float(np.dot(s, h)) / n
            e += cw * n * m**c.p + field * n * m
        terms.append(e)
    terms = np.array(terms)
    top = terms.max()
    return (top + math.log(np.mean(np.exp(terms - top)))) / n


@pytest.mark.parametrize("n", [1, 3, 6])
@pytest.mark.parametrize("beta", [0.0, 0.7, 2.0])
def test_free_energy_matches_brute_force(n, beta):
    c = core.sample_couplings(n, 3, 5 + n)
    assert fe.free_energy_exact(c, beta) == pytest.approx(brute_tilted(c, beta), abs=1e-12)


def test_n1_closed_form():
    c = core.sample_couplings(1, 3, 8)
    g = c.g[0]
    assert fe.free_energy_exact(c, 1.3) == pytest.approx(math.log(math.cosh(1.3 * g / SQ2)), abs=1e-13)


@given(st.integers(2, 8), st.integers(0, 2**16), st.floats(0.0, 2.5), st.floats(0.0, 2.5))
@settings(max_examples=30, deadline=None)
def test_interp_endpoints_bitwise(n, seed, beta, x):
    c = core.sample_couplings(n, 3, seed)
    h = core.spins_from_code(seed % (1 << n), n)
    assert fe.interp_free_energy_exact(c, h, beta, 0.0) == fe.free_energy_exact(c, beta)
    assert fe.interp_free_energy_exact(c, h, beta, beta) == fe.aux_free_energy_exact(c, h, beta)
    want = brute_tilted(c, beta, h, cw=0.5 * beta * x)
    assert fe.interp_free_energy_exact(c, h, beta, x) == pytest.approx(want, abs=1e-11)


def test_field_free_energy_brute():
    c = core.sample_couplings(5, 3, 4)
    h = np.array([1, -1, 1, 1, -1])
    assert fe.field_free_energy_exact(c, h, 0.9, 0.4) == pytest.approx(brute_tilted(c, 0.9, h, field=0.4), abs=1e-12)


def test_field_free_energy_no_disorder_is_logcosh():
    c = core.sample_couplings(6, 3, 4)
    h = np.ones(6, dtype=np.int8)
    assert fe.field_free_energy_exact(c, h, 0.0, 0.5) == pytest.approx(math.log(math.cosh(0.5)), abs=1e-13)


def test_field_free_energy_rs_at_high_temperature():
    # E F_N(beta, x) should approach the replica-symmetric value as n grows
    sp = MixtureSpec(3)
    vals = [fe.field_free_energy_exact(core.sample_couplings(12, 3, k), np.ones(12), 0.6, 0.5) for k in range(200)]
    assert np.mean(vals) == pytest.approx(rs_free_energy(0.6, 0.5, sp).free_energy, abs=0.02)


def test_coupled_free_energy_unconstrained_is_twice_f():
    c = core.sample_couplings(7, 3, 3)
    assert fe.coupled_free_energy_exact(c, 1.1, 0.0, 1.0) == pytest.approx(2 * fe.free_energy_exact(c, 1.1), abs=1e-12)


def test_coupled_free_energy_brute():
    c = core.sample_couplings(4, 3, 10)
    spins = core.all_spins(4)
    e = np.array([core.hamiltonian(c, s) for s in spins]) / SQ2
    total = 0.0
    for a, sa in enumerate(spins):
        for b, sb in enumerate(spins):
            if abs(core.overlap(sa, sb) - 0.5) <= 0.25 + 1e-12:
                total += math.exp(e[a] + e[b])
    want = (math.log(total) - 8 * math.log(2)) / 4
    assert fe.coupled_free_energy_exact(c, 1.0, 0.5, 0.25) == pytest.approx(want, abs=1e-12)


def test_coupled_empty_window():
    c = core.sample_couplings(4, 3, 1)
    with pytest.raises(EmptyConstraintError):
        fe.coupled_free_energy_exact(c, 1.0, 0.25, 0.1)


def test_caps():
    c = core.CouplingTensor(3, 16, np.zeros(16**3))
    with pytest.raises(EnumerationCapError):
        fe.coupled_free_energy_exact(c, 1.0, 0.0, 1.0)


@pytest.mark.parametrize("n", [3, 6, 9])
def test_overlap_law_methods_agree(n):
    c = core.sample_couplings(n, 3, 2 * n)
    r1, p1 = fe.overlap_distribution(c, 1.2, method="fwht")
    r2, p2 = fe.overlap_distribution(c, 1.2, method="pairs")
    assert np.array_equal(r1, r2)
    assert np.max(np.abs(p1 - p2)) < 1e-12


def test_overlap_law_infinite_temperature_is_binomial():
    from scipy.stats import binom

    n = 8
    r, prob = fe.overlap_distribution(core.sample_couplings(n, 3, 1), 0.0)
    assert np.allclose(prob, binom.pmf(np.arange(n + 1), n, 0.5), atol=1e-14)
    assert np.dot(prob, r**2) == pytest.approx(1 / n, abs=1e-14)


def test_spec_validation():
    with pytest.raises(ValueError):
        fe.FreeEnergySpec("L", 1.0, h="random")
    with pytest.raises(ValueError):
        fe.FreeEnergySpec("F", 1.0, x=0.3)
    with pytest.raises(ValueError):
        fe.FreeEnergySpec("Q", 1.0)


def test_sweep_is_deterministic_and_thread_independent():
    spec = fe.FreeEnergySpec("AF", 1.0, h="random")
    a = fe.disorder_sweep(spec, 8, 3, 12, 99, threads=1)
    b = fe.disorder_sweep(spec, 8, 3, 12, 99, threads=3)
    assert a.mean == b.mean and a.std_error == b.std_error


def test_sweep_beta_zero_is_zero():
    res = fe.disorder_sweep(fe.FreeEnergySpec("F", 0.0), 6, 3, 5, 1)
    assert res.mean == 0.0 and res.std_error == 0.0


def test_extrapolation_recovers_line():
    ns = np.array([10, 20, 40])
    ex = fe.extrapolate_inverse_n(ns, 0.3 + 2.0 / ns, [1e-3, 1e-3, 1e-3])
    assert ex.intercept == pytest.approx(0.3, abs=1e-12)
    assert ex.slope == pytest.approx(2.0, abs=1e-10)


def test_mean_identity_small():
    res = fe.mean_identity_check(np.linspace(0, 1.0, 6), 8, 3, 32, 5)
    assert res.within(3.0)
    assert np.all(res.integrand >= -3 * res.integrand_se)


def test_variance_bound():
    # Var F_N <= beta^2 E<R^p> / N, checked at one temperature
    n, beta = 10, 1.0
    vals, rp = [], []
    for k in range(200):
        c = core.sample_couplings(n, 3, fe.replica_seed(3, k))
        vals.append(fe.free_energy_exact(c, beta))
        r, prob = fe.overlap_distribution(c, beta / SQ2)
        rp.append(np.dot(prob, r**3))
    assert np.var(vals, ddof=1) <= beta**2 * np.mean(rp) / n
