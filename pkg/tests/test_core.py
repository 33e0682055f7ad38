import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pspin import core
from pspin.errors import CacheIntegrityError, MemoryBudgetError


def brute_energy(c, sigma):
    s = np.asarray(sigma, dtype=np.float64)
    total = 0.0
    for idx in itertools.product(range(c.n), repeat=c.p):
        total += c.tensor[idx] * np.prod(s[list(idx)])
    return total / c.n ** ((c.p - 1) / 2)


def test_seeded_draw_is_reproducible():
    a = core.sample_couplings(5, 3, 42)
    b = core.sample_couplings(5, 3, 42)
    assert np.array_equal(a.g, b.g)
    assert not np.array_equal(a.g, core.sample_couplings(5, 3, 43).g)


def test_n1_energy_is_single_coupling():
    c = core.sample_couplings(1, 3, 9)
    assert core.hamiltonian(c, [1]) == pytest.approx(c.tensor[0, 0, 0], abs=1e-15)
    assert core.hamiltonian(c, [-1]) == pytest.approx(-c.tensor[0, 0, 0], abs=1e-15)


@pytest.mark.parametrize("n,p", [(3, 2), (4, 3), (3, 4)])
def test_hamiltonian_matches_brute_force(n, p):
    c = core.sample_couplings(n, p, 1)
    for sigma in core.all_spins(n):
        assert core.hamiltonian(c, sigma) == pytest.approx(brute_energy(c, sigma), abs=1e-12)


@given(st.integers(1, 7), st.integers(0, 2**20), st.integers(0, 127))
@settings(max_examples=40, deadline=None)
def test_odd_p_flip_symmetry(n, seed, code):
    c = core.sample_couplings(n, 3, seed)
    s = core.spins_from_code(code % (1 << n), n)
    assert core.hamiltonian(c, -s) == pytest.approx(-core.hamiltonian(c, s), abs=1e-12)


@given(st.integers(2, 7), st.integers(0, 2**20), st.integers(0, 127), st.integers(0, 6))
@settings(max_examples=40, deadline=None)
def test_flip_delta_matches_recompute(n, seed, code, k):
    c = core.sample_couplings(n, 3, seed)
    s = core.spins_from_code(code % (1 << n), n)
    k %= n
    f = s.copy()
    f[k] *= -1
    want = core.hamiltonian(c, f) - core.hamiltonian(c, s)
    assert core.hamiltonian_delta(c, s, k) == pytest.approx(want, abs=1e-10)


@pytest.mark.parametrize("n", range(1, 11))
@pytest.mark.parametrize("method", ["gray", "factored"])
def test_enumeration_matches_naive(n, method):
    c = core.sample_couplings(n, 3, 100 + n)
    got = core.enumerate_energies(c, method=method)
    assert np.max(np.abs(got - core.enumerate_energies_naive(c))) < 1e-10


def test_energy_table_indexing():
    c = core.sample_couplings(5, 3, 2)
    table = c.energy_table
    for code in (0, 7, 19, 31):
        s = core.spins_from_code(code, 5)
        assert core.code_from_spins(s) == code
        assert table[code] == pytest.approx(core.hamiltonian(c, s), abs=1e-12)


def test_overlap_examples():
    assert core.overlap([1, 1, -1, -1], [1, -1, 1, -1]) == 0.0
    assert core.overlap([1, -1, 1], [1, -1, 1]) == 1.0
    assert core.magnetization([1, 1, -1], [1, 1, 1]) == pytest.approx(1 / 3)


def test_memory_budget():
    with pytest.raises(MemoryBudgetError):
        core.sample_couplings(200, 4, 0, memory_budget=1 << 20)


def test_spin_validation():
    with pytest.raises(ValueError):
        core.as_spins([1, 0, -1])


def test_rank_one_and_inner():
    tau = np.array([1.0, -1.0, 1.0]) / math.sqrt(3)
    r = core.rank_one(tau, 3)
    assert core.inner(r, r) == pytest.approx(1.0)
    assert core.pairing(r, tau) == pytest.approx(1.0)


def test_symmetrize_is_idempotent_and_symmetric():
    y = core.SymTensor(3, 4, np.random.default_rng(0).standard_normal(64))
    w = core.symmetrize(y)
    for perm in itertools.permutations(range(3)):
        assert np.allclose(w.tensor, np.transpose(w.tensor, perm))
    assert np.allclose(core.symmetrize(w).data, w.data)


def test_cache_roundtrip(tmp_path):
    c = core.sample_couplings(6, 3, 77)
    path = core.save_couplings(c, tmp_path / "c.bin")
    back = core.load_couplings(path)
    assert (back.n, back.p, back.seed) == (6, 3, 77)
    assert np.array_equal(back.g, c.g)


@pytest.mark.parametrize("damage", ["magic", "truncate"])
def test_corrupt_cache_is_rejected(tmp_path, damage):
    path = core.save_couplings(core.sample_couplings(4, 3, 1), tmp_path / "c.bin")
    raw = path.read_bytes()
    raw = b"XXXXX" + raw[5:] if damage == "magic" else raw[:-8]
    path.write_bytes(raw)
    with pytest.raises(CacheIntegrityError):
        core.load_couplings(path)
