"""Compiled inner loops: Gray-code energies, pair histograms, Metropolis."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _site_sum(s, k, site_ptr, site_mono, mono_idx, coef):
    # sum of coef * monomial over the monomials containing site k
    acc = 0.0
    width = mono_idx.shape[1]
    for j in range(site_ptr[k], site_ptr[k + 1]):
        m = site_mono[j]
        prod = coef[m]
        for a in range(width):
            i = mono_idx[m, a]
            if i < 0:
                break
            prod *= s[i]
        acc += prod
    return acc


@njit(cache=True, nogil=True)
def flip_delta(s, k, site_ptr, site_mono, mono_idx, coef):
    return -2.0 * _site_sum(s, k, site_ptr, site_mono, mono_idx, coef)


@njit(cache=True, nogil=True)
def gray_energies(n, e0, site_ptr, site_mono, mono_idx, coef):
    total = 1 << n
    out = np.empty(total)
    s = np.ones(n, dtype=np.float64)
    e = e0
    code = 0
    out[0] = e
    for t in range(1, total):
        k = 0
        while not (t >> k) & 1:
            k += 1
        e += -2.0 * _site_sum(s, k, site_ptr, site_mono, mono_idx, coef)
        s[k] = -s[k]
        code ^= 1 << k
        out[code] = e
    return out


@njit(cache=True, nogil=True)
def pair_histogram(w, pc, n):
    """hist[d] = sum over code pairs at Hamming distance d of w[a] * w[b]."""
    total = w.shape[0]
    hist = np.zeros(n + 1)
    for a in range(total):
        wa = w[a]
        if wa == 0.0:
            continue
        row = np.zeros(n + 1)
        for b in range(total):
            row[pc[a ^ b]] += w[b]
        for d in range(n + 1):
            hist[d] += wa * row[d]
    return hist


@njit(cache=True, nogil=True)
def metropolis_run(s, e, beta, sites, uniforms, thin, site_ptr, site_mono, mono_idx, coef):
    """Run ``sites.shape[0]`` sweeps in place on float spins ``s``.

    Returns the final energy, the accepted-move count, and a snapshot of the
    spins taken after every ``thin``-th sweep.
    """
    sweeps, n = sites.shape
    snaps = np.empty((sweeps // thin, n), dtype=np.int8)
    accepted = 0
    for t in range(sweeps):
        for j in range(n):
            k = sites[t, j]
            d = -2.0 * _site_sum(s, k, site_ptr, site_mono, mono_idx, coef)
            # accept with probability min(1, exp(beta * d))
            if beta * d >= 0.0 or uniforms[t, j] < np.exp(beta * d):
                s[k] = -s[k]
                e += d
                accepted += 1
        if (t + 1) % thin == 0:
            for i in range(n):
                snaps[(t + 1) // thin - 1, i] = np.int8(s[i])
    return e, accepted, snaps
