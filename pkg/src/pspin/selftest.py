"""Fast invariant suite behind ``pspin test``.

Each check returns normally or raises. Failures are classified so the
report can tell a corrupted cache file or an unconverged quadrature apart
from a plain wrong answer.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CacheIntegrityError, NumericalError

EXIT_FAIL, EXIT_CACHE, EXIT_NUMERIC = 1, 2, 3


@dataclass
class Outcome:
    name: str
    status: str  # "pass", "fail", "numerical", "cache-integrity"
    detail: str = ""


@dataclass
class Report:
    outcomes: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return all(o.status == "pass" for o in self.outcomes)

    @property
    def exit_code(self) -> int:
        bad = {o.status for o in self.outcomes if o.status != "pass"}
        if "cache-integrity" in bad:
            return EXIT_CACHE
        if bad == {"numerical"}:
            return EXIT_NUMERIC
        return EXIT_FAIL if bad else 0

    def lines(self):
        for o in self.outcomes:
            tag = {"pass": "PASS", "fail": "FAIL", "numerical": "FAIL (quadrature/numerical)",
                   "cache-integrity": "FAIL (cache integrity)"}[o.status]
            yield f"{tag} {o.name}" + (f": {o.detail}" if o.detail else "")
        n_bad = sum(o.status != "pass" for o in self.outcomes)
        yield f"{len(self.outcomes) - n_bad}/{len(self.outcomes)} checks passed in {self.seconds:.1f} s"


def _close(a, b, tol, what=""):
    if not abs(a - b) <= tol:
        raise AssertionError(f"{what} {a!r} vs {b!r} (tol {tol:g})")


def _checks(rule, cache_file):
    from . import analytic as an
    from . import core, detection, freeenergy as fe, sampler

    sp3 = an.MixtureSpec(3)

    def quadrature_rule():
        _close(rule.weights.sum(), 1.0, 1e-12, "weight sum")
        _close(rule.expect(rule.nodes**2), 1.0, 1e-10, "second moment")

    def rho_trivial():
        _close(an.rho(1.0, 0.0, sp3, rule), 0.0, 0.0)
        _close(an.rho(0.0, 0.5, sp3, rule), 0.0, 0.0)

    def rho_identity():
        _close(an.rho(1.535, 0.5, sp3, rule), an.rho_sech_form(1.535, 0.5, sp3), 1e-8)

    def criticality_beta0():
        r, phi = an.criticality_curve(0.0, sp3, 256, rule)
        assert np.max(np.abs(phi + r**3)) < 1e-12
        assert an.sup_criticality(1.0, sp3, 256, rule).in_high_temp

    def rs_trivial():
        _close(an.rs_free_energy(1.0, 0.0, sp3, rule).free_energy, 0.25, 1e-12)
        sol = an.rs_free_energy(0.0, 0.7, sp3, rule)
        _close(sol.free_energy, math.log(math.cosh(0.7)), 1e-10)
        _close(sol.q, math.tanh(0.7) ** 2, 1e-9)

    def gamma_lemma():
        _close(an.gamma_surplus(0.3, 1.0, sp3), 0.784, 1e-12)
        _close(an.gamma_surplus(0.4, 0.4, sp3), 0.0, 1e-15)
        assert an.psd_gamma_min(sp3, 0.5, 10_000, 1) >= -1e-12

    def gt_trivial():
        _close(an.gt_bound(an.GTBoundParams(0.0, 1.0, 1.2), sp3, rule), 1.2**2 / 2, 1e-9)

    def core_basics():
        a, b = core.sample_couplings(3, 3, 7), core.sample_couplings(3, 3, 7)
        assert np.array_equal(a.g, b.g)
        c1 = core.sample_couplings(1, 3, 2)
        _close(core.hamiltonian(c1, [-1]), -c1.g[0], 1e-15)
        c = core.sample_couplings(4, 3, 3)
        s = np.array([1, -1, -1, 1])
        _close(core.hamiltonian(c, -s), -core.hamiltonian(c, s), 1e-12)
        for k in range(4):
            f = s.copy()
            f[k] *= -1
            _close(core.hamiltonian_delta(c, s, k), core.hamiltonian(c, f) - core.hamiltonian(c, s), 1e-10)
        _close(core.overlap([1, 1, -1, -1], [1, -1, 1, -1]), 0.0, 0.0)

    def gray_vs_naive():
        for n in (1, 2, 5, 8, 10):
            c = core.sample_couplings(n, 3, 11 + n)
            gray = core.enumerate_energies(c, method="gray")
            assert np.max(np.abs(gray - core.enumerate_energies_naive(c))) < 1e-10
            assert np.max(np.abs(gray - c.energy_table)) < 1e-10

    def free_energy_identities():
        c = core.sample_couplings(8, 3, 5)
        h = detection.draw_prior(8, 9)
        assert fe.free_energy_exact(c, 0.0) == 0.0
        assert fe.interp_free_energy_exact(c, h, 1.1, 0.0) == fe.free_energy_exact(c, 1.1)
        assert fe.interp_free_energy_exact(c, h, 1.1, 1.1) == fe.aux_free_energy_exact(c, h, 1.1)
        _close(fe.coupled_free_energy_exact(c, 0.9, 0.0, 1.0), 2 * fe.free_energy_exact(c, 0.9), 1e-10)
        c1 = core.sample_couplings(1, 3, 4)
        _close(fe.free_energy_exact(c1, 1.3), math.log(math.cosh(1.3 * c1.g[0] / math.sqrt(2))), 1e-12)

    def likelihood_identities():
        inst = detection.generate_instance(7, 3, 1.4, 21)
        c = core.sample_couplings(7, 3, 21)
        _close(detection.log_likelihood_ratio(inst.w, 1.4), -1.4**2 * 7 / 4 + 7 * fe.free_energy_exact(c, 1.4), 1e-8)
        _close(detection.log_likelihood_ratio(inst.t, 1.4),
               -1.4**2 * 7 / 4 + 7 * fe.aux_free_energy_exact(c, inst.u, 1.4), 1e-8)
        _close(detection.posterior_enumerate(inst.t, 1.4).probabilities.sum(), 1.0, 1e-10)
        _close(detection.recovery_statistic(detection.generate_instance(4, 3, 0.0, 2)), 0.375, 1e-12)
        assert detection.tv_mc_null(8, 3, 0.0, 4, 1).value == 0.0

    def mcmc_stationarity():
        c = core.sample_couplings(3, 3, 8)
        g = sampler.gibbs_probabilities(c, 1.0)
        assert np.max(np.abs(g @ sampler.transition_matrix(c, 1.0) - g)) < 1e-10
        c = core.sample_couplings(6, 3, 8)
        _close(sampler.two_replica_exact(c, 0.0).even_moment, 1 / 6, 1e-12)

    def cache_roundtrip():
        if cache_file is not None:
            core.load_couplings(cache_file)
            return
        c = core.sample_couplings(4, 3, 6)
        with tempfile.TemporaryDirectory() as d:
            path = Path(d) / "c.bin"
            core.save_couplings(c, path)
            back = core.load_couplings(path)
            assert np.array_equal(back.g, c.g) and back.seed == 6
            raw = bytearray(path.read_bytes())
            raw[0:5] = b"XXXXX"
            path.write_bytes(bytes(raw))
            try:
                core.load_couplings(path)
            except CacheIntegrityError:
                pass
            else:
                raise AssertionError("corrupted header was accepted")

    return [(f.__name__.replace("_", "-"), f) for f in (
        quadrature_rule, rho_trivial, rho_identity, criticality_beta0, rs_trivial, gamma_lemma,
        gt_trivial, core_basics, gray_vs_naive, free_energy_identities, likelihood_identities,
        mcmc_stationarity, cache_roundtrip)]


def run_selftest(quad_nodes: int | None = None, cache_file=None) -> Report:
    from .analytic import QuadratureRule, default_rule

    t0 = time.perf_counter()
    rule = QuadratureRule(quad_nodes) if quad_nodes else default_rule()
    report = Report()
    for name, check in _checks(rule, cache_file):
        try:
            check()
            report.outcomes.append(Outcome(name, "pass"))
        except CacheIntegrityError as exc:
            report.outcomes.append(Outcome(name, "cache-integrity", str(exc)))
        except NumericalError as exc:
            report.outcomes.append(Outcome(name, "numerical", str(exc)))
        except Exception as exc:  # a failed check is reported, never raised
            report.outcomes.append(Outcome(name, "fail", f"{type(exc).__name__}: {exc}"))
    report.seconds = time.perf_counter() - t0
    return report
