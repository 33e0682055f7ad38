"""Closed-form functions of the pure p-spin mixture xi(s) = s^p / 2.

Covers the high-temperature criterion and the critical inverse temperature
beta_p, the replica-symmetric free energy with an external field, the
variational limits of the auxiliary and interpolating free energies, and the
one-step replica-symmetry-breaking bound on the coupled free energy.

Conventions: the Hamiltonian enters every free energy as (beta / sqrt 2) H,
so at inverse temperature beta the effective covariance is beta^2 xi(R).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import optimize
from scipy.integrate import cumulative_simpson
from scipy.special import logsumexp

from .errors import BracketError, ConvergenceError, QuadratureError
from .seeding import rng

DEFAULT_NODES = 1024
HALF_WIDTH = 16.0
# mass of a Gaussian tilted by `shift` must stay this far inside the rule
_TILT_MARGIN = 9.0
QUAD_TOL = 1e-8
GRID_SIZE = 4096
BRACKET = (1e-3, 4.0)
HIGH_TEMP_TOL = 1e-12


@dataclass(frozen=True)
class MixtureSpec:
    p: int

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 2:
            raise ValueError(f"p must be an integer >= 2, got {self.p}")

    def xi(self, s):
        return 0.5 * np.power(s, self.p)

    def dxi(self, s):
        return 0.5 * self.p * np.power(s, self.p - 1)

    def ddxi(self, s):
        return 0.5 * self.p * (self.p - 1) * np.power(s, self.p - 2)

    def theta(self, s):
        return 0.5 * (self.p - 1) * np.power(s, self.p)

    def gamma(self, v, x):
        p = self.p
        return x**p - p * x * v ** (p - 1) + (p - 1) * v**p


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Standard normal expectations by composite Gauss-Legendre on [-L, L].

    Panels of 8 Legendre nodes carry the Gaussian density in their weights.
    Unlike high-order Gauss-Hermite this stays accurate for integrands with
    poles near the real axis (tanh at large argument) and for tilted
    densities, and it refines by simply doubling the panel count.
    """

    count: int = DEFAULT_NODES
    half_width: float = HALF_WIDTH

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("a quadrature rule needs at least one node")

    @cached_property
    def _nodes_weights(self):
        per = min(8, self.count)
        panels = max(1, self.count // per)
        t, w = leggauss(per)
        edges = np.linspace(-self.half_width, self.half_width, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        x = (mid[:, None] + half[:, None] * t).ravel()
        wx = (half[:, None] * w).ravel() * np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi)
        x.setflags(write=False)
        wx.setflags(write=False)
        return x, wx

    @property
    def nodes(self) -> np.ndarray:
        return self._nodes_weights[0]

    @property
    def weights(self) -> np.ndarray:
        return self._nodes_weights[1]

    @cached_property
    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    def refined(self) -> "QuadratureRule":
        return QuadratureRule(2 * self.count, self.half_width)

    def expect(self, values) -> np.ndarray:
        """Contract the last axis of ``values`` (sampled at ``nodes``) with the weights."""
        return np.asarray(values) @ self.weights

    def check_tilt(self, shift) -> None:
        s = float(np.max(np.abs(shift)))
        if s > self.half_width - _TILT_MARGIN:
            raise QuadratureError(
                f"tilt {s:.3g} too large for a rule on [-{self.half_width}, {self.half_width}]"
            )


def default_rule() -> QuadratureRule:
    return QuadratureRule(DEFAULT_NODES)


def _check_close(coarse, fine, what: str, tol: float = QUAD_TOL) -> None:
    gap = float(np.max(np.abs(np.asarray(fine) - np.asarray(coarse))))
    if not np.isfinite(gap) or gap > tol:
        raise QuadratureError(
            f"{what}: refined rule moved the value by {gap:.3g} (> {tol:g})",
            coarse=coarse,
            refined=fine,
        )


def _check_beta(beta) -> None:
    if not np.isfinite(beta) or beta < 0:
        raise ValueError(f"beta must be finite and >= 0, got {beta}")


def _rho_raw(beta, s, spec: MixtureSpec, rule: QuadratureRule) -> np.ndarray:
    # E tanh^2(a g) cosh(a g) e^{-a^2/2} is E tanh^2(a (g + a)) after the
    # change of measure g -> g + a
    a = beta * np.sqrt(spec.dxi(np.asarray(s, dtype=np.float64)))
    rule.check_tilt(a)
    z = rule.nodes
    return rule.expect(np.tanh(a[..., None] * (z + a[..., None])) ** 2)


def _rho_checked(beta, s, spec, rule) -> np.ndarray:
    coarse = _rho_raw(beta, s, spec, rule)
    _check_close(coarse, _rho_raw(beta, s, spec, rule.refined()), "rho")
    return coarse


def rho(beta: float, s: float, spec: MixtureSpec, rule: QuadratureRule | None = None) -> float:
    """rho_beta(s) = E tanh^2(beta g sqrt(xi'(s))) cosh(beta g sqrt(xi'(s))) exp(-beta^2 xi'(s)/2)."""
    _check_beta(beta)
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s}")
    rule = rule or default_rule()
    return float(_rho_checked(beta, np.array(s), spec, rule))


def rho_sech_form(beta: float, s: float, spec: MixtureSpec) -> float:
    """The same quantity as 1 - exp(-a^2/2) E sech(a g), by adaptive quadrature."""
    from scipy.integrate import quad

    a = beta * np.sqrt(spec.dxi(s))
    if a == 0.0:
        return 0.0
    def f(z):
        t = abs(a * z)
        return np.exp(-0.5 * z * z - t) * 2.0 / (1.0 + np.exp(-2.0 * t))

    val, _ = quad(f, -np.inf, np.inf, epsabs=1e-14, epsrel=1e-13, limit=200)
    return 1.0 - np.exp(-0.5 * a * a) * val / np.sqrt(2 * np.pi)


def criticality_curve(beta: float, spec: MixtureSpec, grid_size: int = GRID_SIZE,
                      rule: QuadratureRule | None = None):
    """Phi(r) = int_0^r xi''(s) (rho_beta(s) - s) ds on r = k / grid_size.

    Returns ``(r, phi)``. The polynomial part is integrated exactly,
    Simpson handles xi'' rho only.
    """
    _check_beta(beta)
    if grid_size < 64:
        raise ValueError("grid_size must be at least 64")
    rule = rule or default_rule()
    r = np.linspace(0.0, 1.0, grid_size + 1)
    vals = spec.ddxi(r) * _rho_checked(beta, r, spec, rule)
    phi = cumulative_simpson(vals, x=r, initial=0.0) - spec.theta(r)
    return r, phi


@dataclass(frozen=True)
class CriticalityReport:
    beta: float
    sup_integral: float
    r_argmax: float
    in_high_temp: bool


def sup_criticality(beta: float, spec: MixtureSpec, grid_size: int = GRID_SIZE,
                    rule: QuadratureRule | None = None) -> CriticalityReport:
    """S(beta): the largest value of Phi over the grid points r > 0, refined locally.

    The point r = 0 is left out: Phi(0) = 0 always, so including it would pin
    S at 0 for every beta in the high-temperature region.
    """
    rule = rule or default_rule()
    r, phi = criticality_curve(beta, spec, grid_size, rule)
    j = 1 + int(np.argmax(phi[1:]))
    best_r, best = float(r[j]), float(phi[j])
    if 1 < j < grid_size and phi[j] >= phi[j - 1] and phi[j] >= phi[j + 1]:
        t, w = leggauss(16)
        rj, pj = r[j], phi[j]

        def neg_phi(x):
            half = 0.5 * (x - rj)
            s = rj + half * (t + 1.0)
            inc = half * np.dot(w, spec.ddxi(s) * _rho_raw(beta, s, spec, rule))
            return -(pj + inc - (spec.theta(x) - spec.theta(rj)))

        x, fval, _ = optimize.golden(neg_phi, brack=(r[j - 1], rj, r[j + 1]), tol=1e-10, full_output=True)
        if -fval > best and r[j - 1] <= x <= r[j + 1]:
            best_r, best = float(x), float(-fval)
    return CriticalityReport(float(beta), best, best_r, best <= HIGH_TEMP_TOL)


def beta_crit(spec: MixtureSpec, tol: float = 1e-4, grid_size: int = GRID_SIZE,
              rule: QuadratureRule | None = None, bracket=BRACKET) -> float:
    """Critical inverse temperature beta_p by bisection on S(beta).

    Sound because S is nondecreasing in beta (rho_beta increases with beta).
    """
    if tol < 1e-6:
        raise ValueError("tol must be >= 1e-6")
    rule = rule or default_rule()
    S = lambda b: sup_criticality(b, spec, grid_size, rule).sup_integral
    lo, hi = bracket
    s_lo, s_hi = S(lo), S(hi)
    if np.sign(s_lo) == np.sign(s_hi) or s_lo > 0 or s_hi <= 0:
        raise BracketError(f"S has no sign change on [{lo}, {hi}]: S(lo)={s_lo:.3g}, S(hi)={s_hi:.3g}")
    return float(optimize.bisect(S, lo, hi, xtol=tol))


@dataclass(frozen=True)
class RSSolution:
    q: float
    x: float
    free_energy: float
    iterations: int = 0


def _logcosh(y):
    y = np.abs(y)
    return y + np.log1p(np.exp(-2.0 * y)) - np.log(2.0)


def _rs_map(q, beta, x, spec, rule):
    sd = beta * np.sqrt(spec.dxi(q))
    return rule.expect(np.tanh(x + sd * rule.nodes) ** 2)


def _rs_value(q, beta, x, spec, rule):
    sd = beta * np.sqrt(spec.dxi(q))
    e = rule.expect(_logcosh(x + sd * rule.nodes))
    return float(e + 0.5 * beta**2 * (spec.xi(1.0) - spec.xi(q) - (1.0 - q) * spec.dxi(q)))


def rs_free_energy(beta: float, x: float, spec: MixtureSpec, rule: QuadratureRule | None = None,
                   tol: float = 1e-10, damping: float = 0.5, max_iter: int = 20000) -> RSSolution:
    """Replica-symmetric free energy with external field x.

    F_RS = E log cosh(x + beta z sqrt(xi'(q))) + beta^2/2 (xi(1) - xi(q) - (1-q) xi'(q)),
    with q the fixed point reached by damped iteration downward from
    max(tanh^2 x, 0.99), i.e. the largest one below that start.
    """
    _check_beta(beta)
    if not np.isfinite(x):
        raise ValueError("x must be finite")
    rule = rule or default_rule()
    q = max(np.tanh(x) ** 2, 0.99)
    for it in range(1, max_iter + 1):
        new = (1.0 - damping) * q + damping * _rs_map(q, beta, x, spec, rule)
        if abs(new - q) < tol:
            q = float(new)
            break
        q = float(new)
    else:
        raise ConvergenceError(f"RS fixed point not reached in {max_iter} iterations", last_iterate=q)
    if q < 1e-12 and abs(x) == 0.0:
        q = 0.0
    return RSSolution(q, float(x), _rs_value(q, beta, x, spec, rule), it)


@dataclass(frozen=True)
class VariationalResult:
    value: float
    m: float
    rs_ansatz: bool = True


def _scan_max(f, step: float = 1e-3) -> VariationalResult:
    m = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    vals = np.array([f(mi) for mi in m])
    top = vals.max()
    # ties toward the larger m
    j = int(np.flatnonzero(vals >= top - 1e-12)[-1])
    best_m, best = float(m[j]), float(vals[j])
    if 0 < j < m.size - 1 and vals[j] >= vals[j - 1] and vals[j] >= vals[j + 1]:
        x, fx, _ = optimize.golden(lambda t: -f(t), brack=(m[j - 1], m[j], m[j + 1]), tol=1e-8, full_output=True)
        if -fx > best and m[j - 1] <= x <= m[j + 1]:
            best_m, best = float(x), float(-fx)
    return VariationalResult(best, best_m)


def l_limit(x: float, beta: float, spec: MixtureSpec, rule: QuadratureRule | None = None,
            step: float = 1e-3) -> VariationalResult:
    """L(x) = max_m F(beta, beta x p m^{p-1}/2) - beta x (p-1) m^p / 2, with F by the RS ansatz."""
    _check_beta(beta)
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    rule = rule or default_rule()
    bx = beta * x

    def f(m):
        return rs_free_energy(beta, bx * spec.dxi(m), spec, rule).free_energy - bx * spec.theta(m)

    return _scan_max(f, step)


def af_limit(beta: float, spec: MixtureSpec, rule: QuadratureRule | None = None,
             step: float = 1e-3) -> VariationalResult:
    """AF(beta) = L(beta)."""
    return l_limit(beta, beta, spec, rule, step)


@dataclass(frozen=True)
class GTBoundParams:
    v: float
    m1: float
    beta: float

    def __post_init__(self):
        if not 0.0 <= self.v <= 1.0:
            raise ValueError(f"v must lie in [0, 1], got {self.v}")
        if not 0.0 < self.m1 <= 1.0:
            raise ValueError(f"m1 must lie in (0, 1], got {self.m1}")
        _check_beta(self.beta)


def _gt_raw(params: GTBoundParams, spec: MixtureSpec, rule: QuadratureRule) -> float:
    b, v, m1 = params.beta, params.v, params.m1
    s1 = np.sqrt(spec.dxi(v))
    s2 = np.sqrt(max(spec.dxi(1.0) - spec.dxi(v), 0.0))
    rule.check_tilt([2 * m1 * b * s1 + b * s2, b * s2])
    z = rule.nodes
    a = s1 * z
    # inner: log E_2 cosh(beta (a + z2)) for every outer node a
    inner = logsumexp(_logcosh(b * (a[:, None] + s2 * z[None, :])) + rule.log_weights, axis=1)
    outer = logsumexp(2 * m1 * inner + rule.log_weights) / m1
    th = spec.theta
    return float(outer - b**2 * (2 * m1 * (th(v) - th(0.0)) + th(1.0) - th(v)))


def gt_bound(params: GTBoundParams, spec: MixtureSpec, rule: QuadratureRule | None = None) -> float:
    """One-step RSB Guerra-Talagrand bound for the coupled free energy at overlap v (m2 -> 1).

    (1/m1) log E_1 [E_2 cosh beta(z1 + z2)]^{2 m1} - beta^2 (2 m1 (theta(v) - theta(0)) + theta(1) - theta(v)),
    z1 ~ N(0, xi'(v)), z2 ~ N(0, xi'(1) - xi'(v)).
    """
    rule = rule or QuadratureRule(256)
    coarse = _gt_raw(params, spec, rule)
    _check_close(coarse, _gt_raw(params, spec, rule.refined()), "gt_bound")
    return coarse


def gt_bound_closed_inner(params: GTBoundParams, spec: MixtureSpec, rule: QuadratureRule | None = None) -> float:
    """Same bound using E_2 cosh(beta(a + z2)) = cosh(beta a) exp(beta^2 var(z2)/2)."""
    rule = rule or QuadratureRule(256)
    b, v, m1 = params.beta, params.v, params.m1
    var2 = spec.dxi(1.0) - spec.dxi(v)
    inner = _logcosh(b * np.sqrt(spec.dxi(v)) * rule.nodes) + 0.5 * b * b * var2
    outer = logsumexp(2 * m1 * inner + rule.log_weights) / m1
    th = spec.theta
    return float(outer - b**2 * (2 * m1 * (th(v) - th(0.0)) + th(1.0) - th(v)))


def gt_bound_min(v: float, beta: float, spec: MixtureSpec, m1_grid=None,
                 rule: QuadratureRule | None = None):
    """Smallest bound over a grid of m1; returns ``(value, m1)``."""
    grid = np.linspace(0.05, 1.0, 20) if m1_grid is None else np.asarray(m1_grid)
    vals = [gt_bound(GTBoundParams(v, float(m), beta), spec, rule) for m in grid]
    j = int(np.argmin(vals))
    return float(vals[j]), float(grid[j])


def gamma_surplus(v: float, x, spec: MixtureSpec):
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"v must lie in [0, 1], got {v}")
    xa = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(xa) > 1.0):
        raise ValueError("x must lie in [-1, 1]")
    out = spec.gamma(v, xa)
    return float(out) if out.ndim == 0 else out


def psd_gamma_min(spec: MixtureSpec, v: float, n_samples: int, seed: int) -> float:
    """Smallest Gamma(v,x) + Gamma(v,y) + 2 Gamma(v,z) over random PSD [[x, z], [z, y]]."""
    if spec.p % 2 == 0:
        raise ValueError(f"the PSD surplus lemma is stated for odd p only, got p={spec.p}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    gen = rng(seed)
    x = gen.uniform(0.0, 1.0, n_samples)
    y = gen.uniform(0.0, 1.0, n_samples)
    c = gen.uniform(-1.0, 1.0, n_samples)
    z = c * np.sqrt(x * y)
    total = gamma_surplus(v, x, spec) + gamma_surplus(v, y, spec) + 2 * gamma_surplus(v, z, spec)
    return float(np.min(total))
