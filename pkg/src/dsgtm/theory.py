"""Contraction constants, the 4x4 composite system and admissible (alpha, beta).

Notation follows the error vector ``V = (opt_gap, consensus, state_diff,
tracking)``. ``c`` and ``tau`` are the contraction factors of the pull and
push steps, ``eta`` lower-bounds ``phi_{k+1}^T pi_k``, ``chi``/``varphi``
are ``1/sqrt(min pi)`` and ``1/sqrt(min phi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import mpmath
import numpy as np

from .graph import GraphStats

CONTRACTION_GUARD = 1e-12


class TheoryError(ValueError):
    pass


@dataclass(frozen=True)
class StepConstants:
    k: int
    chi_k: float
    chi_k1: float
    varphi_k: float
    varphi_k1: float
    gamma_k: float
    psi_k: float
    tau_k: float
    c_k: float
    nu_k: float
    zeta_k: float
    eta_k: float  # phi_{k+1}^T pi_k


@dataclass(frozen=True)
class GlobalConstants:
    c: float
    tau: float
    eta: float
    psi: float
    chi: float
    varphi: float
    nu: float
    varsigma_sq: float
    L: float
    mu: float
    n: int
    sigma: float
    # first-order sensitivity of selected constants to the phi approximation
    uncertainty: dict = field(default_factory=dict)
    varsigma_sq_printed: float = math.nan


@dataclass(frozen=True)
class CompositeSystem:
    M: np.ndarray
    b: np.ndarray
    alpha_bar: float
    beta_bar: float
    m: dict  # m1..m11 (m6 absent: the bounding system reuses m5)
    bconst: dict  # b1..b6
    dps: int | None = None

    def steady_state(self) -> np.ndarray:
        """``(I - M)^{-1} b``; meaningful when ``rho(M) < 1``."""
        if self.M.dtype == object:
            with mpmath.workdps(self.dps or mpmath.mp.dps):
                sol = mpmath.lu_solve(mpmath.eye(4) - mpmath.matrix(self.M.tolist()),
                                      mpmath.matrix(self.b.tolist()))
            return np.array([float(v) for v in sol])
        return np.linalg.solve(np.eye(4) - self.M, self.b)


def _dk(stats: GraphStats) -> float:
    # a single node has no paths; its pull/push steps are exact averages
    return float(max(stats.diameter * stats.max_edge_utility, 1))


def _radical(radicand, name, k):
    if not (0.0 <= radicand < 1.0):
        raise TheoryError(f"step {k}: {name} radicand {radicand!r} outside [0, 1)")
    return math.sqrt(radicand)


def contraction_factors(phi, pi, stats_k: GraphStats, a, b, k):
    """``(tau_k, c_k)`` for step k."""
    p0, p1 = pi[k], pi[k + 1]
    f0, f1 = phi[k], phi[k + 1]
    DK = _dk(stats_k)
    if p0.size == 1:
        return 0.0, 0.0
    tau_sq = 1 - p0.min() ** 2 * b**2 / (p0.max() ** 2 * p1.max() * DK)
    c_sq = 1 - f1.min() * a**2 / (f0.max() ** 2 * DK)
    return _radical(tau_sq, "tau", k), _radical(c_sq, "c", k)


def step_constants(phi, pi, stats_k: GraphStats, a, b, L, k, tau_bar, c_bar) -> StepConstants:
    """Per-step constants; ``phi``/``pi`` are indexable by step (flows or arrays)."""
    if a <= 0 or b <= 0:
        raise TheoryError("weight floors a, b must be positive")
    if k + 1 >= len(phi) or k + 1 >= len(pi):
        raise TheoryError(f"flows do not cover step {k + 1}")
    n = len(pi[k])
    p0, p1 = np.asarray(pi[k]), np.asarray(pi[k + 1])
    f0, f1 = np.asarray(phi[k]), np.asarray(phi[k + 1])
    tau_k, c_k = contraction_factors(phi, pi, stats_k, a, b, k)
    chi_k, chi_k1 = math.sqrt(1 / p0.min()), math.sqrt(1 / p1.min())
    varphi_k, varphi_k1 = math.sqrt(1 / f0.min()), math.sqrt(1 / f1.min())
    gamma_k = math.sqrt(float((f1 * p0).max()))
    psi_k = n * (chi_k1**2 - 1)
    nu_k = 6 * L**2 * chi_k1**2 * tau_bar**2 / (1 - tau_bar**2) + 3 * psi_k * L**2
    zeta_k = (c_bar * varphi_k1 + varphi_k) ** 2 * nu_k
    return StepConstants(k, chi_k, chi_k1, varphi_k, varphi_k1, gamma_k, psi_k,
                         tau_k, c_k, nu_k, zeta_k, float(f1 @ p0))


def nu_varsigma(L, mu, n, eta, tau, chi, psi, varphi, printed=False):
    """``(nu, varsigma^2)``.

    ``varsigma^2`` must dominate three coefficient sums that appear when the
    Lyapunov weights are substituted into ``M delta < delta``; that needs
    ``n eta^2 mu^2`` in the denominator of its second term. ``printed=True``
    gives the variant with ``n eta mu^2`` there, which is smaller whenever
    ``eta < 1`` and then admits stepsizes with ``rho(M) > 1``.
    """
    nu = 6 * L**2 * chi**2 * tau**2 / (1 - tau**2) + 3 * psi * L**2
    eta_pow = 1 if printed else 2
    vs = (L**2 * (n * eta * mu**2 + 12 * L**2 * varphi**2) / (eta * mu**2)
          + 8 * nu * (n * eta**2 * mu**2 + 48 * L**2 * varphi**2)
          / (n * eta**eta_pow * mu**2 * (1 - tau**2)))
    return nu, vs


def global_constants(steps, phi, pi, L, mu, n, sigma=0.0, phi_tol=0.0) -> GlobalConstants:
    """Horizon-wide bounds: maxima of c, tau, psi, chi, varphi; minimum for eta."""
    if not steps:
        raise TheoryError("need at least one step")
    c = max(s.c_k for s in steps)
    tau = max(s.tau_k for s in steps)
    if c >= 1 - CONTRACTION_GUARD or tau >= 1 - CONTRACTION_GUARD:
        raise TheoryError(f"contraction factors not below 1 (c={c!r}, tau={tau!r})")
    eta = min(s.eta_k for s in steps)
    psi = max(s.psi_k for s in steps)
    chi = max(max(s.chi_k, s.chi_k1) for s in steps)
    varphi = max(max(s.varphi_k, s.varphi_k1) for s in steps)
    nu, vs = nu_varsigma(L, mu, n, eta, tau, chi, psi, varphi)
    _, vs_printed = nu_varsigma(L, mu, n, eta, tau, chi, psi, varphi, printed=True)
    phi_min = min(float(np.min(phi[s.k])) for s in steps)
    unc = {
        "varphi": phi_tol * 0.5 * phi_min**-1.5,
        "eta": phi_tol,
    }
    return GlobalConstants(c, tau, eta, psi, chi, varphi, nu, vs, float(L), float(mu),
                           int(n), float(sigma), unc, vs_printed)


def composite_system(g: GlobalConstants, alpha_bar, beta_bar, dps=None) -> CompositeSystem:
    """``M(alpha_bar, beta_bar)`` and ``b(alpha_bar)``.

    With ``dps`` every entry is an mpmath number carrying that many decimal
    digits (in an object array), so that ``1 - m1 * alpha_bar`` stays
    distinguishable from 1 when the admissible stepsizes are tiny.
    """
    upper = 2 / (g.n * g.eta * (g.L + g.mu))
    if not (0 < alpha_bar < upper):
        raise TheoryError(f"alpha_bar={alpha_bar!r} outside (0, {upper!r})")
    if beta_bar < 0:
        raise TheoryError("beta_bar must be >= 0")
    if dps is not None:
        with mpmath.workdps(dps):
            sysm = _composite(g, alpha_bar, beta_bar, mpmath.mpf, object)
        return replace(sysm, dps=dps)
    return _composite(g, alpha_bar, beta_bar, float, float)


def _composite(g, alpha_bar, beta_bar, num, dtype):
    n, L, mu, eta, c, tau = g.n, num(g.L), num(g.mu), num(g.eta), num(g.c), num(g.tau)
    vp2, nu, s2 = num(g.varphi) ** 2, num(g.nu), num(g.sigma) ** 2
    m = {
        1: n * mu * eta / 2,
        2: 3 * L**2 * vp2 / mu,
        3: 6 / (n * mu * eta),
        4: 4 * n * L**2 * vp2 * (1 + c**2) / (1 - c**2),
        5: 2 * (1 + c**2) / (1 - c**2),
        7: 6 * n * L**2 * vp2,
        8: 12 * vp2,
        9: 2 * n * L**2 * vp2 * nu,
        10: 4 * vp2 * nu,
        11: nu,
    }
    bc = {
        1: 3 * n * s2 / 2,
        2: 4 * n * (1 + c**2) * s2 / (1 - c**2),
        3: 6 * n * s2,
        4: 4 * n * g.psi * s2,
        5: 2 * L * n * num(g.psi) * s2,
        6: 2 * n * nu * s2,
    }
    a, b = num(alpha_bar), num(beta_bar)
    M = np.array([
        [1 - m[1] * a, m[2] * a, m[3] * b**2 / a, m[3] * a],
        [m[4] * a**2, (1 + c**2) / 2 + m[4] * a**2, m[5] * b**2, m[5] * a**2],
        [m[7] * a**2, m[8] + m[7] * a**2, 3 * b**2, 3 * a**2],
        [m[9] * a**2, m[10] + m[9] * a**2, m[11] * b**2, (1 + tau**2) / 2 + m[11] * a**2],
    ], dtype=dtype)
    bvec = np.array([bc[1] * a**2, bc[2] * a**2, bc[3] * a**2,
                     bc[4] + bc[5] * a + bc[6] * a**2], dtype=dtype)
    return CompositeSystem(M, bvec, float(alpha_bar), float(beta_bar), m, bc)


def lyapunov_weights(system: CompositeSystem, tau) -> np.ndarray:
    """The positive vector delta with ``M delta < delta`` inside the admissible region."""
    m = system.m
    return np.array([
        2 / m[1] * (m[2] + 4 * m[3] * m[10] / (1 - tau**2)),
        1.0,
        2 * m[8],
        4 * m[10] / (1 - tau**2),
    ])


# --------------------------------------------------------------------------
# spectral radius

@dataclass(frozen=True)
class SpectralResult:
    rho: float
    lower: float
    upper: float
    certificate: np.ndarray | None = None  # delta > 0 with M delta < bound * delta
    certified_bound: float | None = None


def _collatz_bracket(P, x):
    y = P @ x
    pos = x > 0
    ratios = y[pos] / x[pos]
    if (y[~pos] > 0).any():
        return ratios.min(), math.inf
    return ratios.min(), ratios.max()


def _squaring_iteration(P, tol, max_squarings, eps):
    Q = P / P.max()
    x = np.ones(len(P), dtype=P.dtype)
    lo, hi = 0.0, math.inf
    for _ in range(max_squarings):
        x = Q @ x
        if x.max() == 0:
            return 0.0, 0.0, np.ones(len(P), dtype=P.dtype)
        x = x / x.max()
        # decaying components underflow in float; flush them alike in high precision
        x[x < eps * eps] = 0
        lo, hi = _collatz_bracket(P, x)
        if hi - lo <= tol:
            return lo, hi, x
        Q = Q @ Q
        top = Q.max()
        if top == 0:
            break
        Q = Q / top
    return lo, hi, None


def _certify(P, x, rho, tol, eps):
    """Positive delta and bound with ``P delta < bound * delta`` entrywise."""
    n = len(P)
    ones = np.ones(n, dtype=P.dtype)
    if (x > 0).all():
        _, hi = _collatz_bracket(P, x)
        bound = hi + 4 * eps * max(hi, 1)
        if (P @ x < bound * x).all():
            return x, bound
    bound = rho + max(tol, 1e-12 * max(rho, 1))
    for pert in (1e-12, 1e-9, 1e-6, 1e-3):
        delta = x + pert * ones
        for _ in range(60):
            delta = (P @ delta) / bound + pert * ones
        if (P @ delta < bound * delta).all():
            return delta, bound
    return None, None


def spectral_radius(M, tol=None, max_squarings=200, certificate=False, dps=None):
    """Perron root of a nonnegative matrix.

    Power iteration accelerated by repeated squaring, stopped when the
    Collatz-Wielandt bracket ``[min (Mx)_i/x_i, max (Mx)_i/x_i]`` is
    narrower than ``tol`` (default 1e-10). Imprimitive matrices whose
    iterates oscillate fall back to the shifted matrix ``M + I``, whose
    Perron root is ``rho(M) + 1`` with a strict spectral gap.

    With ``dps`` the iteration runs in mpmath at that many digits and the
    default ``tol`` shrinks to ``10**-(dps - 10)``; results are then mpmath
    numbers.
    """
    if dps is not None:
        with mpmath.workdps(dps):
            P = np.array([[mpmath.mpf(v) for v in row] for row in np.asarray(M)], dtype=object)
            tol = mpmath.mpf(10) ** (10 - dps) if tol is None else mpmath.mpf(tol)
            return _spectral(P, tol, max_squarings, certificate, mpmath.eps)
    P = np.asarray(M, dtype=float)
    return _spectral(P, 1e-10 if tol is None else tol, max_squarings, certificate,
                     np.finfo(float).eps)


def _spectral(P, tol, max_squarings, certificate, eps):
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise TheoryError("spectral_radius needs a square matrix")
    if P.dtype != object and not np.isfinite(P).all():
        raise TheoryError("matrix has non-finite entries")
    if (P < 0).any():
        raise TheoryError("spectral_radius expects a nonnegative matrix")
    if not (P > 0).any():
        res = SpectralResult(0.0, 0.0, 0.0)
        return res if certificate else 0.0
    eye = np.eye(len(P), dtype=P.dtype)
    lo, hi, x = _squaring_iteration(P, tol, max_squarings, eps)
    shift = 0
    if x is None:
        shift = 1
        lo, hi, x = _squaring_iteration(P + eye, tol, max_squarings, eps)
        if x is None:
            raise TheoryError(f"power iteration did not converge (bracket [{lo}, {hi}])")
    rho = (lo + hi) / 2 - shift
    if not certificate:
        return rho
    delta, bound = _certify(P + shift * eye, x, rho + shift, tol, eps)
    if bound is not None:
        bound -= shift
    return SpectralResult(rho, lo - shift, hi - shift, delta, bound)


# --------------------------------------------------------------------------
# admissible hyper-parameters

@dataclass(frozen=True)
class Theorem1Bounds:
    g: GlobalConstants
    alpha_terms: tuple
    varsigma_sq: float

    @property
    def alpha_max(self) -> float:
        return min(self.alpha_terms)

    def beta_terms(self, alpha_bar):
        g = self.g
        t2 = 1 - g.tau**2
        first = alpha_bar * math.sqrt((g.n * g.eta * g.L**2 * t2 + 32 * g.nu) / (48 * t2))
        rad = (1 - g.c**2) ** 2 / (96 * (1 + g.c**2) * g.varphi**2) - self.varsigma_sq * alpha_bar**2 / 12
        second = math.sqrt(rad) if rad > 0 else 0.0
        return first, second

    def beta_max(self, alpha_bar) -> float:
        return min(self.beta_terms(alpha_bar))

    def binding(self, alpha_bar) -> str:
        first, second = self.beta_terms(alpha_bar)
        return "first" if first <= second else "second"


def theorem1_bounds(g: GlobalConstants, printed=False) -> Theorem1Bounds:
    """Largest admissible stepsize and, per stepsize, the momentum bound.

    ``printed=True`` evaluates the bounds with ``g.varsigma_sq_printed``
    (see ``nu_varsigma``); those bounds are not sufficient for ``rho(M) < 1``.
    """
    vs = g.varsigma_sq_printed if printed else g.varsigma_sq
    t1 = 2 / (g.n * g.eta * (g.L + g.mu))
    t2 = (1 - g.c**2) / (2 * g.varphi * math.sqrt(vs) * math.sqrt(2 * (1 + g.c**2)))
    return Theorem1Bounds(g, (t1, t2), vs)


# --------------------------------------------------------------------------
# whole-horizon convenience

def horizon_constants(seq, pairs, phi, pi, L, mu, sigma=0.0, stats=None):
    """Per-step and global constants for a realized run.

    The floors ``a``, ``b`` are the smallest positive weights over the horizon.
    """
    from .graph import graph_stats

    K = len(pairs)
    if stats is None:
        cache = {}
        stats = []
        for k in range(K):
            g = seq[k]
            if g not in cache:
                cache[g] = graph_stats(g)
            stats.append(cache[g])
    a = min(p.a_floor for p in pairs)
    b = min(p.b_floor for p in pairs)
    factors = [contraction_factors(phi, pi, stats[k], a, b, k) for k in range(K)]
    tau_bar = max(f[0] for f in factors)
    c_bar = max(f[1] for f in factors)
    steps = [step_constants(phi, pi, stats[k], a, b, L, k, tau_bar, c_bar) for k in range(K)]
    n = len(pi[0])
    tol = getattr(phi, "approx_tol", 0.0)
    return global_constants(steps, phi, pi, L, mu, n, sigma, tol), steps
