"""Executable versions of the analytic tools behind the L^p estimates.

* ``TruncationFamily`` / ``phi``: C^2 functions equal to |r|^p on (-n, n)
  and quadratically extended outside, with the inequalities they satisfy.
* ``NonlinearitySpec`` / ``nonlinearity_G``: the second-order Taylor
  remainder kernel G with f(s) = f'(0) s + s^2 G(s).
* ``backward_gronwall``: checker for the backward integral inequality.
* ``lp_to_linf``: L^p norms of a finite-measure sample approaching the max.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import UsageError

# relative slack for inequalities that hold with equality on the inner branch
INEQUALITY_SLACK = 1e-12


def power_phi(r: np.ndarray, p: float, order: int) -> np.ndarray:
    """|r|^p and its first two derivatives."""
    a = np.abs(r)
    if order == 0:
        return a**p
    if order == 1:
        return p * a ** (p - 2) * r if p != 2 else 2.0 * r
    if order == 2:
        return p * (p - 1) * a ** (p - 2) if p != 2 else np.full_like(a, 2.0)
    raise UsageError(f"derivative_order must be 0, 1 or 2, got {order}")


@dataclass(frozen=True)
class TruncationFamily:
    n: float
    p: float

    def __post_init__(self):
        if not self.n > 0:
            raise UsageError(f"truncation level must be positive, got {self.n}")
        if not self.p >= 2:
            raise UsageError(f"truncation family needs p >= 2, got {self.p}")

    @property
    def quadratic_constant(self) -> float:
        """M with |phi| <= M r^2, |phi'| <= M |r|, |phi''| <= M."""
        return self.p * (self.p - 1) * self.n ** (self.p - 2)

    @property
    def power_constant(self) -> float:
        """N with |phi| <= N|r|^p, |phi'| <= N|r|^(p-1), |phi''| <= N|r|^(p-2)."""
        return self.p * (self.p - 1)


def _outer_branch(fam: TruncationFamily, r: np.ndarray, order: int) -> np.ndarray:
    n, p = fam.n, fam.p
    a = np.abs(r)
    c2 = n ** (p - 2) * p * (p - 1)
    if order == 0:
        return 0.5 * c2 * (a - n) ** 2 + p * n ** (p - 1) * (a - n) + n**p
    if order == 1:
        return np.sign(r) * (c2 * (a - n) + p * n ** (p - 1))
    if order == 2:
        return np.full_like(a, c2)
    raise UsageError(f"derivative_order must be 0, 1 or 2, got {order}")


def phi(fam: TruncationFamily, r, derivative_order: int = 0):
    """phi_n(r) or one of its first two derivatives."""
    r_arr = np.asarray(r, dtype=float)
    inner = np.abs(r_arr) < fam.n
    out = np.where(inner, power_phi(r_arr, fam.p, derivative_order), _outer_branch(fam, r_arr, derivative_order))
    return float(out) if out.ndim == 0 else out


def branch_mismatch(fam: TruncationFamily) -> float:
    """Largest relative gap between the two branch formulas at |r| = n, orders 0..2."""
    worst = 0.0
    for r in (fam.n, -fam.n):
        r_arr = np.array(r)
        for order in range(3):
            a = power_phi(r_arr, fam.p, order)
            b = _outer_branch(fam, r_arr, order)
            worst = max(worst, float(abs(a - b) / max(1.0, abs(a))))
    return worst


@dataclass
class InequalityCheck:
    name: str
    passed: bool
    worst_margin: float
    worst_r: Optional[float]
    skipped: bool = False


def check_phi_properties(fam: TruncationFamily, sample) -> dict[str, InequalityCheck]:
    """Evaluate every pointwise inequality of the truncation family on ``sample``.

    ``worst_margin`` is min over the sample of (rhs - lhs) / max(1, |rhs|);
    a check passes when it is >= -INEQUALITY_SLACK.
    """
    r = np.asarray(sample, dtype=float).ravel()
    if r.size == 0:
        raise UsageError("sample must be nonempty")
    p = fam.p
    f0, f1, f2 = (phi(fam, r, k) for k in range(3))
    f0, f1, f2 = (np.atleast_1d(x) for x in (f0, f1, f2))
    a = np.abs(r)
    Mq, Np = fam.quadratic_constant, fam.power_constant

    pairs = {
        "r_phi_prime": (np.abs(r * f1), p * f0),
        "phi_prime_squared": (f1**2, 4 * p * f2 * f0),
        "phi_nonneg_second": (np.zeros_like(f2), f2),
        "quad_phi": (np.abs(f0), Mq * a**2),
        "quad_phi_prime": (np.abs(f1), Mq * a),
        "quad_phi_second": (np.abs(f2), np.full_like(a, Mq)),
        "power_phi": (np.abs(f0), Np * a**p),
        "power_phi_prime": (np.abs(f1), Np * a ** (p - 1)),
        "power_phi_second": (np.abs(f2), Np * (a ** (p - 2) if p != 2 else np.ones_like(a))),
    }
    report = {name: _margin(name, lhs, rhs, r) for name, (lhs, rhs) in pairs.items()}

    # (phi'')^(p/(p-2)) <= [p(p-1)]^(p/(p-2)) phi, compared in log space
    if p == 2:
        report["phi_second_power"] = InequalityCheck("phi_second_power", True, math.inf, None, skipped=True)
    else:
        e = p / (p - 2)
        inner = (a < fam.n) & (a > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            # on the inner branch use log|r| directly so tiny r cannot underflow
            log_a = np.log(np.where(inner, a, 1.0))
            log_f2 = np.where(inner, math.log(p * (p - 1)) + (p - 2) * log_a, np.log(f2))
            log_f0 = np.where(inner, p * log_a, np.log(f0))
            lhs = e * log_f2
            rhs = e * math.log(p * (p - 1)) + log_f0
            margin = np.where(f2 == 0, np.inf, (rhs - lhs) / np.maximum(1.0, np.abs(rhs)))
        i = int(np.argmin(margin))
        report["phi_second_power"] = InequalityCheck(
            "phi_second_power", bool(margin[i] >= -INEQUALITY_SLACK), float(margin[i]), float(r[i])
        )
    return report


def _margin(name: str, lhs: np.ndarray, rhs: np.ndarray, r: np.ndarray) -> InequalityCheck:
    margin = (rhs - lhs) / np.maximum(1.0, np.abs(rhs))
    i = int(np.argmin(margin))
    return InequalityCheck(name, bool(margin[i] >= -INEQUALITY_SLACK), float(margin[i]), float(r[i]))


# ---------------------------------------------------------------------------
# Taylor remainder kernel


def _central_first(f, s, step):
    return (f(s + step) - f(s - step)) / (2 * step)


def _central_second(f, s, step):
    return (f(s + step) - 2 * f(s) + f(s - step)) / step**2


@dataclass
class NonlinearitySpec:
    """Scalar nonlinearity f with f(0) = 0 on a closed interval containing 0.

    Missing derivatives fall back to central differences with ``step``.
    """

    f: Callable
    df: Optional[Callable] = None
    d2f: Optional[Callable] = None
    interval: tuple[float, float] = (-2.0, 2.0)
    step: float = 1e-5
    name: str = "f"
    M: float = field(init=False)
    M1: float = field(init=False)

    def __post_init__(self):
        lo, hi = self.interval
        if not lo <= 0 <= hi:
            raise UsageError(f"interval {self.interval} must contain 0")
        f0 = float(self.f(np.float64(0.0)))
        if abs(f0) > 1e-12:
            raise UsageError(f"nonlinearity must vanish at 0, got f(0) = {f0}")
        self.M = _max_abs_on(self.second, lo, hi)
        self.M1 = _max_abs_on(self.first, lo, hi)

    def first(self, s):
        s = np.asarray(s, dtype=float)
        return self.df(s) if self.df is not None else _central_first(self.f, s, self.step)

    def second(self, s):
        s = np.asarray(s, dtype=float)
        return self.d2f(s) if self.d2f is not None else _central_second(self.f, s, self.step)

    @property
    def slope_at_zero(self) -> float:
        return float(self.first(np.float64(0.0)))


def _max_abs_on(g: Callable, lo: float, hi: float, samples: int = 4001) -> float:
    xs = np.linspace(lo, hi, samples)
    vals = np.abs(np.broadcast_to(g(xs), xs.shape))
    i = int(np.argmax(vals))
    best = float(vals[i])
    a, b = xs[max(i - 1, 0)], xs[min(i + 1, samples - 1)]
    if b > a:
        res = minimize_scalar(lambda s: -abs(float(g(np.float64(s)))), bounds=(a, b), method="bounded",
                              options={"xatol": 1e-12})
        best = max(best, -float(res.fun))
    return best


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


def nonlinearity_G(spec: NonlinearitySpec, s, panels: int = 64):
    """G(s) = int_0^1 (1 - sigma) f''(sigma s) d sigma by composite 4-point Gauss-Legendre."""
    if panels < 8:
        raise UsageError(f"need at least 8 panels, got {panels}")
    s_arr = np.asarray(s, dtype=float)
    edges = np.linspace(0.0, 1.0, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    sigma = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    vals = spec.second(np.multiply.outer(s_arr, sigma))
    out = np.sum(np.broadcast_to(vals, s_arr.shape + sigma.shape) * (w * (1.0 - sigma)), axis=-1)
    return float(out) if out.ndim == 0 else out


def taylor_defect(spec: NonlinearitySpec, s, panels: int = 64):
    """|f(s) - f'(0) s - s^2 G(s)|."""
    s_arr = np.asarray(s, dtype=float)
    return np.abs(spec.f(s_arr) - spec.slope_at_zero * s_arr - s_arr**2 * nonlinearity_G(spec, s_arr, panels))


@dataclass
class GBoundsReport:
    passed: bool
    M: float
    M1: float
    max_abs_G: float
    worst_pair_margin: float
    worst_pair: Optional[tuple[float, float]]


def check_G_bounds(spec: NonlinearitySpec, samples, panels: int = 64, slack: float = 1e-9) -> GBoundsReport:
    """|G| <= M on the samples and the two-point bound for every ordered pair of samples."""
    s = np.asarray(samples, dtype=float).ravel()
    lo, hi = spec.interval
    if np.any(s < lo) or np.any(s > hi):
        raise UsageError(f"samples must lie in {spec.interval}")
    G = np.atleast_1d(nonlinearity_G(spec, s, panels))
    max_abs_G = float(np.max(np.abs(G)))
    ok_G = max_abs_G <= spec.M * (1 + slack) + slack

    s1, s2 = s[:, None], s[None, :]
    lhs = np.abs(s1**2 * G[:, None] - s2**2 * G[None, :])
    rhs = spec.M * np.abs(s1 - s2) * (np.abs(s1) + np.abs(s2)) + spec.M1 * s2**2 * np.abs(s1 - s2)
    margin = rhs - lhs + slack * np.maximum(1.0, rhs)
    k = int(np.argmin(margin))
    i, j = np.unravel_index(k, margin.shape)
    worst = float(margin[i, j])
    return GBoundsReport(
        passed=bool(ok_G and worst >= 0),
        M=spec.M,
        M1=spec.M1,
        max_abs_G=max_abs_G,
        worst_pair_margin=worst,
        worst_pair=(float(s[i]), float(s[j])),
    )


# ---------------------------------------------------------------------------
# Backward Gronwall


@dataclass
class GronwallResult:
    hypothesis_holds: bool
    violations: np.ndarray
    bound: np.ndarray
    resolvent: np.ndarray
    bound_holds: bool


def backward_gronwall(g, a, b, c, t, slack: float = 1e-9) -> GronwallResult:
    """Check g(t) <= a(t) + b(t) int_t^T c g on a grid and return the implied bounds.

    Samples are read as right-endpoint step functions: the value at t_j holds
    on (t_{j-1}, t_j].  The hypothesis integral is then a right-endpoint sum.

    ``bound`` is a(t) + b(t) int_t^T a c exp(int_t^u b c) integrated exactly
    for those step functions (so constant data give exactly a e^{b(T-t)}).
    ``resolvent`` is the exact solution of the discrete equality case; it is
    the sharp discrete bound and a fixed point of the hypothesis.
    """
    g, a, b, c, t = (np.asarray(x, dtype=float) for x in (g, a, b, c, t))
    n = t.size
    if any(x.shape != (n,) for x in (g, a, b, c)):
        raise UsageError("g, a, b, c and t must share one grid")
    if np.any(b < 0) or np.any(c < 0):
        raise UsageError("b and c must be nonnegative")
    if n < 2 or np.any(np.diff(t) <= 0):
        raise UsageError("time grid must be strictly increasing with at least 2 points")

    dt = np.diff(t)
    # tail[i] = sum_{j>i} dt_j c_j g_j
    contrib = np.concatenate([[0.0], dt * c[1:] * g[1:]])
    tail = np.concatenate([np.cumsum(contrib[::-1])[::-1][1:], [0.0]])
    rhs = a + b * tail
    violations = np.flatnonzero(g > rhs + slack * np.maximum(1.0, np.abs(rhs)))

    rate = dt * b[1:] * c[1:]  # int of b c over cell j = 1..n-1
    bound = a.copy()
    for i in range(n - 1):
        r = rate[i:]
        before = np.concatenate([[0.0], np.cumsum(r)[:-1]])
        cell = np.where(r > 0, np.expm1(r) / np.where(r > 0, r, 1.0), 1.0) * dt[i:]
        bound[i] += b[i] * np.sum(a[i + 1:] * c[i + 1:] * np.exp(before) * cell)

    resolvent = np.empty(n)
    acc = 0.0
    for i in range(n - 1, -1, -1):
        resolvent[i] = a[i] + b[i] * acc
        if i > 0:
            acc += dt[i - 1] * c[i] * resolvent[i]

    hyp = violations.size == 0
    bound_holds = bool(
        np.all(g <= resolvent + slack * np.maximum(1.0, np.abs(resolvent)))
        and np.all(resolvent <= bound + slack * np.maximum(1.0, np.abs(bound)))
    )
    return GronwallResult(hyp, violations, bound, resolvent, bound_holds if hyp else False)


# ---------------------------------------------------------------------------
# L^p -> L^infinity


@dataclass
class LinfEstimate:
    p_list: np.ndarray
    norms: np.ndarray
    max_value: float
    total_measure: float
    relative_gap: float
    half_threshold_p: float
    converged: bool
    monotone: bool


def lp_to_linf(values, weights, p_list, rel_tol: float = 0.011) -> LinfEstimate:
    """L^p norms of a weighted sample along ``p_list`` and their approach to the max.

    ``half_threshold_p`` is the smallest p with mu({|f| = max})^{1/p} >= 1/2,
    beyond which every L^p norm is at least half the max.
    """
    v = np.abs(np.asarray(values, dtype=float).ravel())
    w = np.asarray(weights, dtype=float).ravel()
    if v.size == 0:
        raise UsageError("empty sample")
    if w.shape != v.shape or np.any(w < 0):
        raise UsageError("weights must be nonnegative and match the values")
    total = float(np.sum(w))
    if not total > 0:
        raise UsageError("total measure must be positive")
    ps = np.asarray(p_list, dtype=float)
    if ps.size == 0 or np.any(np.diff(ps) <= 0) or ps[-1] < 64:
        raise UsageError("p_list must be increasing with a largest entry >= 64")

    vmax = float(np.max(v))
    if vmax == 0:
        norms = np.zeros_like(ps)
    else:
        scaled = v / vmax
        norms = vmax * np.array([np.sum(w * scaled**p) ** (1.0 / p) for p in ps])
    normalized = norms / total ** (1.0 / ps)
    monotone = bool(np.all(np.diff(normalized) >= -1e-12 * max(vmax, 1.0)))

    top = float(np.sum(w[v == vmax]))
    half_p = math.log(top) / math.log(0.5) if top < 1 else 1.0
    gap = abs(norms[-1] - vmax) / vmax if vmax > 0 else 0.0
    converged = bool(gap <= rel_tol and (total > 1 or np.all(norms <= vmax * (1 + 1e-12))))
    return LinfEstimate(ps, norms, vmax, total, float(gap), float(max(half_p, 0.0)), converged, monotone)
