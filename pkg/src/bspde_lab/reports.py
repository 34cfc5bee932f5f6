"""A priori estimate reports and discrete Ito-formula residuals for a computed solution.

Time integrals are left-point sums over the step levels 0..N-1, matching the
implicit scheme; "sup over t" is the max over levels 0..N along each path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import baselines
from .errors import UsageError
from .grid import apply_laplacian, h1_seminorm_sq, inner, lp_power
from .solver import BSPDESolution, CoefficientSet, ProblemData
from .toolkit import TruncationFamily, phi, power_phi
from .tree import AdaptedRV, ScenarioTree, condexp_step, expectation, ito_integral


@dataclass
class EstimateReport:
    name: str
    lhs: float
    rhs: float
    margin: float
    implied_constant: float = field(init=False)
    passed: bool = field(init=False)
    terms: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rhs == 0:
            self.implied_constant = 0.0 if self.lhs == 0 else math.inf
        else:
            self.implied_constant = self.lhs / self.rhs
        self.passed = bool(self.lhs <= self.margin * self.rhs)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "implied_constant": self.implied_constant,
            "margin": self.margin,
            "passed": self.passed,
            "terms": dict(self.terms),
        }


def level_mean(values: np.ndarray, level: int, tree: ScenarioTree) -> float:
    """E of a scalar node variable at ``level``."""
    return float(expectation(AdaptedRV(level, values), tree))


def path_values(per_level: list[np.ndarray], tree: ScenarioTree) -> tuple[np.ndarray, np.ndarray]:
    """Stack node scalars along every path: returns (paths x levels) values and path probabilities."""
    idx, probs = tree.paths()
    first = tree.levels + 1 - len(per_level)
    cols = [per_level[k][idx[:, first + k]] for k in range(len(per_level))]
    return np.stack(cols, axis=1), probs


def expected_running_max(per_level: list[np.ndarray], tree: ScenarioTree) -> float:
    vals, probs = path_values(per_level, tree)
    return float(np.dot(probs, np.max(vals, axis=1)))


def expected_path_power(per_level: list[np.ndarray], tree: ScenarioTree, power: float) -> float:
    """E[(sum over levels of the node scalars along the path)^power], levels starting at 0."""
    idx, probs = tree.paths()
    total = np.zeros(idx.shape[0])
    for k, v in enumerate(per_level):
        total += v[idx[:, k]]
    return float(np.dot(probs, total**power))


def _steps(sol: BSPDESolution) -> range:
    return range(sol.tree.levels)


def energy_report(sol: BSPDESolution, data: ProblemData, coeffs: CoefficientSet,
                  margin: float = baselines.ENERGY_MARGIN) -> EstimateReport:
    tree, disc, dt = sol.tree, sol.disc, sol.dt
    N = tree.levels
    norms = [lp_power(sol.y.level(n), 2, disc) for n in range(N + 1)]
    sup_term = expected_running_max(norms, tree)
    grad_term = sum(dt * level_mean(h1_seminorm_sq(sol.y.level(n), disc), n, tree) for n in _steps(sol))
    Y_term = sum(dt * level_mean(lp_power(sol.Y.level(n), 2, disc), n, tree) for n in _steps(sol))
    yT_term = level_mean(lp_power(np.asarray(data.yT), 2, disc), N, tree)
    F_term = sum(dt * level_mean(lp_power(data.F.level(n), 2, disc), n, tree) for n in _steps(sol))
    return EstimateReport(
        "energy",
        lhs=sup_term + grad_term + Y_term,
        rhs=yT_term + F_term,
        margin=margin,
        terms={"sup_y": sup_term, "grad_y": grad_term, "Y": Y_term, "yT": yT_term, "F": F_term},
    )


def weighted_gradient(v: np.ndarray, p: float, disc) -> np.ndarray:
    """Discrete int |v|^{p-2} |grad v|^2, defined as <|v|^{p-2} v, -Lap v> / (p - 1).

    Summation by parts makes this the exact grid counterpart of the
    continuous identity and it reduces to |v|^2_{H^1} at p = 2.
    """
    return inner(disc, power_phi(v, p, 1) / p, -apply_laplacian(disc, v)) / (p - 1)


def lp_report(sol: BSPDESolution, data: ProblemData, coeffs: CoefficientSet, p: float,
              margin: Optional[float] = None) -> EstimateReport:
    if not p >= 2:
        raise UsageError(f"L^p report needs p >= 2, got {p}")
    tree, disc, dt = sol.tree, sol.disc, sol.dt
    N = tree.levels
    sup_term = expected_running_max([lp_power(sol.y.level(n), p, disc) for n in range(N + 1)], tree)
    grad_term = sum(dt * level_mean(weighted_gradient(sol.y.level(n), p, disc), n, tree) for n in _steps(sol))
    Y_sq = [dt * lp_power(sol.Y.level(n), 2, disc) for n in _steps(sol)]
    Y_term = expected_path_power(Y_sq, tree, p / 2)
    weight = (lambda v: np.ones_like(v)) if p == 2 else (lambda v: np.abs(v) ** (p - 2))
    cross_term = sum(
        dt * level_mean(inner(disc, weight(sol.y.level(n)), sol.Y.level(n) ** 2), n, tree) for n in _steps(sol)
    )
    yT_term = level_mean(lp_power(np.asarray(data.yT), p, disc), N, tree)
    F_term = sum(dt * level_mean(lp_power(data.F.level(n), p, disc), n, tree) for n in _steps(sol))
    if margin is None:
        margin = baselines.lp_margin(p)
    return EstimateReport(
        f"lp(p={p:g})",
        lhs=sup_term + grad_term + Y_term,
        rhs=yT_term + F_term,
        margin=margin,
        terms={"sup_y": sup_term, "grad_y": grad_term, "Y": Y_term, "cross_yY": cross_term,
               "yT": yT_term, "F": F_term, "p": p},
    )


LINF_MARGIN = 1 + 1e-9


def linf_report(sol: BSPDESolution, data: ProblemData, coeffs: CoefficientSet,
                margin: float = LINF_MARGIN) -> EstimateReport:
    yT_sup, F_sup = data.sup_norms()
    rate = coeffs.K + 1.0
    return EstimateReport(
        "linf",
        lhs=sol.y.sup_norm(),
        rhs=math.exp(rate * sol.tree.horizon) * (yT_sup + F_sup),
        margin=margin,
        terms={"K": coeffs.K, "yT_sup": yT_sup, "F_sup": F_sup, "rate": rate},
    )


# ---------------------------------------------------------------------------
# Ito formula for the L^p norm


@dataclass
class IdentityResidual:
    """LHS - RHS of the discrete Ito identity, conditioned on each node at ``level``."""

    level: int
    residual: np.ndarray
    expectation: float
    stochastic_conditional: np.ndarray
    terms: dict


def _identity_residual(sol: BSPDESolution, coeffs: CoefficientSet, data: ProblemData,
                       f: Callable[[np.ndarray, int], np.ndarray], level: int) -> IdentityResidual:
    tree, disc, dt = sol.tree, sol.disc, sol.dt
    N = tree.levels
    if not 0 <= level <= N:
        raise UsageError(f"level {level} outside 0..{N}")
    # acc = E[int f(y_N) + sum_{k >= level} (drift - grad - cross) | F_k]
    acc = np.sum(f(sol.y.level(N), 0), axis=-1) * disc.h
    stoch = np.zeros_like(acc)
    sums = {"grad": np.zeros_like(acc), "cross": np.zeros_like(acc), "drift": np.zeros_like(acc)}
    for k in range(N - 1, level - 1, -1):
        yk, Yk = sol.y.level(k), sol.Y.level(k)
        f1, f2 = f(yk, 1), f(yk, 2)
        grad = dt * inner(disc, f1, -apply_laplacian(disc, yk))
        cross = dt * 0.5 * inner(disc, f2, Yk**2)
        drift = dt * inner(disc, f1, coeffs.alpha.level(k) * yk + coeffs.beta.level(k) * Yk + data.F.level(k))
        Z = inner(disc, f1, Yk)
        up, down = tree.children(k)
        # averaged per parent: on a recombining tree two parents share a child
        stoch = 0.5 * ((stoch[up] + Z * tree.sqrt_dt) + (stoch[down] - Z * tree.sqrt_dt))
        acc = condexp_step(acc, k, tree) + drift - grad - cross
        for name, term in (("grad", grad), ("cross", cross), ("drift", drift)):
            sums[name] = condexp_step(sums[name], k, tree) + term
    current = np.sum(f(sol.y.level(level), 0), axis=-1) * disc.h
    residual = current - (acc - stoch)
    terms = {"norm_now": level_mean(current, level, tree)}
    terms.update({name: level_mean(v, level, tree) for name, v in sums.items()})
    return IdentityResidual(level, residual, level_mean(residual, level, tree), stoch, terms)


def ito_residual(sol: BSPDESolution, data: ProblemData, coeffs: CoefficientSet, p: float,
                 t_idx: int) -> IdentityResidual:
    if not p >= 2:
        raise UsageError(f"Ito formula for the L^p norm needs p >= 2, got {p}")
    return _identity_residual(sol, coeffs, data, lambda v, k: power_phi(v, p, k), t_idx)


def phi_identity_check(sol: BSPDESolution, coeffs: CoefficientSet, data: ProblemData,
                       fam: TruncationFamily, level: int) -> IdentityResidual:
    return _identity_residual(sol, coeffs, data, lambda v, k: phi(fam, v, k), level)


def energy_consistency_defect(sol: BSPDESolution, level: int) -> np.ndarray:
    """E[sum_{k >= level} |y_k - E[y_{k+1} | F_k]|^2_{L^2} | F_level] per node.

    Independent of the residual code: at p = 2 the discrete identity misses
    exactly this amount (with a minus sign).
    """
    tree, disc = sol.tree, sol.disc
    acc = np.zeros(tree.node_count(tree.levels))
    for k in range(tree.levels - 1, level - 1, -1):
        m = condexp_step(sol.y.level(k + 1), k, tree)
        acc = condexp_step(acc, k, tree) + np.sum((sol.y.level(k) - m) ** 2, axis=-1) * disc.h
    return acc


def stochastic_integral_expectation(sol: BSPDESolution, p: float) -> float:
    """E[sum_k <p|y_k|^{p-2} y_k, Y_k> dW_k], the path sum evaluated on every leaf of the full tree."""
    tree, disc = sol.tree, sol.disc
    Z = [AdaptedRV(k, inner(disc, power_phi(sol.y.level(k), p, 1), sol.Y.level(k))) for k in range(tree.levels)]
    total = ito_integral(Z, tree)
    return float(expectation(total, tree.full()))


@dataclass
class ConvergenceStudy:
    dts: np.ndarray
    residuals: np.ndarray
    order: float


def fit_order(dts, errors) -> float:
    dts, errors = np.asarray(dts, float), np.abs(np.asarray(errors, float))
    if np.any(errors == 0):
        return math.inf
    return float(np.polyfit(np.log(dts), np.log(errors), 1)[0])


def ito_convergence(build: Callable[[int], tuple], levels_list, p: float, t_idx: int = 0) -> ConvergenceStudy:
    """Expected Ito residual at ``t_idx`` for each tree depth; ``build(levels)`` returns (sol, data, coeffs)."""
    dts, res = [], []
    for levels in levels_list:
        sol, data, coeffs = build(levels)
        r = ito_residual(sol, data, coeffs, p, t_idx)
        dts.append(sol.dt)
        res.append(r.expectation)
    return ConvergenceStudy(np.array(dts), np.array(res), fit_order(dts, res))
