"""Picard iteration for the semilinear equation with drift Lap y + alpha y + beta Y + f(y).

Writing f(s) = f'(0) s + s^2 G(s), each step freezes the remainder at the
previous iterate and solves the linear equation with alpha + f'(0) and
source ybar^2 G(ybar).  Because the scheme is implicit in y, a fixed point
of the discrete map satisfies the discrete equation with f(y_n) exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import UsageError
from .grid import Discretization, lp_power
from .solver import AdaptedField, BSPDESolution, CoefficientSet, ProblemData, solve_linear, weak_form_residual
from .toolkit import NonlinearitySpec, nonlinearity_G
from .tree import ScenarioTree, condexp_step

BLOWUP_LEVEL = 1e6
RATIO_LIMIT = 10.0
RATIO_STRIKES = 3


@dataclass
class PicardState:
    k: int
    difference: float
    ratio: float
    sup_norm: float
    Y_norm: float
    in_ball: bool


@dataclass
class PicardResult:
    solution: Optional[BSPDESolution]
    history: list
    converged: bool
    diverged: bool
    reason: str
    radius: float
    ratios: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios)) if self.ratios.size else 0.0

    def summary(self) -> dict:
        return {
            "converged": self.converged, "diverged": self.diverged, "reason": self.reason,
            "iterations": self.iterations, "radius": self.radius, "max_ratio": self.max_ratio,
            "final_difference": self.history[-1].difference if self.history else 0.0,
        }


def _Y_norm(sol: BSPDESolution) -> float:
    """sqrt(E sum_n dt |Y_n|^2_{L^2}), the Y part of the solution norm."""
    tree = sol.tree
    total = 0.0
    for n in range(tree.levels):
        total += tree.dt * float(np.dot(tree.probabilities(n), lp_power(sol.Y.level(n), 2, sol.disc)))
    return math.sqrt(total)


def _sup_diff(a: BSPDESolution, b_levels: Sequence[np.ndarray]) -> float:
    return max(float(np.max(np.abs(a.y.level(n) - b_levels[n]))) for n in range(a.tree.levels + 1))


def terminal_extension(tree: ScenarioTree, yT: np.ndarray) -> list[np.ndarray]:
    """E[yT | F_n] on every level: yT itself, held constant in time, when yT is deterministic."""
    out = [np.asarray(yT, dtype=float)]
    for n in range(tree.levels - 1, -1, -1):
        out.append(condexp_step(out[-1], n, tree))
    return out[::-1]


def picard_solve(tree: ScenarioTree, disc: Discretization, coeffs: CoefficientSet, f: NonlinearitySpec,
                 yT, tol: float = 1e-10, max_iter: int = 50, initial: Optional[Sequence[np.ndarray]] = None,
                 panels: int = 64) -> PicardResult:
    """Iterate the linearized map from ``initial`` (default zero) until successive sup differences <= tol.

    The contraction ratio of step k is d_k / d_{k-1} with d_k the sup-norm
    difference of consecutive y iterates.  Ratios are only recorded while the
    difference is well above round-off.
    """
    yT = np.asarray(yT, dtype=float)
    if not np.all(np.isfinite(yT)):
        raise UsageError("terminal data must be finite")
    if abs(float(f.f(np.float64(0.0)))) > 1e-12:
        raise UsageError("nonlinearity must vanish at 0")
    shifted = coeffs.shifted(f.slope_at_zero)
    prev = [np.zeros((tree.node_count(n), disc.M)) for n in range(tree.levels + 1)] if initial is None \
        else [np.asarray(v, dtype=float) for v in initial]
    history, ratios = [], []
    radius, strikes, last_diff = math.inf, 0, None
    sol = None
    floor = 1e3 * np.finfo(float).eps
    for k in range(1, max_iter + 1):
        F = AdaptedField(tree, disc, [prev[n] ** 2 * nonlinearity_G(f, prev[n], panels) for n in range(tree.levels)])
        sol = solve_linear(tree, disc, shifted, ProblemData(yT, F))
        if not sol.y.is_finite() or sol.y.sup_norm() > BLOWUP_LEVEL:
            history.append(PicardState(k, math.inf, math.inf, sol.y.sup_norm(), math.nan, False))
            return PicardResult(sol, history, False, True, "blow-up", radius, np.array(ratios))
        sup = sol.y.sup_norm()
        if k == 1:
            radius = 2.0 * sup
        diff = _sup_diff(sol, prev)
        ratio = math.nan
        if last_diff is not None and last_diff > floor * max(1.0, sup):
            ratio = diff / last_diff
            ratios.append(ratio)
            strikes = strikes + 1 if ratio > RATIO_LIMIT else 0
        history.append(PicardState(k, diff, ratio, sup, _Y_norm(sol), sup <= radius * (1 + 1e-12)))
        if diff <= tol:
            return PicardResult(sol, history, True, False, "tolerance reached", radius, np.array(ratios))
        if strikes >= RATIO_STRIKES:
            return PicardResult(sol, history, False, True, "ratio above limit", radius, np.array(ratios))
        prev = [sol.y.level(n) for n in range(tree.levels + 1)]
        last_diff = diff
    return PicardResult(sol, history, False, False, "iteration limit", radius, np.array(ratios))


def ratios_settled(ratios, noise: float = 0.1) -> bool:
    """Ratios below 1 never grow by more than ``noise`` (relative) from one step to the next.

    The first ratio compares against the distance from the initial guess and
    is systematically smaller, so the check starts at the second one.
    """
    r = np.asarray(ratios, dtype=float)[1:]
    return bool(all(b <= a * (1 + noise) for a, b in zip(r, r[1:]) if a < 1))


@dataclass
class SemilinearResidual:
    per_step: np.ndarray
    max_step: float
    telescoped: float


def verify_semilinear(sol: BSPDESolution, f: NonlinearitySpec, coeffs: CoefficientSet) -> SemilinearResidual:
    """Discrete weak-form defect with the true f(y), per step and summed over steps."""
    sources = [np.asarray(f.f(sol.y.level(n)), dtype=float) for n in range(sol.tree.levels)]
    per_step = weak_form_residual(sol, coeffs, sources)
    return SemilinearResidual(per_step, float(np.max(per_step, initial=0.0)), float(np.sum(per_step)))


@dataclass
class ProbeResult:
    amplitudes: np.ndarray
    converged: np.ndarray
    max_ratios: np.ndarray
    last_converged: float
    first_diverged: float
    ratios_monotone: bool

    def summary(self) -> dict:
        return {
            "amplitudes": self.amplitudes.tolist(), "converged": self.converged.tolist(),
            "max_ratios": self.max_ratios.tolist(), "last_converged": self.last_converged,
            "first_diverged": self.first_diverged, "ratios_monotone": self.ratios_monotone,
        }


def smallness_probe(tree: ScenarioTree, disc: Discretization, coeffs: CoefficientSet, f: NonlinearitySpec,
                    direction, amplitudes: Sequence[float], tol: float = 1e-10, max_iter: int = 50) -> ProbeResult:
    """Run the iteration for yT = a * direction / ||direction||_inf along an increasing amplitude ladder.

    ``direction`` is a terminal field or one spatial profile shared by all terminal nodes.

    ``first_diverged`` is inf when every amplitude converges ("no failure in ladder").
    """
    amps = np.asarray(amplitudes, dtype=float)
    if amps.size == 0 or np.any(np.diff(amps) <= 0):
        raise UsageError("amplitudes must be increasing")
    direction = np.asarray(direction, dtype=float)
    scale = float(np.max(np.abs(direction)))
    if scale == 0:
        raise UsageError("direction must be nonzero")
    # a single spatial profile is used on every terminal node
    unit = np.broadcast_to(direction / scale, (tree.node_count(tree.levels), disc.M))
    conv, ratios = [], []
    for a in amps:
        res = picard_solve(tree, disc, coeffs, f, a * unit, tol, max_iter)
        conv.append(res.converged)
        ratios.append(res.max_ratio if res.ratios.size else (math.inf if res.diverged else 0.0))
    conv, ratios = np.array(conv), np.array(ratios)
    ok = amps[conv]
    bad = amps[~conv]
    return ProbeResult(amps, conv, ratios, float(ok.max()) if ok.size else math.nan,
                       float(bad.min()) if bad.size else math.inf, bool(np.all(np.diff(ratios) >= 0)))
