"""Backward stepping for the linear backward stochastic heat equation.

Per node at level n, with children ``up``/``down`` at level n + 1:

    Y_n = (y_up - y_down) / (2 sqrt(dt))          martingale representation
    m_n = (y_up + y_down) / 2                     E[y_{n+1} | F_n]
    (I - dt (Lap + alpha_n)) y_n = m_n + dt (beta_n Y_n + F_n)

so y_{n+1} - y_n = -dt (Lap y_n + alpha_n y_n + beta_n Y_n + F_n) + Y_n dW_n
holds exactly on both children.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, UsageError
from .grid import Discretization, apply_laplacian, solve_tridiagonal, tridiagonal_apply
from .tree import ScenarioTree


@dataclass
class AdaptedField:
    """Space-valued adapted process: ``data[k]`` has shape (nodes at level first_level + k, M)."""

    tree: ScenarioTree
    disc: Discretization
    data: list
    first_level: int = 0

    def __post_init__(self):
        self.data = [np.asarray(v, dtype=float) for v in self.data]
        for k, v in enumerate(self.data):
            n = self.first_level + k
            expected = (self.tree.node_count(n), self.disc.M)
            if v.shape != expected:
                raise UsageError(f"field level {n} has shape {v.shape}, expected {expected}")

    @property
    def levels(self) -> range:
        return range(self.first_level, self.first_level + len(self.data))

    def level(self, n: int) -> np.ndarray:
        if n not in self.levels:
            raise UsageError(f"field has no level {n} (stored {self.levels.start}..{self.levels.stop - 1})")
        return self.data[n - self.first_level]

    def sup_norm(self) -> float:
        return max((float(np.max(np.abs(v))) for v in self.data), default=0.0)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.data)

    def scaled(self, lam: float) -> "AdaptedField":
        return AdaptedField(self.tree, self.disc, [lam * v for v in self.data], self.first_level)

    def restricted(self, levels: range) -> "AdaptedField":
        return AdaptedField(self.tree, self.disc, [self.level(n) for n in levels], levels.start)

    def is_deterministic(self) -> bool:
        return all(np.all(v == v[:1]) for v in self.data)

    @classmethod
    def zeros(cls, tree: ScenarioTree, disc: Discretization, levels: Optional[range] = None) -> "AdaptedField":
        levels = levels if levels is not None else range(tree.levels + 1)
        return cls(tree, disc, [np.zeros((tree.node_count(n), disc.M)) for n in levels], levels.start)

    @classmethod
    def from_function(cls, tree: ScenarioTree, disc: Discretization, fn: Callable,
                      levels: Optional[range] = None) -> "AdaptedField":
        """Evaluate ``fn(t, W, x)`` with broadcasting: t scalar, W column of node values, x grid row."""
        levels = levels if levels is not None else range(tree.levels + 1)
        data = []
        for n in levels:
            W = tree.brownian(n)[:, None]
            vals = np.broadcast_to(fn(n * tree.dt, W, disc.grid[None, :]), (tree.node_count(n), disc.M))
            data.append(np.array(vals, dtype=float))
        return cls(tree, disc, data, levels.start)

    @classmethod
    def deterministic(cls, tree: ScenarioTree, disc: Discretization, profile,
                      levels: Optional[range] = None) -> "AdaptedField":
        """Same spatial profile on every node; ``profile`` is (M,) or one row per stored level."""
        levels = levels if levels is not None else range(tree.levels + 1)
        profile = np.asarray(profile, dtype=float)
        rows = [profile] * len(levels) if profile.ndim == 1 else list(profile)
        if len(rows) != len(levels):
            raise UsageError(f"profile has {len(rows)} rows for {len(levels)} levels")
        return cls(tree, disc, [np.tile(r, (tree.node_count(n), 1)) for n, r in zip(levels, rows)], levels.start)


@dataclass
class CoefficientSet:
    alpha: AdaptedField
    beta: AdaptedField

    @classmethod
    def zero(cls, tree: ScenarioTree, disc: Discretization) -> "CoefficientSet":
        steps = range(tree.levels)
        return cls(AdaptedField.zeros(tree, disc, steps), AdaptedField.zeros(tree, disc, steps))

    @property
    def alpha_sup(self) -> float:
        return self.alpha.sup_norm()

    @property
    def beta_sup(self) -> float:
        return self.beta.sup_norm()

    @property
    def K(self) -> float:
        """Growth rate ||alpha||_inf + ||beta||_inf^2."""
        return self.alpha_sup + self.beta_sup**2

    def shifted(self, shift: float) -> "CoefficientSet":
        alpha = AdaptedField(self.alpha.tree, self.alpha.disc, [a + shift for a in self.alpha.data],
                             self.alpha.first_level)
        return CoefficientSet(alpha, self.beta)


@dataclass
class ProblemData:
    yT: np.ndarray
    F: AdaptedField

    @classmethod
    def zero(cls, tree: ScenarioTree, disc: Discretization) -> "ProblemData":
        return cls(np.zeros((tree.node_count(tree.levels), disc.M)), AdaptedField.zeros(tree, disc, range(tree.levels)))

    def scaled(self, lam: float) -> "ProblemData":
        return ProblemData(lam * np.asarray(self.yT), self.F.scaled(lam))

    def sup_norms(self) -> tuple[float, float]:
        F_sup = max((float(np.max(np.abs(self.F.level(n)))) for n in range(self.F.tree.levels)), default=0.0)
        return float(np.max(np.abs(self.yT))), F_sup


@dataclass
class BSPDESolution:
    tree: ScenarioTree
    disc: Discretization
    y: AdaptedField
    Y: AdaptedField
    solve_residuals: np.ndarray

    @property
    def dt(self) -> float:
        return self.tree.dt

    @property
    def max_solve_residual(self) -> float:
        return float(np.max(self.solve_residuals)) if self.solve_residuals.size else 0.0


def _check_shapes(tree, disc, coeffs: CoefficientSet, data: ProblemData) -> None:
    for name, fld in (("alpha", coeffs.alpha), ("beta", coeffs.beta), ("F", data.F)):
        if fld.tree != tree or fld.disc != disc:
            raise UsageError(f"{name} was built on a different tree or grid")
        missing = [n for n in range(tree.levels) if n not in fld.levels]
        if missing:
            raise UsageError(f"{name} is missing levels {missing}")
    expected = (tree.node_count(tree.levels), disc.M)
    if np.shape(data.yT) != expected:
        raise UsageError(f"yT has shape {np.shape(data.yT)}, expected {expected}")


def check_stability(tree: ScenarioTree, disc: Discretization, coeffs: CoefficientSet) -> None:
    dt = tree.dt
    if dt * coeffs.beta_sup**2 >= 1:
        raise ConfigurationError(
            f"dt * ||beta||_inf^2 = {dt * coeffs.beta_sup**2:.4g} >= 1; "
            f"use more time levels (need levels > {tree.horizon * coeffs.beta_sup**2:.4g})"
        )
    alpha_max = max((float(np.max(a)) for a in coeffs.alpha.data), default=0.0)
    lam1 = -float(disc.eigenvalues()[0])
    if dt * alpha_max >= 1 + dt * lam1:
        raise ConfigurationError(
            f"implicit step matrix is not positive definite (dt * max alpha = {dt * alpha_max:.4g}); "
            "use more time levels"
        )


def step_matrix_diag(disc: Discretization, dt: float, alpha_n: np.ndarray) -> tuple[np.ndarray, float]:
    """Diagonal and off-diagonal of I - dt (Lap + alpha_n)."""
    return 1.0 + 2.0 * dt / disc.h**2 - dt * alpha_n, -dt / disc.h**2


def solve_linear(tree: ScenarioTree, disc: Discretization, coeffs: CoefficientSet, data: ProblemData) -> BSPDESolution:
    _check_shapes(tree, disc, coeffs, data)
    if not (np.all(np.isfinite(data.yT)) and data.F.is_finite() and coeffs.alpha.is_finite()
            and coeffs.beta.is_finite()):
        raise DataError("coefficients and data must be finite")
    check_stability(tree, disc, coeffs)

    N, dt, sq = tree.levels, tree.dt, tree.sqrt_dt
    y = [None] * (N + 1)
    Y = [None] * N
    y[N] = np.array(data.yT, dtype=float)
    residuals = np.zeros(N)
    for n in range(N - 1, -1, -1):
        up, down = tree.children(n)
        nxt = y[n + 1]
        Y[n] = (nxt[up] - nxt[down]) / (2.0 * sq)
        m = 0.5 * (nxt[up] + nxt[down])
        rhs = m + dt * (coeffs.beta.level(n) * Y[n] + data.F.level(n))
        diag, off = step_matrix_diag(disc, dt, coeffs.alpha.level(n))
        y[n] = solve_tridiagonal(diag, off, rhs)
        res = tridiagonal_apply(diag, off, y[n]) - rhs
        residuals[n] = float(np.max(np.abs(res))) / max(1.0, float(np.max(np.abs(rhs))))
    return BSPDESolution(
        tree, disc, AdaptedField(tree, disc, y), AdaptedField(tree, disc, Y), residuals
    )


def drift(sol: BSPDESolution, n: int, coeffs: CoefficientSet, source: np.ndarray) -> np.ndarray:
    """Lap y_n + alpha_n y_n + beta_n Y_n + source at level n."""
    yn = sol.y.level(n)
    return apply_laplacian(sol.disc, yn) + coeffs.alpha.level(n) * yn + coeffs.beta.level(n) * sol.Y.level(n) + source


def weak_form_residual(sol: BSPDESolution, coeffs: CoefficientSet, sources: Sequence[np.ndarray]) -> np.ndarray:
    """Per-step max of |y_{n+1} - y_n + dt * drift_n - Y_n dW_n| over children and grid points.

    Summed over steps this bounds, for every scenario and every grid test
    vector normalised in the discrete l^1 sense, the telescoped weak
    formulation defect from any level to the terminal time.
    """
    tree = sol.tree
    out = np.zeros(tree.levels)
    for n in range(tree.levels):
        up, down = tree.children(n)
        yn, Yn = sol.y.level(n), sol.Y.level(n)
        d = drift(sol, n, coeffs, sources[n])
        nxt = sol.y.level(n + 1)
        r_up = nxt[up] - yn + tree.dt * d - Yn * tree.sqrt_dt
        r_down = nxt[down] - yn + tree.dt * d + Yn * tree.sqrt_dt
        scale = max(1.0, float(np.max(np.abs(nxt))))
        out[n] = max(float(np.max(np.abs(r_up))), float(np.max(np.abs(r_down)))) / scale
    return out

