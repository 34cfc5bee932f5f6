"""Exhaustive binomial model of a one-dimensional Brownian driver.

Every level ``n`` holds the nodes reachable after ``n`` coin flips.  Two
storage layouts are supported:

* recombining: node ``k`` at level ``n`` is "k down moves", ``n + 1`` nodes,
  children of ``k`` are ``k`` (up) and ``k + 1`` (down);
* full: node ``i`` at level ``n`` encodes the whole sign history in its bits
  (most significant bit first, 0 = up), ``2**n`` nodes, children of ``i`` are
  ``2i`` (up) and ``2i + 1`` (down).

Conditional expectations are pairwise averages of children, so every
expectation on the tree is a finite dyadic sum with no sampling error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ResourceLimitError, UsageError

FULL_TREE_CAP = 16
PATH_ENUMERATION_CAP = 20


@dataclass(frozen=True)
class ScenarioTree:
    levels: int
    horizon: float
    recombining: bool = True
    cap: int = FULL_TREE_CAP

    def __post_init__(self):
        if int(self.levels) != self.levels or self.levels < 1:
            raise UsageError(f"levels must be an integer >= 1, got {self.levels}")
        if not self.horizon > 0:
            raise UsageError(f"horizon must be positive, got {self.horizon}")
        if not self.recombining and self.levels > self.cap:
            raise ResourceLimitError(
                f"full tree with {self.levels} levels exceeds the cap of {self.cap} "
                f"levels (2**{self.cap} leaves); use recombining=True or raise the cap"
            )

    @property
    def dt(self) -> float:
        return self.horizon / self.levels

    @property
    def sqrt_dt(self) -> float:
        return math.sqrt(self.dt)

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.levels + 1)

    def node_count(self, level: int) -> int:
        self._check_level(level)
        return level + 1 if self.recombining else 2**level

    def _check_level(self, level: int) -> None:
        if not 0 <= level <= self.levels:
            raise UsageError(f"level {level} outside 0..{self.levels}")

    def down_moves(self, level: int) -> np.ndarray:
        """Number of down moves on the path to each node."""
        n = self.node_count(level)
        if self.recombining:
            return np.arange(n)
        idx = np.arange(n, dtype=np.int64)
        count = np.zeros(n, dtype=np.int64)
        for bit in range(level):
            count += (idx >> bit) & 1
        return count

    def brownian(self, level: int) -> np.ndarray:
        """Value of W(t_level) at every node."""
        return self.sqrt_dt * (level - 2 * self.down_moves(level)).astype(float)

    def weights(self, level: int) -> list[int]:
        """Integer path counts per node; probabilities are weights / 2**level."""
        if self.recombining:
            return [math.comb(level, k) for k in range(level + 1)]
        return [1] * (2**level)

    def probabilities(self, level: int) -> np.ndarray:
        return np.array(self.weights(level), dtype=float) / 2.0**level

    def children(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices (up, down) at ``level + 1`` of the children of each node."""
        if not 0 <= level < self.levels:
            raise UsageError(f"level {level} has no children (levels={self.levels})")
        idx = np.arange(self.node_count(level))
        if self.recombining:
            return idx, idx + 1
        return 2 * idx, 2 * idx + 1

    def increments(self, level: int) -> np.ndarray:
        """W(t_{level+1}) - W(t_level) at each child node of ``level + 1``."""
        self._check_level(level + 1)
        if self.recombining:
            raise UsageError("increments per child are only defined on a full tree")
        sign = np.where(np.arange(2 ** (level + 1)) % 2 == 0, 1.0, -1.0)
        return self.sqrt_dt * sign

    def full(self) -> "ScenarioTree":
        """The full-storage twin of this tree."""
        if not self.recombining:
            return self
        return ScenarioTree(self.levels, self.horizon, recombining=False, cap=self.cap)

    def lift(self, values: np.ndarray, level: int) -> np.ndarray:
        """Re-index node values of a recombining tree onto the full twin."""
        values = np.asarray(values)
        if not self.recombining:
            return values
        return values[self.full().down_moves(level)]

    def paths(self) -> tuple[np.ndarray, np.ndarray]:
        """All paths as node indices per level, shape (paths, levels + 1), and their probabilities."""
        N = self.levels
        if N > PATH_ENUMERATION_CAP:
            raise ResourceLimitError(
                f"path enumeration over {N} levels exceeds the cap of {PATH_ENUMERATION_CAP}"
            )
        leaves = np.arange(2**N, dtype=np.int64)
        idx = np.empty((2**N, N + 1), dtype=np.int64)
        for n in range(N + 1):
            prefix = leaves >> (N - n)
            if self.recombining:
                downs = np.zeros_like(prefix)
                for bit in range(n):
                    downs += (prefix >> bit) & 1
                idx[:, n] = downs
            else:
                idx[:, n] = prefix
        probs = np.full(2**N, 2.0**-N)
        return idx, probs


def build_tree(levels: int, horizon: float, recombining: bool = True, cap: int = FULL_TREE_CAP) -> ScenarioTree:
    return ScenarioTree(levels, horizon, recombining, cap)


@dataclass(frozen=True)
class AdaptedRV:
    """Random variable measurable with respect to the sigma-algebra at ``level``.

    ``values`` has the node axis first; any trailing axes (e.g. space) are
    carried along by every operation.
    """

    level: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


def _check_rv(x: AdaptedRV, tree: ScenarioTree) -> None:
    expected = tree.node_count(x.level)
    if x.values.shape[:1] != (expected,):
        raise UsageError(
            f"random variable at level {x.level} has {x.values.shape[:1]} nodes, expected {expected}"
        )


def condexp_step(values: np.ndarray, level: int, tree: ScenarioTree) -> np.ndarray:
    """E[X | F_level] for X given at ``level + 1``: average of the two children."""
    up, down = tree.children(level)
    return 0.5 * (values[up] + values[down])


def condexp(x: AdaptedRV, target: int, tree: ScenarioTree) -> AdaptedRV:
    """Exact conditional expectation of ``x`` onto the sigma-algebra at ``target``."""
    if target > x.level:
        raise UsageError(f"cannot condition a level-{x.level} variable on level {target} > {x.level}")
    if target < 0:
        raise UsageError(f"target level must be >= 0, got {target}")
    _check_rv(x, tree)
    values = x.values
    for level in range(x.level - 1, target - 1, -1):
        values = condexp_step(values, level, tree)
    return AdaptedRV(target, values)


def expectation(x: AdaptedRV, tree: ScenarioTree) -> np.ndarray | float:
    """E[X]; reduces by repeated child averaging so the tower property is exact."""
    value = condexp(x, 0, tree).values[0]
    return float(value) if np.ndim(value) == 0 else value


def ito_partial_sums(integrand: list[AdaptedRV], tree: ScenarioTree) -> list[AdaptedRV]:
    """Partial sums S_n = sum_{k<n} Z_k (W_{k+1} - W_k), n = 0..N, on the full twin of ``tree``.

    On a recombining tree the integral is path dependent, so the integrand
    is lifted onto full storage (subject to the full-tree cap).
    """
    N = tree.levels
    if len(integrand) != N:
        raise UsageError(f"integrand needs {N} entries Z_0..Z_{N - 1}, got {len(integrand)}")
    for n, z in enumerate(integrand):
        if z.level != n:
            raise UsageError(f"integrand entry {n} lives at level {z.level}, expected {n}")
        _check_rv(z, tree)
    full = tree.full()
    trailing = integrand[0].values.shape[1:]
    sums = [AdaptedRV(0, np.zeros((1,) + trailing))]
    for n, z in enumerate(integrand):
        zf = tree.lift(z.values, n)
        up, down = full.children(n)
        nxt = np.empty((full.node_count(n + 1),) + trailing)
        s = sums[-1].values
        nxt[up] = s + zf * full.sqrt_dt
        nxt[down] = s - zf * full.sqrt_dt
        sums.append(AdaptedRV(n + 1, nxt))
    return sums


def ito_integral(integrand: list[AdaptedRV], tree: ScenarioTree) -> AdaptedRV:
    """Discrete stochastic integral sum_n Z_n (W_{n+1} - W_n) as a leaf variable of the full twin."""
    return ito_partial_sums(integrand, tree)[-1]


def check_martingale(process: list[AdaptedRV], tree: ScenarioTree) -> float:
    """Max |E[X_{n+1} | F_n] - X_n| over consecutive levels and nodes."""
    worst = 0.0
    for prev, nxt in zip(process[:-1], process[1:]):
        if nxt.level != prev.level + 1:
            raise UsageError("process must be given on consecutive levels")
        dev = condexp(nxt, prev.level, tree).values - prev.values
        if dev.size:
            worst = max(worst, float(np.max(np.abs(dev))))
    return worst


def brownian_process(tree: ScenarioTree) -> list[AdaptedRV]:
    return [AdaptedRV(n, tree.brownian(n)) for n in range(tree.levels + 1)]
