"""Finite differences on (0, length) with homogeneous Dirichlet ends.

Vectors hold interior values only; all routines act on the last axis so
they can be applied to a whole tree level (nodes x points) at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class Discretization:
    interior_points: int
    length: float = 1.0
    control_interval: tuple[float, float] = (0.3, 0.6)

    def __post_init__(self):
        if int(self.interior_points) != self.interior_points or self.interior_points < 2:
            raise UsageError(f"need at least 2 interior points, got {self.interior_points}")
        if not self.length > 0:
            raise UsageError(f"length must be positive, got {self.length}")
        a, b = self.control_interval
        if not 0 <= a < b <= self.length:
            raise UsageError(f"control interval {self.control_interval} must satisfy 0 <= a < b <= length")
        object.__setattr__(self, "control_interval", (float(a), float(b)))

    @property
    def M(self) -> int:
        return self.interior_points

    @property
    def h(self) -> float:
        return self.length / (self.interior_points + 1)

    @cached_property
    def grid(self) -> np.ndarray:
        return self.h * np.arange(1, self.interior_points + 1)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.full(self.interior_points, self.h)

    @cached_property
    def control_mask(self) -> np.ndarray:
        a, b = self.control_interval
        return (self.grid > a) & (self.grid < b)

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the discrete Laplacian, k = 1..M (all negative)."""
        k = np.arange(1, self.interior_points + 1)
        return -(4.0 / self.h**2) * np.sin(k * math.pi * self.h / (2 * self.length)) ** 2

    def sine_mode(self, k: int = 1) -> np.ndarray:
        return np.sin(k * math.pi * self.grid / self.length)

    def laplacian_matrix(self) -> np.ndarray:
        M, h2 = self.interior_points, self.h**2
        return (np.diag(np.full(M - 1, 1.0), -1) - 2.0 * np.eye(M) + np.diag(np.full(M - 1, 1.0), 1)) / h2


def _check_length(d: Discretization, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != (d.interior_points,):
        raise UsageError(f"vector has trailing length {v.shape[-1:]}, expected {d.interior_points}")
    return v


def apply_laplacian(d: Discretization, v: np.ndarray) -> np.ndarray:
    v = _check_length(d, v)
    out = -2.0 * v
    out[..., 1:] += v[..., :-1]
    out[..., :-1] += v[..., 1:]
    return out / d.h**2


def forward_differences(d: Discretization, v: np.ndarray) -> np.ndarray:
    """(v_{j+1} - v_j) / h for j = 0..M, with the zero boundary values included."""
    v = _check_length(d, v)
    pad = np.zeros(v.shape[:-1] + (1,))
    return np.diff(np.concatenate([pad, v, pad], axis=-1), axis=-1) / d.h


def inner(d: Discretization, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.sum(np.asarray(u) * np.asarray(v), axis=-1) * d.h


def lp_norm(v: np.ndarray, p: float, d: Discretization) -> np.ndarray:
    """Discrete L^p norm over the interior points (p = inf gives the max)."""
    v = _check_length(d, v)
    if p == math.inf:
        return np.max(np.abs(v), axis=-1)
    if not p >= 1:
        raise UsageError(f"L^p norm needs p >= 1, got {p}")
    return lp_power(v, p, d) ** (1.0 / p)


def lp_power(v: np.ndarray, p: float, d: Discretization) -> np.ndarray:
    """sum_j h |v_j|^p, i.e. the p-th power of the L^p norm."""
    return np.sum(np.abs(v) ** p, axis=-1) * d.h


def h1_seminorm(v: np.ndarray, d: Discretization) -> np.ndarray:
    return np.sqrt(h1_seminorm_sq(v, d))


def h1_seminorm_sq(v: np.ndarray, d: Discretization) -> np.ndarray:
    return np.sum(forward_differences(d, v) ** 2, axis=-1) * d.h


def solve_tridiagonal(diag: np.ndarray, off: float, rhs: np.ndarray) -> np.ndarray:
    """Batched Thomas algorithm for symmetric tridiagonal systems.

    ``diag`` and ``rhs`` have shape (..., M); the off-diagonal entries are the
    constant ``off``.  No pivoting: callers guarantee diagonal dominance or
    positive definiteness.
    """
    diag = np.asarray(diag, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    diag, rhs = np.broadcast_arrays(diag, rhs)
    M = diag.shape[-1]
    c = np.empty_like(diag)
    d = np.empty_like(rhs)
    c[..., 0] = off / diag[..., 0]
    d[..., 0] = rhs[..., 0] / diag[..., 0]
    for j in range(1, M):
        denom = diag[..., j] - off * c[..., j - 1]
        c[..., j] = off / denom
        d[..., j] = (rhs[..., j] - off * d[..., j - 1]) / denom
    x = np.empty_like(rhs)
    x[..., M - 1] = d[..., M - 1]
    for j in range(M - 2, -1, -1):
        x[..., j] = d[..., j] - c[..., j] * x[..., j + 1]
    return x


def tridiagonal_apply(diag: np.ndarray, off: float, x: np.ndarray) -> np.ndarray:
    out = diag * x
    out[..., 1:] += off * x[..., :-1]
    out[..., :-1] += off * x[..., 1:]
    return out
