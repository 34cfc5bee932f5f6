"""Independent reference computations used by the tests.

Nothing here calls into the solver or control code paths it checks.
"""

import itertools

import numpy as np


def laplacian_dense(M, h):
    return (np.diag(np.ones(M - 1), -1) - 2 * np.eye(M) + np.diag(np.ones(M - 1), 1)) / h**2


def deterministic_backward_heat(M, length, levels, horizon, yT, alpha=None, F=None):
    """Implicit Euler for -y' = Lap y + alpha y + F backward from yT; rows are levels 0..N."""
    h = length / (M + 1)
    dt = horizon / levels
    A = laplacian_dense(M, h)
    alpha = np.zeros((levels, M)) if alpha is None else np.broadcast_to(alpha, (levels, M))
    F = np.zeros((levels, M)) if F is None else np.broadcast_to(F, (levels, M))
    out = np.empty((levels + 1, M))
    out[levels] = yT
    for n in range(levels - 1, -1, -1):
        out[n] = np.linalg.solve(np.eye(M) - dt * (A + np.diag(alpha[n])), out[n + 1] + dt * F[n])
    return out


def sign_paths(levels):
    """All +-1 sequences of the given length, first step first, + before -."""
    return np.array(list(itertools.product([1, -1], repeat=levels)), dtype=float)


def enumerate_ito(levels, dt, integrand):
    """sum_n Z_n(path prefix) dW_n for every path; integrand(n, signs_prefix) -> float."""
    out = []
    for signs in sign_paths(levels):
        total = 0.0
        for n in range(levels):
            total += integrand(n, signs[:n]) * np.sqrt(dt) * signs[n]
        out.append(total)
    return np.array(out)


def full_tree_backward(M, length, levels, horizon, yT, alpha, F):
    """Implicit Euler on the full binomial tree, node by node with dense solves.

    yT: (2**N, M); alpha, F: lists of (2**n, M) per level.  Returns y per level.
    """
    h = length / (M + 1)
    dt = horizon / levels
    A = laplacian_dense(M, h)
    y = [None] * (levels + 1)
    y[levels] = np.asarray(yT, dtype=float)
    for n in range(levels - 1, -1, -1):
        cur = np.empty((2**n, M))
        for i in range(2**n):
            m = 0.5 * (y[n + 1][2 * i] + y[n + 1][2 * i + 1])
            cur[i] = np.linalg.solve(np.eye(M) - dt * (A + np.diag(alpha[n][i])), m + dt * F[n][i])
        y[n] = cur
    return y


def null_control_least_norm(M, length, levels, horizon, yT, alpha, mask):
    """Weighted least-L^2 control driving y(0) to zero, by brute force.

    The response of y(0) to a unit control at each (level, node, grid point)
    is computed with ``full_tree_backward``; weights are dt * 2**-n * h.
    Returns (h as a list per level, y0 response matrix, free state, weights).
    """
    h = length / (M + 1)
    dt = horizon / levels
    zero_F = [np.zeros((2**n, M)) for n in range(levels)]
    c = full_tree_backward(M, length, levels, horizon, yT, alpha, zero_F)[0][0]
    cols, w, index = [], [], []
    for n in range(levels):
        for i in range(2**n):
            for j in np.flatnonzero(mask):
                F = [np.zeros((2**k, M)) for k in range(levels)]
                F[n][i, j] = 1.0
                zero_T = np.zeros((2**levels, M))
                cols.append(full_tree_backward(M, length, levels, horizon, zero_T, alpha, F)[0][0])
                w.append(dt * 2.0**-n * h)
                index.append((n, i, j))
    A = np.array(cols).T
    w = np.array(w)
    sw = np.sqrt(w)
    flat = np.linalg.pinv(A / sw) @ (-c) / sw
    out = [np.zeros((2**n, M)) for n in range(levels)]
    for v, (n, i, j) in zip(flat, index):
        out[n][i, j] = v
    return out, A, c, w


def manufactured_p4_residual(levels_left, dt, b, h, profile):
    """Ito residual at p = 4 for y = (a + b W) profile with alpha = beta = 0.

    A +-sqrt(dt) step of (a + b W) s contributes E[(y + b s dW)^4] - y^4
    - 6 y^2 b^2 s^2 dt = b^4 s^4 dt^2 that the identity does not account for.
    """
    return -levels_left * dt**2 * b**4 * h * np.sum(profile**4)
