"""Independent brute-force references used to check the fast paths.

Nothing here shares code with the implementations under test: the gain
matrix is rebuilt by direct accumulation and a dense solve instead of the
inversion-lemma recursion, gradients and divergences come from central
finite differences, and losses are re-evaluated with plain loops. These
back the test suite and the CLI ``--verify`` reports; they make no
performance claims.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericalFailureError, SingularStatisticsError


@dataclass(frozen=True)
class FiniteDiffSpec:
    """Central-difference step; 1e-5 suits gradients, 1e-6 divergences."""

    step: float = 1e-5

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")


def direct_gain(y_history: np.ndarray, beta: float, G0: np.ndarray) -> np.ndarray:
    """Inverse of beta^t G0^-1 + sum_i beta^(t-i) y(i) y(i)' by direct solve.

    ``y_history`` holds y(1)..y(t) as columns. This is what the recursive
    G(t) must equal after t updates.
    """
    y_history = np.asarray(y_history, dtype=float)
    G0 = np.asarray(G0, dtype=float)
    m = G0.shape[0]
    t = y_history.shape[1] if y_history.size else 0
    if t == 0:
        return G0.copy()
    M = beta**t * np.linalg.inv(G0)
    for i in range(t):
        M += beta ** (t - 1 - i) * np.outer(y_history[:, i], y_history[:, i])
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularStatisticsError(f"accumulated matrix is near singular (cond {cond:.3e})")
    return np.linalg.solve(M, np.eye(m))


def fd_gradient(fn: Callable[[np.ndarray], float], point: np.ndarray,
                spec: FiniteDiffSpec = FiniteDiffSpec(1e-5)) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    point = np.asarray(point, dtype=float)
    grad = np.empty_like(point)
    h = spec.step
    for i in range(point.size):
        shift = np.zeros_like(point)
        shift[i] = h
        hi = fn(point + shift)
        lo = fn(point - shift)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericalFailureError(f"non-finite loss evaluation at coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * h)
    return grad


def fd_divergence(estimator: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                  spec: FiniteDiffSpec = FiniteDiffSpec(1e-6)) -> float:
    """Central-difference divergence sum_i d f_i / d x_i of a vector field."""
    x = np.asarray(x, dtype=float)
    h = spec.step
    total = 0.0
    for i in range(x.size):
        shift = np.zeros_like(x)
        shift[i] = h
        hi = np.asarray(estimator(x + shift), dtype=float)
        lo = np.asarray(estimator(x - shift), dtype=float)
        if not (np.isfinite(hi).all() and np.isfinite(lo).all()):
            raise NumericalFailureError(f"non-finite estimator evaluation at coordinate {i}")
        total += (hi[i] - lo[i]) / (2.0 * h)
    return float(total)


def straight_line_mse(y_seq: np.ndarray, s_seq: np.ndarray) -> float:
    """Plain-loop total squared error; reference for the tape-built MSE."""
    y_seq = np.asarray(y_seq, dtype=float)
    s_seq = np.asarray(s_seq, dtype=float)
    total = 0.0
    for t in range(y_seq.shape[1]):
        for i in range(y_seq.shape[0]):
            diff = s_seq[i, t] - y_seq[i, t]
            total += diff * diff
    return total


def straight_line_mlp(weights, biases, activation: str, v: np.ndarray) -> np.ndarray:
    """Loop-only MLP evaluation; reference for the tape-built forward."""
    out = np.asarray(v, dtype=float).copy()
    last = len(weights) - 1
    for idx, (w, b) in enumerate(zip(weights, biases)):
        nxt = np.empty(w.shape[0])
        for r in range(w.shape[0]):
            acc = b[r]
            for c in range(w.shape[1]):
                acc += w[r, c] * out[c]
            nxt[r] = acc
        if idx < last:
            if activation == "tanh":
                nxt = np.array([np.tanh(z) for z in nxt])
            else:
                nxt = np.array([z if z > 0 else 0.0 for z in nxt])
        out = nxt
    return out


def batch_least_squares(x_seq: np.ndarray, y_seq: np.ndarray) -> np.ndarray:
    """Unweighted batch solve of min_W sum_t ||x(t) - W y(t)||^2."""
    x_seq = np.asarray(x_seq, dtype=float)
    y_seq = np.asarray(y_seq, dtype=float)
    sol, *_ = np.linalg.lstsq(y_seq.T, x_seq.T, rcond=None)
    return sol.T
