"""Training losses: sequence MSE, scalar-feasibility regularization, and a
generalized Stein unbiased risk estimate.

All losses are built from tape operations so they are differentiable with
respect to every network parameter through the unrolled forward pass.

The risk estimate deserves a note. For observations x = A s + n with known
square full-rank A and i.i.d. Gaussian noise of variance sigma^2, the
per-step surrogate implemented here is

    l(t) = ||P y(t)||^2 + 2 sigma^2 Tr(W(t) A^+) - 2 y(t)' A^+ x(t),

where P projects onto the range of A (the identity, up to rounding, in the
square full-rank case) and A^+ is the pseudoinverse. Its expectation over
the noise equals E||P s - P y||^2 - ||P s||^2 for any fixed linear
estimator y = W' x: the correction term must be the divergence of the
estimator with respect to the *whitened sufficient statistic* of x, which
for a linear estimator is Tr(W A^+), not the plain divergence Tr(W). The
plain rule Tr(W) (see :func:`divergence_linear`, which is the correct
x-space divergence of x -> W' x) makes the estimate biased whenever
A != I; it is kept available via ``div_mode="plain"`` for comparison, while
the default ``div_mode="gsure"`` is unbiased. Both coincide when A = I.

The constant E||P s||^2 is parameter-free and therefore dropped, so loss
values are offset from the true risk by that constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import TapeValue
from .errors import ConfigError, DimensionError, RankDeficientError

LOSS_KINDS = ("mse", "regularized_mse", "sure")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "mse"
    penalty_weight: float = 10.0  # weight of the feasibility penalty
    div_mode: str = "gsure"       # "gsure" (unbiased) or "plain"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}, choose from {LOSS_KINDS}")
        if self.penalty_weight < 0:
            raise ConfigError("penalty_weight must be >= 0")
        if self.div_mode not in ("gsure", "plain"):
            raise ConfigError(f"unknown div_mode {self.div_mode!r}")


def mse_loss(y_seq: list[TapeValue], s_seq: np.ndarray) -> TapeValue:
    """Sum over time of ||s(t) - y(t)||^2 as a tape scalar."""
    s_seq = np.asarray(s_seq, dtype=float)
    if s_seq.ndim != 2 or s_seq.shape[1] != len(y_seq):
        raise DimensionError(
            f"sources have shape {s_seq.shape}, expected (m, {len(y_seq)})")
    if not y_seq:
        raise DimensionError("empty output sequence")
    tape = y_seq[0].tape
    total = None
    for t, y in enumerate(y_seq):
        if y.value.shape != (s_seq.shape[0],):
            raise DimensionError(f"y({t}) has shape {y.value.shape}")
        term = ag.sqnorm(ag.sub(y, tape.constant(s_seq[:, t])))
        total = term if total is None else ag.add(total, term)
    return total


def regularized_loss(y_seq: list[TapeValue], s_seq: np.ndarray,
                     scalars: list[TapeValue], penalty_weight: float) -> TapeValue:
    """MSE plus ReLU feasibility penalties keeping each scalar in [0, 1].

    Adds penalty_weight * (relu(-w) + relu(w - 1)) per distinct scalar, so
    a shared scalar is penalized once rather than once per layer.
    """
    if penalty_weight < 0:
        raise ConfigError("penalty_weight must be >= 0")
    total = mse_loss(y_seq, s_seq)
    tape = total.tape
    one = tape.constant(1.0)
    for w in scalars:
        below = ag.relu(ag.scale(w, -1.0))
        above = ag.relu(ag.sub(w, one))
        total = ag.add(total, ag.scale(ag.add(below, above), penalty_weight))
    return total


@dataclass
class SureContext:
    """Fixed quantities of the risk estimate for one mixing matrix."""

    A: np.ndarray
    P: np.ndarray
    A_pinv: np.ndarray
    noise_var: float


def sure_context(A: np.ndarray, noise_var: float) -> SureContext:
    """Projector onto range(A) and pseudoinverse, for full-column-rank A."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DimensionError("A must be a matrix")
    svals = np.linalg.svd(A, compute_uv=False)
    if svals[-1] <= 1e-10 * svals[0]:
        raise RankDeficientError(
            f"mixing matrix is rank deficient (singular values {svals[0]:.3e}..{svals[-1]:.3e})")
    if noise_var < 0:
        raise ConfigError("noise_var must be >= 0")
    A_pinv = np.linalg.pinv(A)
    return SureContext(A=A.copy(), P=A @ A_pinv, A_pinv=A_pinv, noise_var=float(noise_var))


def divergence_linear(W: TapeValue) -> TapeValue:
    """Divergence of the linear map x -> W' x, which equals Tr(W).

    Only defined for square W; the l > m case has no such shortcut and is
    rejected upstream.
    """
    return ag.trace(W)


def sure_loss(y_seq: list[TapeValue], x_seq: np.ndarray, w_seq: list[TapeValue],
              ctx: SureContext, div_mode: str = "gsure") -> TapeValue:
    """Risk surrogate summed over time; needs A and sigma^2 but never s.

    Requires the square (l == m) measurement case; see the module
    docstring for the divergence-term convention selected by ``div_mode``.
    """
    x_seq = np.asarray(x_seq, dtype=float)
    l = ctx.A.shape[0]
    if ctx.A.shape[0] != ctx.A.shape[1]:
        raise DimensionError(
            f"risk surrogate requires a square mixing matrix, got {ctx.A.shape}; "
            "with more sensors than sources the Tr(W)-style divergence shortcut "
            "does not apply")
    if len(y_seq) != len(w_seq) or x_seq.shape != (l, len(y_seq)):
        raise DimensionError("y_seq, w_seq and x_seq lengths disagree")
    if not y_seq:
        raise DimensionError("empty output sequence")
    if div_mode not in ("gsure", "plain"):
        raise ConfigError(f"unknown div_mode {div_mode!r}")
    tape = y_seq[0].tape
    proj = tape.constant(ctx.P)
    pinv = tape.constant(ctx.A_pinv)
    total = None
    for t, (y, w) in enumerate(zip(y_seq, w_seq)):
        if w.value.shape != (l, l):
            raise DimensionError(f"W({t}) has shape {w.value.shape}, expected {(l, l)}")
        fit = ag.sqnorm(ag.matmul(proj, y))
        div = divergence_linear(w) if div_mode == "plain" else ag.trace(ag.matmul(w, pinv))
        term = ag.sub(ag.add(fit, ag.scale(div, 2.0 * ctx.noise_var)),
                      ag.scale(ag.matmul(y, tape.constant(ctx.A_pinv @ x_seq[:, t])), 2.0))
        total = term if total is None else ag.add(total, term)
    return total
