"""Classical adaptive separation: recursive least squares PCA and EASI.

Both algorithms maintain a separating matrix W (l x m) whose transpose maps
observations to source estimates, y(t) = W(t)' x(t). RLS additionally
carries G(t), the running inverse of the exponentially weighted output
autocorrelation, updated through the matrix inversion lemma so no explicit
inverse is ever formed.

Every step function is pure: it returns fresh arrays and never mutates its
inputs, so identical (state, input, config) triples give bitwise-identical
results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalFailureError, SingularStatisticsError
from .evaluate import RunRecord, squared_errors
from .model import MixtureInstance

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class Nonlinearity:
    """Elementwise odd nonlinearity g applied to the output vector.

    ``tanh`` computes tanh(scale * s); the scale is named separately from
    any forgetting factor to avoid overloading symbols.
    """

    kind: str  # "linear" | "cubic" | "tanh"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "cubic", "tanh"):
            raise ConfigError(f"unknown nonlinearity {self.kind!r}")
        if self.kind == "tanh" and self.scale <= 0:
            raise ConfigError("tanh scale must be positive")

    def __call__(self, v: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return v
        if self.kind == "cubic":
            return v**3
        return np.tanh(self.scale * v)


LINEAR = Nonlinearity("linear")
CUBIC = Nonlinearity("cubic")
TANH = Nonlinearity("tanh")


@dataclass
class InitSpec:
    """Initial separator state: W(0) defaults to the first m columns of the
    l x l identity, G(0) to I/delta (standard RLS regularization)."""

    delta: float = 0.01
    w0: np.ndarray | None = None

    def w_init(self, l: int, m: int) -> np.ndarray:
        if self.w0 is not None:
            w0 = np.asarray(self.w0, dtype=float)
            if w0.shape != (l, m):
                raise ConfigError(f"w0 has shape {w0.shape}, expected {(l, m)}")
            return w0.copy()
        return np.eye(l, m)

    def g_init(self, m: int) -> np.ndarray:
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        return np.eye(m) / self.delta


@dataclass
class SeparatorState:
    """Current separator: W is l x m; G (m x m) is only tracked by RLS."""

    W: np.ndarray
    G: np.ndarray | None = None


@dataclass(frozen=True)
class RlsConfig:
    beta: float = 0.99
    nonlinearity: Nonlinearity = LINEAR
    init: InitSpec = field(default_factory=InitSpec)

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"forgetting factor must lie in (0, 1], got {self.beta}")


@dataclass(frozen=True)
class EasiConfig:
    """EASI settings; ``step_size`` is a fixed scalar or a per-step table.

    A zero step size is accepted as the degenerate no-op (useful as a
    control), negative steps are rejected.
    """

    step_size: float | tuple[float, ...] = 0.01
    nonlinearity: Nonlinearity = CUBIC
    init: InitSpec = field(default_factory=InitSpec)

    def __post_init__(self):
        if self.nonlinearity.kind == "linear":
            raise ConfigError("EASI requires a nonlinear g (cubic or tanh)")
        steps = np.atleast_1d(np.asarray(self.step_size, dtype=float))
        if np.any(steps < 0):
            raise ConfigError("step sizes must be >= 0")

    def step_at(self, t: int) -> float:
        if np.isscalar(self.step_size):
            return float(self.step_size)
        table = self.step_size
        if t >= len(table):
            raise ConfigError(f"step-size table of length {len(table)} exhausted at t={t}")
        return float(table[t])


def initial_state(cfg: RlsConfig | EasiConfig, l: int, m: int) -> SeparatorState:
    W = cfg.init.w_init(l, m)
    G = cfg.init.g_init(m) if isinstance(cfg, RlsConfig) else None
    return SeparatorState(W=W, G=G)


def rls_step(state: SeparatorState, x: np.ndarray, cfg: RlsConfig
             ) -> tuple[SeparatorState, np.ndarray, np.ndarray]:
    """One RLS-for-PCA update; returns (new state, output y, residual e).

    Update lines (g is the configured nonlinearity, identity for linear):

        y = g(W' x);  h = G y;  f = h / (beta + y' h)
        G <- (G - f h') / beta
        e = x - W y;  W <- W + e f'
    """
    W, G = state.W, state.G
    with np.errstate(all="ignore"):  # divergence is reported via the check below
        y = cfg.nonlinearity(W.T @ x)
        h = G @ y
        f = h / (cfg.beta + y @ h)
        G_new = (G - np.outer(f, h)) / cfg.beta
        e = x - W @ y
        W_new = W + np.outer(e, f)
    if not (np.isfinite(G_new).all() and np.isfinite(W_new).all()):
        raise NumericalFailureError("non-finite value in RLS update")
    return SeparatorState(W=W_new, G=G_new), y, e


def relative_gradient(y: np.ndarray, nonlinearity: Nonlinearity) -> np.ndarray:
    """EASI update function H(y) = y y' - I + g(y) y' - y g(y)'."""
    gy = nonlinearity(y)
    return np.outer(y, y) - np.eye(y.shape[0]) + np.outer(gy, y) - np.outer(y, gy)


def easi_step(W: np.ndarray, y: np.ndarray, cfg: EasiConfig, t: int = 0) -> np.ndarray:
    """One EASI update of the separator.

    The update acts in the output space, W <- W - lambda * W H(y)'. This is
    the transposed form of the classical serial update B <- B - lambda H B
    for B = W' (the convention that makes y = W' x), so for square W it is
    the standard equivariant update; the relative change depends on W only
    through y.
    """
    lam = cfg.step_at(t)
    with np.errstate(all="ignore"):  # divergence is reported via the check below
        H = relative_gradient(y, cfg.nonlinearity)
        W_new = W - lam * (W @ H.T)
    if not np.isfinite(W_new).all():
        raise NumericalFailureError("non-finite value in EASI update")
    return W_new


def rls_run(instance: MixtureInstance, cfg: RlsConfig,
            algorithm: str = "rls", config_digest: str = "") -> RunRecord:
    """Apply :func:`rls_step` over the columns of X in order."""
    state = initial_state(cfg, instance.l, instance.m)
    y_seq = np.empty((instance.m, instance.T))
    for t in range(instance.T):
        try:
            state, y, _ = rls_step(state, instance.X[:, t], cfg)
        except NumericalFailureError as err:
            err.step = t
            raise
        y_seq[:, t] = y
    return RunRecord(
        y_seq=y_seq,
        sq_errors=squared_errors(y_seq, instance.S),
        algorithm=algorithm,
        config_digest=config_digest,
        final_state=state,
    )


def easi_run(instance: MixtureInstance, cfg: EasiConfig,
             algorithm: str = "easi", config_digest: str = "") -> RunRecord:
    """Apply :func:`easi_step` over X; y(t) uses the pre-update W(t)."""
    W = cfg.init.w_init(instance.l, instance.m)
    y_seq = np.empty((instance.m, instance.T))
    for t in range(instance.T):
        y = W.T @ instance.X[:, t]
        y_seq[:, t] = y
        try:
            W = easi_step(W, y, cfg, t)
        except NumericalFailureError as err:
            err.step = t
            raise
    return RunRecord(
        y_seq=y_seq,
        sq_errors=squared_errors(y_seq, instance.S),
        algorithm=algorithm,
        config_digest=config_digest,
        final_state=SeparatorState(W=W),
    )


@dataclass
class OracleStats:
    """Directly accumulated weighted correlation statistics (test oracle).

    C_y(t) = sum_i beta^(t-i) y(i) y(i)', C_xy(t) likewise with x(i) y(i)'.
    Initializing C_y with G(0)^-1 and C_xy with W(0) G(0)^-1 accounts for the
    recursion's regularized start, making the closed form match it exactly.
    """

    C_y: np.ndarray
    C_xy: np.ndarray

    @classmethod
    def zeros(cls, m: int, l: int) -> "OracleStats":
        return cls(C_y=np.zeros((m, m)), C_xy=np.zeros((l, m)))

    @classmethod
    def from_init(cls, init: InitSpec, m: int, l: int) -> "OracleStats":
        C_y0 = init.delta * np.eye(m)
        return cls(C_y=C_y0, C_xy=init.w_init(l, m) @ C_y0)

    def update(self, x: np.ndarray, y: np.ndarray, beta: float) -> None:
        self.C_y = beta * self.C_y + np.outer(y, y)
        self.C_xy = beta * self.C_xy + np.outer(x, y)


def closed_form_w(stats: OracleStats) -> np.ndarray:
    """Least-squares optimal separator for the accumulated statistics.

    Solves the normal equations of sum_i beta^(t-i) ||x(i) - W y(i)||^2,
    i.e. W = C_xy C_y^-1, oriented so that y = W' x remains consistent.
    """
    if np.linalg.cond(stats.C_y) > _COND_LIMIT:
        raise SingularStatisticsError(
            f"C_y condition number exceeds {_COND_LIMIT:g}")
    return np.linalg.solve(stats.C_y, stats.C_xy.T).T
