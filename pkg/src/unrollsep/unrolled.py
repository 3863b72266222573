"""Trainable unrolled networks built on the classical recursions.

One layer consumes one time sample. Deep RLS repeats the RLS-for-PCA
update with a trainable per-layer forgetting factor and a small MLP in
place of the fixed output nonlinearity; Deep EASI repeats the equivariant
update with a trainable per-layer step size and MLP. With parameter
sharing (the default) a single scalar and a single MLP are reused by every
layer, so the network applies to sequences of any length and gradients
accumulate across layers automatically through tape fan-out.

Freezing the learned pieces at their classical values reproduces the
baseline trajectories bitwise: the layer arithmetic below is expression-
for-expression identical to ``baseline.rls_step`` / ``baseline.easi_step``.
The ``nonlinearity`` field selects an exact bypass ("identity" or "cube")
or the trainable "mlp".
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tape, TapeValue
from .baseline import InitSpec
from .errors import ConfigError, DimensionError, NearSingularGainError, NumericalFailureError

_GAIN_DENOM_EPS = 1e-12
_NONLINEARITIES = ("mlp", "identity", "cube")


@dataclass
class MlpParams:
    """A small fully connected vector-to-vector network.

    Hidden layers use the configured activation, the output layer is
    linear. Input and output width must both equal the source count m.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("weights and biases must be same nonzero length")
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise DimensionError(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionError(f"layer {i}: input width {w.shape[1]} does not chain")
        if self.weights[0].shape[1] != self.weights[-1].shape[0]:
            raise DimensionError("input and output width must both equal m")

    @property
    def width(self) -> int:
        return self.weights[0].shape[1]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.activation)


def identity_mlp(m: int) -> MlpParams:
    """Single linear layer that is exactly the identity map."""
    return MlpParams([np.eye(m)], [np.zeros(m)])


def mlp_identity_init(m: int, hidden: tuple[int, ...] = (8,), activation: str = "tanh",
                      seed: int = 0, gain: float = 0.1) -> MlpParams:
    """Random hidden layers with a final layer chosen so the composition is
    close to the identity for small inputs (tanh(z) ~ z)."""
    rng = np.random.default_rng(seed)
    sizes = [m, *hidden, m]
    weights, biases = [], []
    lin = np.eye(m)
    for fan_out, fan_in in zip(sizes[1:-1], sizes[:-2]):
        w = rng.standard_normal((fan_out, fan_in)) * (gain / np.sqrt(fan_in))
        weights.append(w)
        biases.append(np.zeros(fan_out))
        lin = w @ lin
    weights.append(np.linalg.pinv(lin))
    biases.append(np.zeros(m))
    return MlpParams(weights, biases, activation)


def mlp_cubic_init(m: int, hidden: tuple[int, ...] = (8,), activation: str = "tanh",
                   seed: int = 0, n_fit: int = 256) -> MlpParams:
    """Random hidden layers with the final layer least-squares fitted so the
    network approximates the elementwise cube on [-2, 2]^m."""
    rng = np.random.default_rng(seed)
    sizes = [m, *hidden, m]
    weights, biases = [], []
    for fan_out, fan_in in zip(sizes[1:-1], sizes[:-2]):
        weights.append(rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    V = rng.uniform(-2.0, 2.0, size=(m, n_fit))
    act = np.tanh if activation == "tanh" else lambda z: np.maximum(z, 0.0)
    F = V
    for w, b in zip(weights, biases):
        F = act(w @ F + b[:, None])
    targets = V**3
    h = F.shape[0]
    w_out = targets @ F.T @ np.linalg.inv(F @ F.T + 1e-6 * np.eye(h))
    weights.append(w_out)
    biases.append(np.zeros(m))
    return MlpParams(weights, biases, activation)


def _validate_layers(depth: int, shared: bool, scalars: np.ndarray,
                     nonlinearity: str, mlps: list[MlpParams] | None) -> None:
    if depth < 1:
        raise DimensionError(f"depth must be >= 1, got {depth}")
    if nonlinearity not in _NONLINEARITIES:
        raise ConfigError(f"unknown nonlinearity {nonlinearity!r}")
    expected = 1 if shared else depth
    if scalars.shape != (expected,):
        raise DimensionError(
            f"expected {expected} per-layer scalar(s), got shape {scalars.shape}")
    if nonlinearity == "mlp":
        if mlps is None or len(mlps) != expected:
            raise DimensionError(f"expected {expected} MLP parameter set(s)")
    elif mlps is not None:
        raise ConfigError("bypass nonlinearities take no MLP parameters")


@dataclass
class DeepRlsParams:
    """Trainable parameters of Deep RLS: per-layer forgetting factors plus
    the per-layer output nonlinearity (MLP weights, or an exact bypass)."""

    depth: int
    shared: bool
    forgetting_factors: np.ndarray
    nonlinearity: str = "mlp"
    mlps: list[MlpParams] | None = None

    def __post_init__(self):
        self.forgetting_factors = np.asarray(self.forgetting_factors, dtype=float)
        _validate_layers(self.depth, self.shared, self.forgetting_factors,
                         self.nonlinearity, self.mlps)


@dataclass
class DeepEasiParams:
    """Trainable parameters of Deep EASI: per-layer step sizes plus the
    per-layer update nonlinearity (MLP weights, or an exact bypass)."""

    depth: int
    shared: bool
    step_sizes: np.ndarray
    nonlinearity: str = "mlp"
    mlps: list[MlpParams] | None = None

    def __post_init__(self):
        self.step_sizes = np.asarray(self.step_sizes, dtype=float)
        _validate_layers(self.depth, self.shared, self.step_sizes,
                         self.nonlinearity, self.mlps)


def init_deep_rls(m: int, depth: int, shared: bool = True, forgetting_init: float = 0.99,
                  hidden: tuple[int, ...] = (8,), activation: str = "tanh",
                  nonlinearity: str = "mlp", seed: int = 0) -> DeepRlsParams:
    """Warm-started Deep RLS: MLP near the identity, factors at 0.99."""
    k = 1 if shared else depth
    mlps = None
    if nonlinearity == "mlp":
        base = mlp_identity_init(m, hidden, activation, seed)
        mlps = [base] + [base.copy() for _ in range(k - 1)]
    return DeepRlsParams(depth=depth, shared=shared,
                         forgetting_factors=np.full(k, forgetting_init),
                         nonlinearity=nonlinearity, mlps=mlps)


def init_deep_easi(m: int, depth: int, shared: bool = True, step_init: float = 0.05,
                   hidden: tuple[int, ...] = (8,), activation: str = "tanh",
                   nonlinearity: str = "mlp", mlp_init: str = "cubic",
                   seed: int = 0) -> DeepEasiParams:
    """Warm-started Deep EASI: MLP near the cube (or identity), steps at 0.05."""
    k = 1 if shared else depth
    mlps = None
    if nonlinearity == "mlp":
        maker = mlp_cubic_init if mlp_init == "cubic" else mlp_identity_init
        base = maker(m, hidden, activation, seed)
        mlps = [base] + [base.copy() for _ in range(k - 1)]
    return DeepEasiParams(depth=depth, shared=shared,
                          step_sizes=np.full(k, step_init),
                          nonlinearity=nonlinearity, mlps=mlps)


# ---------------------------------------------------------------------------
# Parameter flattening: fixed order (all per-layer scalars, then each MLP's
# weight/bias arrays in layer order). The tape leaves created by the
# forwards follow exactly this order, so flat gradients line up.
# ---------------------------------------------------------------------------

def _scalars(params) -> np.ndarray:
    if isinstance(params, DeepRlsParams):
        return params.forgetting_factors
    return params.step_sizes


def param_arrays(params: DeepRlsParams | DeepEasiParams) -> list[np.ndarray]:
    """The underlying parameter arrays, in canonical flattening order."""
    arrays = [_scalars(params)]
    if params.mlps is not None:
        for mlp in params.mlps:
            for w, b in zip(mlp.weights, mlp.biases):
                arrays.extend((w, b))
    return arrays


def flatten(params) -> np.ndarray:
    return np.concatenate([a.ravel() for a in param_arrays(params)])


def num_params(params) -> int:
    return sum(a.size for a in param_arrays(params))


def assign_flat(params, vec: np.ndarray) -> None:
    """Write a flat vector back into the parameter arrays, in place."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (num_params(params),):
        raise DimensionError(f"expected {num_params(params)} entries, got {vec.shape}")
    pos = 0
    for arr in param_arrays(params):
        arr.flat[:] = vec[pos:pos + arr.size]
        pos += arr.size


@dataclass
class UnrolledOutput:
    """Forward-pass result: per-layer outputs and the tape behind them.

    ``y_seq[k]`` is layer k's output; ``w_seq[k]`` the separator that
    produced it (needed by losses that penalize the estimator itself).
    ``leaves`` lists the distinct parameter leaves in flattening order;
    ``scalar_leaves`` just the per-layer scalars (one entry when shared).
    """

    y_seq: list[TapeValue]
    w_seq: list[TapeValue]
    final_w: TapeValue
    tape: Tape
    leaves: list[TapeValue]
    scalar_leaves: list[TapeValue]
    step_scalars: np.ndarray
    final_g: TapeValue | None = None  # gain matrix; only tracked by Deep RLS

    def outputs(self) -> np.ndarray:
        """Layer outputs as a plain m x T array."""
        return np.column_stack([y.value for y in self.y_seq]) if self.y_seq else np.empty((0, 0))


class _LeafSet:
    """Tape leaves for one parameter set, in flattening order."""

    def __init__(self, tape: Tape, params):
        self.scalars = [tape.leaf(v) for v in _scalars(params)]
        self.mlps = []
        self.flat: list[TapeValue] = list(self.scalars)
        if params.mlps is not None:
            for mlp in params.mlps:
                pairs = [(tape.leaf(w), tape.leaf(b))
                         for w, b in zip(mlp.weights, mlp.biases)]
                self.mlps.append(pairs)
                for wl, bl in pairs:
                    self.flat.extend((wl, bl))

    def scalar_at(self, k: int, shared: bool) -> TapeValue:
        return self.scalars[0 if shared else k]

    def mlp_at(self, k: int, shared: bool):
        return self.mlps[0 if shared else k]


def _mlp_apply(pairs, activation: str, v: TapeValue) -> TapeValue:
    act = ag.tanh if activation == "tanh" else ag.relu
    last = len(pairs) - 1
    for i, (wl, bl) in enumerate(pairs):
        v = ag.add(ag.matmul(wl, v), bl)
        if i < last:
            v = act(v)
    return v


def mlp_forward(p: MlpParams, v: TapeValue) -> TapeValue:
    """Apply an MLP to a tape vector, recording weights as fresh leaves."""
    pairs = [(v.tape.leaf(w), v.tape.leaf(b)) for w, b in zip(p.weights, p.biases)]
    return _mlp_apply(pairs, p.activation, v)


def _apply_nonlinearity(params, leaves: _LeafSet, k: int, v: TapeValue) -> TapeValue:
    if params.nonlinearity == "identity":
        return v
    if params.nonlinearity == "cube":
        return ag.cube(v)
    mlp = params.mlps[0 if params.shared else k]
    return _mlp_apply(leaves.mlp_at(k, params.shared), mlp.activation, v)


def _check_depth(params, T: int) -> None:
    if not params.shared and params.depth != T:
        raise DimensionError(
            f"unshared network of depth {params.depth} cannot unroll over T={T}")


def _infer_m(params, init: InitSpec, l: int, m: int | None) -> int:
    if m is not None:
        return m
    if params.mlps is not None:
        return params.mlps[0].width
    if init.w0 is not None:
        return init.w0.shape[1]
    return l  # bypass network with default init: assume square


def deep_rls_forward(params: DeepRlsParams, X: np.ndarray, init: InitSpec | None = None,
                     tape: Tape | None = None, m: int | None = None) -> UnrolledOutput:
    """Unrolled RLS-for-PCA forward pass, recorded on a tape.

    Layer k computes, with trainable forgetting factor w_k and nonlinearity
    g_k: y = g_k(W' x(k)); h = G y; f = h / (w_k + y' h);
    G <- (G - f h') / w_k; e = x(k) - W y; W <- W + e f'.
    A gain denominator within 1e-12 of zero raises
    :class:`NearSingularGainError` rather than being clamped.
    """
    X = np.asarray(X, dtype=float)
    l, T = X.shape
    _check_depth(params, T)
    if init is None:
        init = InitSpec()
    m = _infer_m(params, init, l, m)
    tape = tape or Tape()
    leaves = _LeafSet(tape, params)
    W = tape.constant(init.w_init(l, m))
    G = tape.constant(init.g_init(m))
    y_seq: list[TapeValue] = []
    w_seq: list[TapeValue] = []
    step_scalars = np.empty(T)
    with np.errstate(all="ignore"):  # failures surface as typed errors below
        for k in range(T):
            omega = leaves.scalar_at(k, params.shared)
            step_scalars[k] = float(omega.value)
            x = tape.constant(X[:, k])
            y = _apply_nonlinearity(params, leaves, k, ag.matmul(ag.transpose(W), x))
            h = ag.matmul(G, y)
            denom = ag.add(omega, ag.matmul(y, h))
            if abs(float(denom.value)) <= _GAIN_DENOM_EPS:
                raise NearSingularGainError(
                    f"gain denominator {float(denom.value):.3e} at layer {k}", step=k)
            f = ag.div_scalar(h, denom)
            G = ag.div_scalar(ag.sub(G, ag.outer(f, h)), omega)
            e = ag.sub(x, ag.matmul(W, y))
            w_seq.append(W)
            y_seq.append(y)
            W = ag.add(W, ag.outer(e, f))
            if not (np.isfinite(W.value).all() and np.isfinite(G.value).all()):
                raise NumericalFailureError(f"non-finite value at layer {k}", step=k)
    return UnrolledOutput(y_seq=y_seq, w_seq=w_seq, final_w=W, tape=tape,
                          leaves=leaves.flat, scalar_leaves=leaves.scalars,
                          step_scalars=step_scalars, final_g=G)


def deep_easi_forward(params: DeepEasiParams, X: np.ndarray, init: InitSpec | None = None,
                      tape: Tape | None = None, m: int | None = None) -> UnrolledOutput:
    """Unrolled EASI forward pass, recorded on a tape.

    Layer t outputs y(t) = W(t)' x(t) and then updates
    W <- W - lambda_t * W H_t(y)' with
    H_t(y) = y y' - I + g_t(y) y' - y g_t(y)'.
    """
    X = np.asarray(X, dtype=float)
    l, T = X.shape
    _check_depth(params, T)
    if init is None:
        init = InitSpec()
    m = _infer_m(params, init, l, m)
    tape = tape or Tape()
    leaves = _LeafSet(tape, params)
    W = tape.constant(init.w_init(l, m))
    eye = tape.constant(np.eye(m))
    y_seq: list[TapeValue] = []
    w_seq: list[TapeValue] = []
    step_scalars = np.empty(T)
    with np.errstate(all="ignore"):  # failures surface as typed errors below
        for t in range(T):
            lam = leaves.scalar_at(t, params.shared)
            step_scalars[t] = float(lam.value)
            x = tape.constant(X[:, t])
            y = ag.matmul(ag.transpose(W), x)
            y_seq.append(y)
            w_seq.append(W)
            g = _apply_nonlinearity(params, leaves, t, y)
            H = ag.sub(ag.add(ag.sub(ag.outer(y, y), eye), ag.outer(g, y)), ag.outer(y, g))
            W = ag.sub(W, ag.mul_scalar(lam, ag.matmul(W, ag.transpose(H))))
            if not np.isfinite(W.value).all():
                raise NumericalFailureError(f"non-finite value at layer {t}", step=t)
    return UnrolledOutput(y_seq=y_seq, w_seq=w_seq, final_w=W, tape=tape,
                          leaves=leaves.flat, scalar_leaves=leaves.scalars,
                          step_scalars=step_scalars)


def grad_vector(out: UnrolledOutput, grads: "ag.Gradients") -> np.ndarray:
    """Flat parameter gradient aligned with :func:`flatten`."""
    return np.concatenate([np.ravel(grads.get(leaf)) for leaf in out.leaves])


# ---------------------------------------------------------------------------
# Checkpoints: one JSON file holding shapes and flat arrays at full
# precision (json round-trips Python floats exactly).
# ---------------------------------------------------------------------------

def _mlp_to_json(mlp: MlpParams) -> dict:
    return {
        "activation": mlp.activation,
        "weights": [{"shape": list(w.shape), "data": w.ravel().tolist()}
                    for w in mlp.weights],
        "biases": [{"shape": list(b.shape), "data": b.ravel().tolist()}
                   for b in mlp.biases],
    }


def _mlp_from_json(obj: dict) -> MlpParams:
    def arrays(items):
        return [np.array(it["data"], dtype=float).reshape(it["shape"]) for it in items]

    return MlpParams(arrays(obj["weights"]), arrays(obj["biases"]), obj["activation"])


def save_params(params: DeepRlsParams | DeepEasiParams, path: str | Path) -> None:
    payload = {
        "kind": "deep_rls" if isinstance(params, DeepRlsParams) else "deep_easi",
        "depth": params.depth,
        "shared": params.shared,
        "scalars": _scalars(params).tolist(),
        "nonlinearity": params.nonlinearity,
        "mlps": None if params.mlps is None else [_mlp_to_json(m) for m in params.mlps],
    }
    Path(path).write_text(json.dumps(payload) + "\n")


def load_params(path: str | Path) -> DeepRlsParams | DeepEasiParams:
    obj = json.loads(Path(path).read_text())
    mlps = None if obj["mlps"] is None else [_mlp_from_json(m) for m in obj["mlps"]]
    scalars = np.array(obj["scalars"], dtype=float)
    if obj["kind"] == "deep_rls":
        return DeepRlsParams(depth=obj["depth"], shared=obj["shared"],
                             forgetting_factors=scalars,
                             nonlinearity=obj["nonlinearity"], mlps=mlps)
    if obj["kind"] == "deep_easi":
        return DeepEasiParams(depth=obj["depth"], shared=obj["shared"],
                              step_sizes=scalars,
                              nonlinearity=obj["nonlinearity"], mlps=mlps)
    raise ConfigError(f"unknown checkpoint kind {obj['kind']!r}")
