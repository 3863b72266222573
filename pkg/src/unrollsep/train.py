"""Mini-batch training of the unrolled networks by BPTT and Adam.

Each epoch reshuffles the training set with a seeded permutation, runs the
forward recursion and a reverse sweep per sequence, averages the flat
gradients over the batch (so the learning rate is batch-size independent)
and applies one bias-corrected Adam update. Everything is deterministic
given the config seed; batch members may be evaluated by a small worker
pool, which does not change results because gradients are reduced in
batch order.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .baseline import InitSpec
from .errors import ConfigError, UnsupportedLossError
from .evaluate import average_mse
from .loss import LossConfig, mse_loss, regularized_loss, sure_context, sure_loss
from .model import MixtureInstance
from .unrolled import (
    DeepEasiParams,
    DeepRlsParams,
    UnrolledOutput,
    assign_flat,
    deep_easi_forward,
    deep_rls_forward,
    flatten,
    grad_vector,
    save_params,
)


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 40
    learning_rate: float = 1e-4
    loss: LossConfig = field(default_factory=LossConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0
    clip_norm: float | None = None  # optional global-norm clip, off by default
    eval_every: int = 0             # test-MSE cadence in epochs; 0 = end only
    jobs: int = 1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.jobs < 1:
            raise ConfigError("need epochs >= 0, batch_size >= 1, jobs >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), step=0)


def adam_step(theta: np.ndarray, grad: np.ndarray, state: AdamState,
              lr: float, cfg: AdamConfig = AdamConfig()) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns fresh arrays."""
    if theta.shape != grad.shape or theta.shape != state.m.shape:
        raise ConfigError(f"shape mismatch: theta {theta.shape}, grad {grad.shape}")
    step = state.step + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1**step)
    v_hat = v / (1.0 - cfg.beta2**step)
    theta_new = theta - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return theta_new, AdamState(m=m, v=v, step=step)


def forward(params: DeepRlsParams | DeepEasiParams, instance: MixtureInstance,
            init: InitSpec | None = None) -> UnrolledOutput:
    fwd = deep_rls_forward if isinstance(params, DeepRlsParams) else deep_easi_forward
    return fwd(params, instance.X, init=init, m=instance.m)


def _build_loss(out: UnrolledOutput, instance: MixtureInstance, loss_cfg: LossConfig):
    if loss_cfg.kind == "mse":
        return mse_loss(out.y_seq, instance.S)
    if loss_cfg.kind == "regularized_mse":
        return regularized_loss(out.y_seq, instance.S, out.scalar_leaves,
                                loss_cfg.penalty_weight)
    ctx = sure_context(instance.A, instance.noise_var)
    return sure_loss(out.y_seq, instance.X, out.w_seq, ctx, loss_cfg.div_mode)


def check_compatible(params, loss_cfg: LossConfig) -> None:
    if loss_cfg.kind == "sure" and isinstance(params, DeepRlsParams):
        raise UnsupportedLossError(
            "the SURE loss is only derived for Deep EASI; Deep RLS supports "
            "'mse' and 'regularized_mse'")


def sequence_loss(params, instance: MixtureInstance, loss_cfg: LossConfig,
                  init: InitSpec | None = None) -> float:
    """Loss of one sequence at the current parameters (no gradient)."""
    out = forward(params, instance, init)
    return float(_build_loss(out, instance, loss_cfg).value)


def sequence_loss_grad(params, instance: MixtureInstance, loss_cfg: LossConfig,
                       init: InitSpec | None = None) -> tuple[float, np.ndarray]:
    """Loss and flat parameter gradient of one sequence via BPTT."""
    out = forward(params, instance, init)
    root = _build_loss(out, instance, loss_cfg)
    grads = ag.backward(out.tape, root)
    return float(root.value), grad_vector(out, grads)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    test_mse: float | None = None


def history_to_csv(history: list[EpochStats], path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,test_mse\n")
        for row in history:
            test = "" if row.test_mse is None else f"{row.test_mse:.17g}"
            fh.write(f"{row.epoch},{row.train_loss:.17g},{test}\n")


def mean_test_mse(params, instances, init: InitSpec | None = None) -> float:
    """Average (over instances) of the per-run average MSE, unaligned."""
    values = [average_mse(forward(params, inst, init).outputs(), inst.S)
              for inst in instances]
    return float(np.mean(values))


def _worker(args):
    params, instance, loss_cfg, init = args
    return sequence_loss_grad(params, instance, loss_cfg, init)


def train(params: DeepRlsParams | DeepEasiParams, dataset: list[MixtureInstance],
          cfg: TrainConfig, init: InitSpec | None = None,
          test_set: list[MixtureInstance] | None = None,
          checkpoint_dir: str | Path | None = None, checkpoint_every: int = 0,
          ) -> tuple[DeepRlsParams | DeepEasiParams, list[EpochStats]]:
    """Train in place and return (params, per-epoch history).

    The history records the mean training loss of each epoch and, when a
    test set is supplied, the raw test MSE every ``cfg.eval_every`` epochs
    (always on the final epoch).
    """
    if not dataset:
        raise ConfigError("empty training set")
    check_compatible(params, cfg.loss)
    rng = np.random.default_rng(cfg.seed)
    theta = flatten(params)
    state = AdamState.zeros(theta.size)
    history: list[EpochStats] = []
    pool = None
    if cfg.jobs > 1:
        pool = multiprocessing.get_context("fork").Pool(cfg.jobs)
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(dataset))
            epoch_losses = []
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                tasks = [(params, dataset[i], cfg.loss, init) for i in batch]
                if pool is not None:
                    results = pool.map(_worker, tasks)
                else:
                    results = [_worker(t) for t in tasks]
                grad = np.zeros_like(theta)
                for value, g in results:  # fixed reduction order
                    epoch_losses.append(value)
                    grad += g
                grad /= len(batch)
                if cfg.clip_norm is not None:
                    norm = float(np.linalg.norm(grad))
                    if norm > cfg.clip_norm:
                        grad *= cfg.clip_norm / norm
                theta, state = adam_step(theta, grad, state, cfg.learning_rate, cfg.adam)
                assign_flat(params, theta)
            test_mse = None
            due = cfg.eval_every > 0 and epoch % cfg.eval_every == 0
            if test_set and (due or epoch == cfg.epochs):
                test_mse = mean_test_mse(params, test_set, init)
            history.append(EpochStats(epoch=epoch,
                                      train_loss=float(np.mean(epoch_losses)),
                                      test_mse=test_mse))
            if checkpoint_dir is not None and checkpoint_every > 0 \
                    and epoch % checkpoint_every == 0:
                save_params(params, Path(checkpoint_dir) / f"checkpoint_epoch{epoch:04d}.json")
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    return params, history
