"""Adaptive source separation: classical RLS/EASI and trainable unrolled twins."""

from .baseline import (
    CUBIC,
    LINEAR,
    TANH,
    EasiConfig,
    InitSpec,
    Nonlinearity,
    OracleStats,
    RlsConfig,
    SeparatorState,
    closed_form_w,
    easi_run,
    easi_step,
    rls_run,
    rls_step,
)
from .evaluate import (
    Alignment,
    CurveTable,
    RunRecord,
    average_mse,
    best_alignment,
    convergence_curve,
    merge_curves,
)
from .loss import LossConfig, SureContext, divergence_linear, mse_loss, regularized_loss, sure_context, sure_loss
from .model import GeneratorConfig, MixtureInstance, empirical_kurtosis, generate, load_instance, save_instance
from .train import AdamConfig, AdamState, TrainConfig, adam_step, train
from .unrolled import (
    DeepEasiParams,
    DeepRlsParams,
    MlpParams,
    UnrolledOutput,
    deep_easi_forward,
    deep_rls_forward,
    init_deep_easi,
    init_deep_rls,
    load_params,
    mlp_forward,
    save_params,
)

__version__ = "0.1.0"
