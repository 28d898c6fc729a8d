"""Stable Koopman-operator forecasting with transformer encoder backbones."""

from .autodiff import Tensor, NonFiniteGradientError
from .data import (
    MinMaxScaler,
    SimulatorConfig,
    TimeSeries,
    WindowBatch,
    load_csv,
    make_windows,
    simulate,
    simulate_lorenz,
    simulate_van_der_pol,
    train_test_split,
)
from .encoder import (
    EncoderConfig,
    encode,
    full_attention,
    moving_average,
    patchify,
    probsparse_attention,
    probsparse_scores,
    sinusoidal_pe,
)
from .experiment import (
    ExperimentConfig,
    MetricsRecord,
    compute_metrics,
    grid_search,
    run_experiment,
)
from .forecaster import (
    ForecastModel,
    ForecastOutput,
    ModelConfig,
    certified_output_bound,
    forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
    training_loss,
)
from .koopman import (
    StableKoopmanOperator,
    apply,
    materialize,
    perturbation_bound,
    rollout,
    spectral_trace_entry,
)
from .linalg import (
    PowerIterationError,
    householder_qr,
    spectral_norm,
    stable_sigmoid,
)
from .training import (
    AdamState,
    TrainingConfig,
    TrainingTrace,
    adam_step,
    finite_difference_check,
    grad,
    sigma_gradient_bound_audit,
    train,
)

__version__ = "0.1.0"
