"""Differentially private empirical risk minimization via data perturbation.

The package trains binary classifiers under (epsilon, delta)-differential
privacy by noising training features instead of gradients or outputs, with
an influence-gated variant that only noises instances whose removal would
move the model noticeably. Gradient- and output-perturbation baselines and
a reproducible sweep harness round out the toolkit.
"""

from .dataset import (
    DataInstance,
    Dataset,
    EncodingSpec,
    export_private,
    load_csv,
    load_exported,
    normalize_unit_ball,
    scale_features,
    split,
    subsample,
    synthesize,
)
from .influence import HessianOperator, InfluenceReport, assemble_hessian, influence, threshold_check
from .models import LogisticModel, LossModel, MLPModel, load_model, make_model, save_model, spectral_norm
from .privacy import (
    CalibrationConstants,
    NoiseScale,
    PrivacyBudget,
    calibrate_per_instance,
    calibrate_uniform,
    gaussian_vector,
    validate_budget,
)
from .trainers import (
    FitResult,
    StepRecord,
    TrainConfig,
    TrainOutcome,
    output_noise_scale,
    step_log_to_csv,
    train_data_perturbation,
    train_gated_perturbation,
    train_gradient_perturbation,
    train_output_perturbation,
    train_sgd,
)
from .bench import (
    DatasetSpec,
    ExperimentConfig,
    ResultRow,
    ResultsTable,
    emit_plot_data,
    load_config,
    optimality_gap,
    run_experiment,
)

__version__ = "0.1.0"
