"""climatlab: a desk-scale lab for calibrated disease-trajectory forecasting
with a three-agent transformer, a calibrated multi-task loss, and a synthetic
longitudinal cohort generator."""

from .autodiff import NonFiniteError, ShapeError, Tensor, backward, grad_check
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .losses import (
    TaskBatch,
    club,
    club_grad_identities,
    consistency_loss,
    constrain_tau,
    cross_entropy,
    prognosis_loss,
    tce,
    total_loss,
)
from .metrics import (
    balanced_accuracy,
    expected_calibration_error,
    mauc_hand_till,
    wilcoxon_signed_rank,
)
from .model import ClimatConfig, ForecastOutput, build_params, climat_forward
from .synthetic import Cohort, CohortConfig, generate_cohort, load_cohort
from .train import (
    LossConfig,
    OptimizerConfig,
    RunConfig,
    compare_losses,
    evaluate_checkpoint,
    export_attention,
    train,
)

__version__ = "0.1.0"
