"""Training objective, optimiser, synthetic data, metrics and gradient checks."""

from .ablation import ABLATION_DATA, ABLATION_FILTER, AblationRow, ablation_datasets, run_ablation
from .gradcheck import GradCheckReport, grad_check
from .loop import TrainingDiverged, TrainResult, evaluate, predict, train_pipeline
from .metrics import boundary_band, confusion, mean_iou, trimap_iou
from .objective import TrainConfig, cross_entropy_loss, sgd_step
from .synthetic import SyntheticSample, make_synthetic_dataset

__all__ = [
    "ABLATION_DATA",
    "ABLATION_FILTER",
    "AblationRow",
    "GradCheckReport",
    "ablation_datasets",
    "grad_check",
    "run_ablation",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "SyntheticSample",
    "boundary_band",
    "confusion",
    "cross_entropy_loss",
    "evaluate",
    "make_synthetic_dataset",
    "mean_iou",
    "predict",
    "sgd_step",
    "train_pipeline",
    "trimap_iou",
]
