"""Ensemble diverse hypotheses with knowledge distillation for cross-subject domain adaptation."""
from edhkd.kernels import BACKEND
from edhkd.networks import EnsembleModel, StudentModel, build_ensemble, build_student
from edhkd.training import TrainConfig, distill, evaluate, train_baseline, train_edh

__version__ = "0.1.0"
__all__ = ["BACKEND", "EnsembleModel", "StudentModel", "build_ensemble", "build_student",
           "TrainConfig", "distill", "evaluate", "train_baseline", "train_edh"]
