"""Training objectives over stacked hypothesis outputs.

Shapes follow the ensemble layout: scores/probabilities are
``(n_g, n_c, batch, N)`` and generator features ``(n_g, batch, F)``.
"""
from dataclasses import dataclass

import numpy as np

from edhkd import tensor as T

LOG_FLOOR = 1e-12


@dataclass
class LossWeights:
    xi_g: float = 3.0
    xi_c: float = 3.0
    xi_e: float = 1.0

    def __post_init__(self):
        if min(self.xi_g, self.xi_c, self.xi_e) < 0:
            raise ValueError("loss weights must be non-negative")


def source_loss_from_logits(logits, labels):
    """Cross-entropy averaged over the batch and over every hypothesis."""
    logits = T.as_tensor(logits)
    labels = np.asarray(labels, dtype=int)
    n, k = logits.shape[-2], logits.shape[-1]
    if n == 0:
        raise ValueError("empty source batch")
    if labels.shape != (n,):
        raise ValueError("one label per source row is required")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    n_hyp = int(np.prod(logits.shape[:-2]))
    return -(T.log_softmax(logits) * onehot).sum() * (1.0 / (n * n_hyp))


def source_loss(model, x_s, y_s):
    _, logits = model.forward(x_s, update_stats=False)
    return source_loss_from_logits(logits, y_s)


def classifier_discrepancy(probs, normalize=True):
    """Sum over hypotheses of the batch-mean L1 gap to their generator's mean prediction.

    ``normalize`` divides the per-sample L1 distance by the class count N.
    """
    probs = T.as_tensor(probs)
    if probs.ndim != 4:
        raise ValueError("probs must be (n_g, n_c, batch, N)")
    _, _, n, k = probs.shape
    dev = T.tabs(probs - probs.mean(axis=1, keepdims=True))
    scale = 1.0 / n / (k if normalize else 1)
    return dev.sum() * scale


def feature_discrepancy(features):
    """Batch mean of the summed L1 distances between each generator and the mean generator."""
    features = T.as_tensor(features)
    if features.ndim != 3:
        raise ValueError("features must be (n_g, batch, F)")
    n = features.shape[1]
    dev = T.tabs(features - features.mean(axis=0, keepdims=True))
    return dev.sum() * (1.0 / n)


def entropy_loss(probs):
    """Sum over hypotheses of the batch-mean Shannon entropy (0 ln 0 := 0)."""
    probs = T.as_tensor(probs)
    n = probs.shape[-2]
    return -(probs * T.log(probs, LOG_FLOOR)).sum() * (1.0 / n)


def distillation_loss(student_probs, teacher_probs):
    """Batch mean of the cross-entropy from teacher soft labels to student predictions."""
    student_probs = T.as_tensor(student_probs)
    teacher = np.asarray(teacher_probs.data if isinstance(teacher_probs, T.Tensor) else teacher_probs)
    if teacher.shape != student_probs.shape:
        raise ValueError("student and teacher probabilities differ in shape")
    n = student_probs.shape[-2]
    return -(T.log(student_probs, LOG_FLOOR) * teacher).sum() * (1.0 / n)
