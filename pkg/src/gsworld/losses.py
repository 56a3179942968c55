"""The four training objectives and their weighted total.

Reconstruction and future-prediction losses are per-view pixel sums of
squared color error (prediction averages its sum over all supervision
views); the task loss is a per-pixel 3-class cross-entropy over rendered
instance logits, normalized by the number of labeled pixels; behavior
cloning sums per-head cross-entropies over both arms. The total is
L_BC + lambda_recon * L_Recon + lambda_task * L_Task + lambda_pred * L_Pred.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .core.actions import BimanualAction
from .core.observations import IGNORE_LABEL
from .errors import ShapeError, TrainingDivergedError

# incremented whenever loss_task sees a frame with no labeled pixels
ALL_IGNORED_COUNT = 0


@dataclass(frozen=True)
class LossWeights:
    lambda_recon: float = 0.1
    lambda_task: float = 0.1
    lambda_pred: float = 0.1

    def __post_init__(self):
        for name in ("lambda_recon", "lambda_task", "lambda_pred"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def _as_tensor(x) -> ad.Tensor:
    return x if isinstance(x, ad.Tensor) else ad.constant(x)


def loss_recon(pred, target) -> ad.Tensor:
    """Sum over pixels of squared L2 color difference for one view."""
    pred = _as_tensor(pred)
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"loss_recon: prediction {pred.shape} vs target {target.shape}")
    return ad.sum_sq(ad.sub(pred, target))


def loss_task(logit_map, gt_labels) -> ad.Tensor:
    """Per-pixel softmax cross-entropy of rendered logits vs label image.

    Pixels labeled IGNORE_LABEL are excluded; the loss is normalized by the
    number of counted pixels. All pixels ignored yields 0 (counted globally).
    """
    global ALL_IGNORED_COUNT
    logit_map = _as_tensor(logit_map)
    labels = np.asarray(gt_labels)
    h, w, c = logit_map.shape
    if labels.shape != (h, w):
        raise ShapeError(f"loss_task: logits {logit_map.shape} vs labels {labels.shape}")
    flat_labels = labels.reshape(-1)
    keep = np.nonzero(flat_labels != IGNORE_LABEL)[0]
    if keep.size == 0:
        ALL_IGNORED_COUNT += 1
        return ad.constant(np.zeros(()))
    classes = flat_labels[keep].astype(np.int64)
    if np.any(classes >= c):
        raise ValueError(f"label values exceed class count {c}")
    rows = ad.gather_rows(ad.reshape(logit_map, (h * w, c)), keep)
    ce = ad.sub(ad.logsumexp(rows), ad.gather_elements(rows, classes))
    return ad.tmean(ce)


def loss_pred(pred_futures, target_futures) -> ad.Tensor:
    """Mean over supervision views of the per-view squared-error pixel sum."""
    preds = list(pred_futures)
    targets = list(target_futures)
    if len(preds) != len(targets):
        raise ShapeError(f"loss_pred: {len(preds)} predicted views vs {len(targets)} targets")
    if not preds:
        raise ShapeError("loss_pred: no views")
    total = loss_recon(preds[0], targets[0])
    for p, t in zip(preds[1:], targets[1:]):
        total = ad.add(total, loss_recon(p, t))
    return ad.scale(total, 1.0 / len(preds))


def _arm_ce(head_logits, arm_action) -> ad.Tensor:
    terms = [
        ad.sub(ad.logsumexp(head_logits.trans),
               ad.gather_elements(head_logits.trans, np.asarray(arm_action.trans_bin))),
        ad.sub(ad.logsumexp(head_logits.rot),
               ad.gather_elements(head_logits.rot, np.asarray(arm_action.rot_bins))),
        ad.sub(ad.logsumexp(head_logits.open),
               ad.gather_elements(head_logits.open, np.array([arm_action.open]))),
        ad.sub(ad.logsumexp(head_logits.collide),
               ad.gather_elements(head_logits.collide, np.array([arm_action.collide]))),
    ]
    total = ad.tsum(terms[0])
    for t in terms[1:]:
        total = ad.add(total, ad.tsum(t))
    return total


def loss_bc(pred, gt: BimanualAction) -> ad.Tensor:
    """Sum over both arms of the per-head cross-entropies (8 heads per arm)."""
    return ad.add(_arm_ce(pred.left, gt.left), _arm_ce(pred.right, gt.right))


def loss_total(bc, recon, task, pred, weights: LossWeights) -> ad.Tensor:
    """Weighted objective; aborts on non-finite components."""
    parts = {"bc": bc, "recon": recon, "task": task, "pred": pred}
    for name, part in parts.items():
        value = float(part)
        if not np.isfinite(value):
            raise TrainingDivergedError(f"non-finite loss component '{name}': {value}")
    total = _as_tensor(bc)
    total = ad.add(total, ad.scale(_as_tensor(recon), weights.lambda_recon))
    total = ad.add(total, ad.scale(_as_tensor(task), weights.lambda_task))
    total = ad.add(total, ad.scale(_as_tensor(pred), weights.lambda_pred))
    return total
