"""Segmentation metrics: mean IoU and boundary-band (trimap) IoU."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

IGNORE_LABEL = 255


def confusion(pred, truth, labels: int) -> np.ndarray:
    """``labels x labels`` counts, rows = truth, columns = prediction; ignore-label pixels skipped."""
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth sizes differ")
    keep = truth != IGNORE_LABEL
    pred, truth = pred[keep].astype(np.int64), truth[keep].astype(np.int64)
    if pred.size and (pred.min() < 0 or pred.max() >= labels or truth.max() >= labels):
        raise ValueError("label out of range")
    return np.bincount(truth * labels + pred, minlength=labels * labels).reshape(labels, labels)


def iou_from_confusion(conf: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN for classes absent from both maps) and their mean."""
    inter = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(union > 0, inter / union, np.nan)
    valid = ~np.isnan(per_class)
    mean = float(per_class[valid].mean()) if valid.any() else float("nan")
    return per_class, mean


def mean_iou(pred, truth, labels: int) -> tuple[np.ndarray, float]:
    """Per-class IoU and mean IoU over classes present in either map."""
    if np.shape(pred) != np.shape(truth):
        raise ValueError("prediction and truth shapes differ")
    return iou_from_confusion(confusion(pred, truth, labels))


def boundary_band(truth, width: int = 3) -> np.ndarray:
    """Pixels within ``width`` (Euclidean) of a label boundary of ``truth``."""
    truth = np.asarray(truth)
    edge = np.zeros(truth.shape, dtype=bool)
    dy = truth[1:, :] != truth[:-1, :]
    dx = truth[:, 1:] != truth[:, :-1]
    edge[1:, :] |= dy
    edge[:-1, :] |= dy
    edge[:, 1:] |= dx
    edge[:, :-1] |= dx
    if not edge.any():
        return edge
    return ndimage.distance_transform_edt(~edge) <= width


def trimap_confusion(pred, truth, labels: int, width: int = 3) -> np.ndarray:
    band = boundary_band(truth, width)
    return confusion(np.asarray(pred)[band], np.asarray(truth)[band], labels)


def trimap_iou(pred, truth, labels: int, width: int = 3) -> float:
    """Mean IoU restricted to the boundary band of ``truth``."""
    return iou_from_confusion(trimap_confusion(pred, truth, labels, width))[1]
