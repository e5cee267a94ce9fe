"""End-to-end training of the enabled CRF components on (image, labels, unary) samples."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .. import guided_filter as gf
from ..model import CRFModel
from .metrics import confusion, iou_from_confusion, trimap_confusion
from .objective import TrainConfig, cross_entropy_loss, sgd_step

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "loss", "mean_iou", "trimap_iou")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    mean_iou: float
    trimap_iou: float


@dataclass
class TrainResult:
    model: CRFModel
    history: list[EpochRecord] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_FIELDS)
            for rec in self.history:
                writer.writerow([rec.epoch, repr(rec.loss), repr(rec.mean_iou), repr(rec.trimap_iou)])


def predict(model: CRFModel, sample, *, fast: bool = False) -> np.ndarray:
    phi, _ = model.forward(sample.unary, sample.image, fast=fast)
    return np.argmin(phi, axis=2)


def evaluate(model: CRFModel, samples, *, fast: bool = False, band: int = 3) -> tuple[float, float]:
    """Dataset-level mean IoU and trimap IoU (confusions summed over samples)."""
    l = model.labels
    conf = np.zeros((l, l), dtype=np.int64)
    tri = np.zeros((l, l), dtype=np.int64)
    for s in samples:
        pred = predict(model, s, fast=fast)
        conf += confusion(pred, s.labels, l)
        tri += trimap_confusion(pred, s.labels, l, band)
    return iou_from_confusion(conf)[1], iou_from_confusion(tri)[1]


def train_step(model: CRFModel, sample, cfg: TrainConfig, velocity: dict, lr: float | None = None) -> float:
    phi, cache = model.forward(sample.unary, sample.image, training=True)
    loss, grad = cross_entropy_loss(phi, sample.labels)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"loss became {loss}")
    params = model.params()
    if params:
        _, grads = model.backward(grad, cache)
        model.set_params(sgd_step(params, grads, cfg, velocity, lr))
    return loss


def train_pipeline(train_set, arch: str, cfg: TrainConfig, *, eval_set=None,
                   filter_cfg: gf.GuidedFilterConfig | None = None, channels: int = 32,
                   k1: int = 15, k2: int = 15, lam: float = 1.0, iters: int = 3,
                   context_iters: int = 1, model: CRFModel | None = None) -> TrainResult:
    """Jointly train the components enabled by ``arch`` with batch size 1.

    Sample order is reshuffled every epoch from ``cfg.seed``; metrics are
    computed on ``eval_set`` (default: the training set) after every epoch.
    """
    if not train_set:
        raise ValueError("empty training set")
    labels = train_set[0].unary.shape[2]
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = CRFModel.build(labels, arch, channels=channels, k1=k1, k2=k2, filter_cfg=filter_cfg,
                               lam=lam, iters=iters, context_iters=context_iters,
                               rng=np.random.default_rng(rng.integers(2**63)))
    eval_set = train_set if eval_set is None else eval_set
    result = TrainResult(model)
    velocity: dict[str, np.ndarray] = {}
    n = len(train_set)
    total = cfg.epochs * n
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses = [
            train_step(model, train_set[i], cfg, velocity, cfg.lr_at(((epoch - 1) * n + k) / total))
            for k, i in enumerate(order)
        ]
        loss = float(np.mean(losses))
        if not np.isfinite(loss):
            raise TrainingDiverged(f"epoch {epoch}: mean loss {loss}")
        miou, tiou = evaluate(model, eval_set)
        result.history.append(EpochRecord(epoch, loss, miou, tiou))
        log.info("epoch %d  loss %.5f  mIoU %.4f  trimap %.4f", epoch, loss, miou, tiou)
    return result
