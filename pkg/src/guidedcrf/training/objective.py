"""Pixel-wise negative log-likelihood and an SGD-with-momentum update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..context_crf import softmax_local
from .metrics import IGNORE_LABEL


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    momentum: float = 0.9
    epochs: int = 4
    seed: int = 0
    lr_policy: str = "poly"      # "fixed" or "poly": lr * (1 - progress) ** 0.9

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not self.weight_decay >= 0:
            raise ValueError("weight_decay must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr_policy not in ("fixed", "poly"):
            raise ValueError(f"unknown lr_policy {self.lr_policy!r}")

    def lr_at(self, progress: float) -> float:
        """Learning rate after a fraction ``progress`` in [0, 1) of all updates."""
        if self.lr_policy == "poly":
            return self.learning_rate * (1.0 - progress) ** 0.9
        return self.learning_rate


def cross_entropy_loss(phi, labels, ignore_label: int = IGNORE_LABEL) -> tuple[float, np.ndarray]:
    """Mean ``-log softmax(-phi)[label]`` over non-ignored pixels, with its gradient wrt ``phi``."""
    phi = np.asarray(phi, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != phi.shape[:2]:
        raise ValueError(f"label map {labels.shape} does not match scores {phi.shape[:2]}")
    keep = labels != ignore_label
    count = int(keep.sum())
    if count == 0:
        raise ValueError("all pixels are ignored")
    l = phi.shape[2]
    if labels[keep].max() >= l or labels[keep].min() < 0:
        raise ValueError("label out of range")
    p = softmax_local(phi)
    lab = np.where(keep, labels, 0).astype(np.intp)
    # -log p_y = phi_y + logsumexp(-phi)
    z = -phi
    zmax = z.max(axis=2)
    lse = zmax + np.log(np.exp(z - zmax[..., None]).sum(axis=2))
    nll = np.take_along_axis(phi, lab[..., None], axis=2)[..., 0] + lse
    loss = float(nll[keep].sum() / count)
    grad = -p
    np.put_along_axis(grad, lab[..., None], np.take_along_axis(grad, lab[..., None], axis=2) + 1.0, axis=2)
    grad *= keep[..., None] / count
    return loss, grad


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], cfg: TrainConfig,
             velocity: dict[str, np.ndarray], lr: float | None = None) -> dict[str, np.ndarray]:
    """``v <- momentum*v - lr*(g + decay*p); p <- p + v``.  Updates ``velocity`` in place.

    ``lr`` overrides ``cfg.learning_rate`` (used by scheduled training).
    """
    lr = cfg.learning_rate if lr is None else lr
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if np.shape(g) != np.shape(p):
            raise ValueError(f"shape mismatch for {name}: {np.shape(g)} vs {np.shape(p)}")
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(p, dtype=np.float64)
        v = cfg.momentum * v - lr * (g + cfg.weight_decay * p)
        velocity[name] = v
        out[name] = p + v
    return out
