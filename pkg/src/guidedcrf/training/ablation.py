"""The four-setting ablation (unary, A, B, C) on the context-structured synthetic set."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .. import guided_filter as gf
from ..model import ARCHS, CRFModel
from .loop import EpochRecord, evaluate, train_pipeline
from .objective import TrainConfig
from .synthetic import make_synthetic_dataset

__all__ = ["ABLATION_DATA", "ABLATION_FILTER", "AblationRow", "ablation_datasets", "run_ablation"]

# 64x64, L=4, 200 train / 50 test; confusion makes the global nodes informative
ABLATION_DATA = dict(n_train=200, n_test=50, h=64, w=64, labels=4, train_seed=1, test_seed=2,
                     sigma=1.0, jitter=2, signal=1.5, confusion=0.8)
# window and regulariser suited to [0, 1] colours on 64-pixel images
ABLATION_FILTER = gf.GuidedFilterConfig(radius=4, epsilon=0.01)


@dataclass
class AblationRow:
    arch: str
    mean_iou: float
    trimap_iou: float
    seconds: float
    history: list[EpochRecord] = field(default_factory=list)


def ablation_datasets(**overrides):
    """``(train, test)`` sample lists for the ablation (keys of :data:`ABLATION_DATA` may be overridden)."""
    d = {**ABLATION_DATA, **overrides}
    kw = dict(h=d["h"], w=d["w"], labels=d["labels"], sigma=d["sigma"], jitter=d["jitter"],
              signal=d["signal"], confusion=d["confusion"])
    return (make_synthetic_dataset(d["n_train"], seed=d["train_seed"], **kw),
            make_synthetic_dataset(d["n_test"], seed=d["test_seed"], **kw))


def run_ablation(archs=tuple(ARCHS), cfg: TrainConfig | None = None, *, data=None,
                 filter_cfg: gf.GuidedFilterConfig = ABLATION_FILTER, **train_kw) -> dict[str, AblationRow]:
    """Train each setting from the same seed and report its final test metrics."""
    cfg = cfg or TrainConfig()
    train, test = data or ablation_datasets()
    rows = {}
    for arch in archs:
        t0 = time.perf_counter()
        if arch == "unary":
            miou, tiou = evaluate(CRFModel(train[0].unary.shape[2]), test)
            rows[arch] = AblationRow(arch, miou, tiou, time.perf_counter() - t0)
            continue
        res = train_pipeline(train, arch, cfg, eval_set=test, filter_cfg=filter_cfg, **train_kw)
        last = res.history[-1]
        rows[arch] = AblationRow(arch, last.mean_iou, last.trimap_iou, time.perf_counter() - t0, res.history)
    return rows
