"""Wall-clock benchmarks for the guided-filter message pass.

The comparison point is a brute-force fully connected CRF message,
``g_i = sum_{j != i} k(f_i, f_j) q_j`` with the usual appearance
(position + colour) and smoothness (position) Gaussian kernels, evaluated
directly for every pixel pair.  It is O(N^2), so it only runs on images of
at most ``DENSE_MAX_SIDE`` pixels per side.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import guided_filter as gf
from .tensor import as_tensor

__all__ = ["DENSE_MAX_SIDE", "BenchResult", "dense_message_pass", "median_time", "guided_pass",
           "bench_guided", "bench_dense", "scaled_radius"]

DENSE_MAX_SIDE = 64


@dataclass
class BenchResult:
    label: str
    height: int
    width: int
    radius: int | None
    seconds: float              # median over reps
    reps: int


def median_time(fn: Callable[[], object], reps: int) -> float:
    """Median wall-clock seconds of ``reps`` calls of ``fn``."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def dense_message_pass(image, q, *, theta_alpha: float = 8.0, theta_beta: float = 0.1,
                       theta_gamma: float = 3.0, w_app: float = 1.0, w_smooth: float = 1.0,
                       block: int = 128) -> np.ndarray:
    """Fully connected Gaussian-kernel message by direct evaluation of every pixel pair.

    Positions are in pixels and colours in [0, 1]; the bandwidths are the
    usual dense-CRF values rescaled to 64-pixel images.
    """
    image = as_tensor(image)
    q = as_tensor(q)
    h, w, _ = image.shape
    if q.shape[:2] != (h, w):
        raise ValueError("image and probability map dims differ")
    n = h * w
    yy, xx = np.mgrid[0:h, 0:w]
    pos = np.stack([yy, xx], axis=-1).reshape(n, 2).astype(np.float64)
    col = image.reshape(n, 3)
    flat_q = q.reshape(n, -1)
    out = np.empty_like(flat_q)
    for start in range(0, n, block):
        stop = min(start + block, n)
        dp = ((pos[start:stop, None, :] - pos[None, :, :]) ** 2).sum(axis=-1)
        dc = ((col[start:stop, None, :] - col[None, :, :]) ** 2).sum(axis=-1)
        k = (w_app * np.exp(-dp / (2 * theta_alpha ** 2) - dc / (2 * theta_beta ** 2))
             + w_smooth * np.exp(-dp / (2 * theta_gamma ** 2)))
        k[np.arange(stop - start), np.arange(start, stop)] = 0.0
        out[start:stop] = k @ flat_q
    return out.reshape(q.shape)


def guided_pass(image, q, cfg: gf.GuidedFilterConfig) -> np.ndarray:
    """One message pass: plan the guide, then filter ``q`` (exact or fast path per ``cfg``)."""
    if cfg.subsample > 1:
        return gf.filter_fast(image, q, cfg)
    return gf.filter(gf.plan(image, cfg), q)


def _fixture(h: int, w: int, labels: int, seed: int):
    rng = np.random.default_rng(seed)
    image = rng.random((h, w, 3))
    logits = rng.normal(0, 1, (h, w, labels))
    q = np.exp(logits) / np.exp(logits).sum(axis=2, keepdims=True)
    return image, q


def bench_guided(h: int, w: int, radius: int, *, labels: int = 4, reps: int = 5,
                 epsilon: float = 1.0, subsample: int = 1, seed: int = 0) -> BenchResult:
    image, q = _fixture(h, w, labels, seed)
    cfg = gf.GuidedFilterConfig(radius, epsilon, subsample)
    secs = median_time(lambda: guided_pass(image, q, cfg), reps)
    label = "guided" if subsample == 1 else f"guided-fast(s={subsample})"
    return BenchResult(label, h, w, radius, secs, reps)


def bench_dense(h: int, w: int, *, labels: int = 4, reps: int = 3, seed: int = 0) -> BenchResult:
    if h > DENSE_MAX_SIDE or w > DENSE_MAX_SIDE:
        raise ValueError(f"dense pass is capped at {DENSE_MAX_SIDE}x{DENSE_MAX_SIDE}")
    image, q = _fixture(h, w, labels, seed)
    secs = median_time(lambda: dense_message_pass(image, q), reps)
    return BenchResult("dense", h, w, None, secs, reps)


def scaled_radius(radius: int, side: int, capped_side: int) -> int:
    """Radius keeping the same fraction of the image side after capping the size."""
    return max(1, int(round(radius * capped_side / side)))
