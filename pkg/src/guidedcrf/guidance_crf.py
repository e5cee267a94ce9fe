"""Fine-level guidance CRF: mean-field updates whose message passing is a guided filter.

One mean-field step on energies ``phi`` (``q = softmax(-phi)``)::

    q = softmax(-phi)
    g = W(I) q                      guided filter over all pixels
    m[i, v] = sum_v' mu[v, v'] g[i, v']
    phi = phi_u + lam * m

``mu`` is an energy-valued compatibility (Potts: zero on the diagonal, one
elsewhere), so ``m[i, v]`` is the expected disagreement cost of label ``v``
and neighbours that agree lower the energy of their label.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import guided_filter as gf
from .context_crf import softmax_backward, softmax_local
from .tensor import as_tensor

__all__ = [
    "GuidanceParams",
    "GuidanceCache",
    "GuidanceGrads",
    "potts_init",
    "guidance_forward",
    "guidance_backward",
]


def potts_init(labels: int) -> np.ndarray:
    """``mu[v, v'] = 1[v != v']``."""
    if labels < 2:
        raise ValueError("need at least two labels")
    return 1.0 - np.eye(labels)


@dataclass
class GuidanceParams:
    mu: np.ndarray
    lam: float = 1.0
    filter_cfg: gf.GuidedFilterConfig = field(default_factory=gf.GuidedFilterConfig)
    iters: int = 3

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if self.mu.ndim != 2 or self.mu.shape[0] != self.mu.shape[1]:
            raise ValueError(f"mu must be square, got shape {self.mu.shape}")
        if not np.isfinite(self.mu).all():
            raise ValueError("mu must be finite")
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ValueError("lambda must be a non-negative real")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")

    @classmethod
    def potts(cls, labels: int, **kwargs) -> "GuidanceParams":
        return cls(mu=potts_init(labels), **kwargs)


@dataclass
class GuidanceCache:
    phi_u: np.ndarray
    q: np.ndarray
    g: np.ndarray
    m: np.ndarray
    plan: gf.GuidedFilterPlan
    mu: np.ndarray
    lam: float


@dataclass
class GuidanceGrads:
    phi_u: np.ndarray
    mu: np.ndarray
    lam: float


def guidance_forward(phi_u, guide, params: GuidanceParams, *, training: bool = False,
                     fast: bool = False, plan: gf.GuidedFilterPlan | None = None):
    """Refine unary energies ``phi_u`` (H, W, L) against a colour guide (H, W, 3).

    Training mode runs a single exact-filter iteration and returns a cache for
    :func:`guidance_backward`; inference runs ``params.iters`` iterations
    (optionally through the down-sampled fast filter) and returns ``cache=None``.
    """
    phi_u = as_tensor(phi_u)
    guide = as_tensor(guide)
    if phi_u.shape[:2] != guide.shape[:2]:
        raise ValueError(f"unary dims {phi_u.shape[:2]} do not match guide dims {guide.shape[:2]}")
    if params.mu.shape != (phi_u.shape[2],) * 2:
        raise ValueError(f"mu shape {params.mu.shape} does not match {phi_u.shape[2]} labels")
    if training and fast:
        raise ValueError("the fast filter path is inference-only")
    cfg = params.filter_cfg
    if fast:
        if cfg.subsample < 2:
            raise ValueError("fast path needs filter_cfg.subsample >= 2")
        fast_plan = gf.plan_fast(guide, cfg)
        filt = lambda q: gf.filter_fast(guide, q, fast_plan=fast_plan)  # noqa: E731
    else:
        if plan is None:
            plan = gf.plan(guide, gf.GuidedFilterConfig(cfg.radius, cfg.epsilon))
        elif plan.shape != phi_u.shape[:2]:
            raise ValueError("plan dims do not match the unaries")
        filt = lambda q: gf.filter(plan, q)  # noqa: E731

    iters = 1 if training else params.iters
    phi = phi_u
    for _ in range(iters):
        q = softmax_local(phi)
        g = filt(q)
        m = g @ params.mu.T
        phi = phi_u + params.lam * m
    cache = GuidanceCache(phi_u, q, g, m, plan, params.mu, params.lam) if training else None
    return phi, cache


def guidance_backward(grad_phi, cache: GuidanceCache | None) -> GuidanceGrads:
    """Gradients of a training-mode forward wrt the unaries, ``mu`` and ``lam``."""
    if cache is None:
        raise ValueError("missing forward cache (run guidance_forward with training=True)")
    grad_phi = np.asarray(grad_phi, dtype=np.float64)
    if grad_phi.shape != cache.phi_u.shape:
        raise ValueError(f"gradient shape {grad_phi.shape} does not match {cache.phi_u.shape}")
    grad_m = cache.lam * grad_phi
    l = grad_phi.shape[2]
    grad_mu = grad_m.reshape(-1, l).T @ cache.g.reshape(-1, l)
    grad_lam = float((grad_phi * cache.m).sum())
    grad_q = gf.filter_transpose(cache.plan, grad_m @ cache.mu)
    grad_phi_u = grad_phi + softmax_backward(cache.q, grad_q)
    return GuidanceGrads(grad_phi_u, grad_mu, grad_lam)
