"""Coarse-to-fine composition: context CRF -> (up-sample) -> guidance CRF.

Parameters are exposed as a flat ``{name: array}`` mapping so the optimiser,
the parameter-bundle format and the gradient checker share one naming scheme:

========================  ===================
``context.net.w1``        (K1, K1, L, C)
``context.net.b1``        (C,)
``context.net.w2``        (K2, K2, C, L)
``context.net.b2``        (L,)
``context.mu_g``          (L, L, 2)
``context.global.scale``  (L,)
``context.global.bias``   (L,)
``guidance.mu``           (L, L)
``guidance.lambda``       ()
========================  ===================
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import guided_filter as gf
from .context_crf import (
    ContextMessageNet,
    GlobalHead,
    context_backward,
    context_forward,
    indicator_mu_g,
)
from .guidance_crf import GuidanceParams, guidance_backward, guidance_forward
from .tensor import as_tensor, bilinear_resize

__all__ = ["ARCHS", "CRFModel", "ForwardCache"]

# ablation settings: unary only, +high-order, +global nodes, +guidance CRF
ARCHS = {
    "unary": dict(context=False, global_nodes=False, guidance=False),
    "A": dict(context=True, global_nodes=False, guidance=False),
    "B": dict(context=True, global_nodes=True, guidance=False),
    "C": dict(context=True, global_nodes=True, guidance=True),
}


@dataclass
class ForwardCache:
    ctx: object | None
    head: object | None
    guid: object | None
    resized: bool


@dataclass
class CRFModel:
    labels: int
    net: ContextMessageNet | None = None
    head: GlobalHead | None = None
    mu_g: np.ndarray | None = None
    guidance: GuidanceParams | None = None
    context_iters: int = 1
    learn_lambda: bool = False

    @classmethod
    def build(cls, labels: int, arch: str = "C", **kwargs) -> "CRFModel":
        """Default initialisation for one of the :data:`ARCHS` settings.

        Keyword arguments are those of :meth:`from_flags`.
        """
        try:
            flags = ARCHS[arch]
        except KeyError:
            raise ValueError(f"unknown arch {arch!r}; expected one of {list(ARCHS)}") from None
        return cls.from_flags(labels, **flags, **kwargs)

    @classmethod
    def from_flags(cls, labels: int, *, context: bool, global_nodes: bool, guidance: bool,
                   channels: int = 32, k1: int = 15, k2: int = 15,
                   filter_cfg: gf.GuidedFilterConfig | None = None, lam: float = 1.0, iters: int = 3,
                   context_iters: int = 1, rng: np.random.Generator | None = None,
                   head_scale: float = 3.0, head_bias: float = -3.0) -> "CRFModel":
        """Model with the chosen components at their default initialisation.

        The message net starts with a zero output layer, ``mu_g`` at the
        indicator table and the compatibility matrix at Potts, so the initial
        context CRF adds only the global-node message.
        """
        model = cls(labels=labels, context_iters=context_iters)
        if context:
            model.net = ContextMessageNet.init(labels, channels, k1, k2, rng=rng)
        if global_nodes:
            model.head = GlobalHead.init(labels, head_scale, head_bias)
            model.mu_g = indicator_mu_g(labels)
        if guidance:
            model.guidance = GuidanceParams.potts(
                labels, lam=lam, filter_cfg=filter_cfg or gf.GuidedFilterConfig(), iters=iters)
        return model

    # -- parameters --------------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        if self.net is not None:
            out.update({f"context.net.{k}": v for k, v in self.net.params().items()})
        if self.mu_g is not None:
            out["context.mu_g"] = self.mu_g
        if self.head is not None:
            out.update({f"context.global.{k}": v for k, v in self.head.params().items()})
        if self.guidance is not None:
            out["guidance.mu"] = self.guidance.mu
            if self.learn_lambda:
                out["guidance.lambda"] = np.asarray(self.guidance.lam)
        return out

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for name, value in params.items():
            value = np.array(value, dtype=np.float64)
            if name.startswith("context.net."):
                setattr(self.net, name.rsplit(".", 1)[1], value)
            elif name == "context.mu_g":
                self.mu_g = value
            elif name.startswith("context.global."):
                setattr(self.head, name.rsplit(".", 1)[1], value)
            elif name == "guidance.mu":
                self.guidance.mu = value
            elif name == "guidance.lambda":
                self.guidance.lam = float(value)
            else:
                raise KeyError(name)

    @property
    def uses_context(self) -> bool:
        return self.net is not None or self.mu_g is not None

    # -- forward / backward ------------------------------------------------

    def forward(self, phi, image, *, training: bool = False, fast: bool = False):
        """Refined energies at image resolution; returns ``(phi_out, cache)``.

        Unaries coarser than the image are refined by the context CRF at their
        own resolution and bilinearly up-sampled before the guidance CRF.
        """
        phi = as_tensor(phi)
        image = as_tensor(image)
        if phi.shape[2] != self.labels:
            raise ValueError(f"expected {self.labels} labels, got {phi.shape[2]}")
        ctx_cache = head_cache = guid_cache = None
        out = phi
        if self.uses_context:
            if self.head is not None:
                phi_g, head_cache = self.head.forward(phi)
            else:
                phi_g = np.zeros((self.labels, 2))
            iters = 1 if training else self.context_iters
            state, ctx_cache = context_forward(phi, phi_g, self.net, self.mu_g, iters)
            out = state.phi_u
        resized = out.shape[:2] != image.shape[:2]
        if resized:
            if training:
                raise ValueError("training needs unaries at image resolution")
            if out.shape[0] > image.shape[0] or out.shape[1] > image.shape[1]:
                raise ValueError(f"unary dims {out.shape[:2]} exceed image dims {image.shape[:2]}")
            out = bilinear_resize(out, image.shape[0], image.shape[1])
        if self.guidance is not None:
            out, guid_cache = guidance_forward(out, image, self.guidance, training=training, fast=fast)
        return out, ForwardCache(ctx_cache, head_cache, guid_cache, resized)

    def backward(self, grad_out: np.ndarray, cache: ForwardCache) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Gradient wrt the input unaries and every entry of :meth:`params`."""
        grads: dict[str, np.ndarray] = {}
        grad = grad_out
        if self.guidance is not None:
            gg = guidance_backward(grad, cache.guid)
            grads["guidance.mu"] = gg.mu
            if self.learn_lambda:
                grads["guidance.lambda"] = np.asarray(gg.lam)
            grad = gg.phi_u
        if self.uses_context:
            cg = context_backward(grad, cache.ctx)
            grad = cg.phi
            grads.update({f"context.net.{k}": v for k, v in cg.net.items()})
            if self.mu_g is not None:
                grads["context.mu_g"] = cg.mu_g
            if self.head is not None:
                g_phi, g_head = self.head.backward(cg.phi_g, cache.head)
                grad = grad + g_phi
                grads.update({f"context.global.{k}": v for k, v in g_head.items()})
        return grad, grads
