"""Coarse-level context CRF: unary potentials refined by global-node and high-order messages.

Potentials are energies, ``p = softmax(-phi)``.  One iteration computes

    p_hat = softmax(-phi_u),  p_g = softmax(-phi_g_u)           (per pixel / per label row)
    phi_u   <- phi   - U(p_hat) - msg_g2l(p_g)
    phi_g_u <- phi_g - msg_l2g(p_hat)

where ``U`` is a two-layer convolution net on the probability map and the
global messages are bilinear forms in the compatibility table ``mu_g[l, v, y]``
(global label ``l``, local label value ``v``, presence state ``y``; ``y = 1``
means "category present").
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sp_fft

from .tensor import as_tensor, box_filter

__all__ = [
    "ContextMessageNet",
    "GlobalHead",
    "ContextState",
    "ContextCache",
    "ContextGrads",
    "softmax_local",
    "softmax_backward",
    "indicator_mu_g",
    "global_message_to_local",
    "local_message_to_global",
    "high_order_message",
    "context_forward",
    "context_iterate",
    "context_backward",
    "conv2d_same",
]


def softmax_local(phi) -> np.ndarray:
    """Softmax of negated potentials over the last axis (labels)."""
    z = -np.asarray(phi, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    """Gradient wrt ``phi`` given ``p = softmax(-phi)`` and ``dL/dp``."""
    return -p * (grad_p - (p * grad_p).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# convolution block


def _fft_shape(h: int, w: int, k: int) -> tuple[int, int]:
    return sp_fft.next_fast_len(h + k - 1, real=True), sp_fft.next_fast_len(w + k - 1, real=True)


def conv2d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Zero-padded 'same' cross-correlation of ``x`` (H, W, Cin) with ``w`` (K, K, Cin, Cout).

    ``out[i, j] = sum_{dy, dx} x[i + dy - p, j + dx - p] @ w[dy, dx]`` with ``p = K // 2``,
    evaluated by FFT on a grid large enough that nothing wraps.
    """
    h, wd, _ = x.shape
    k = w.shape[0]
    p = k // 2
    shape = _fft_shape(h, wd, k)
    xf = sp_fft.rfft2(x, s=shape, axes=(0, 1))
    wf = sp_fft.rfft2(w[::-1, ::-1], s=shape, axes=(0, 1))
    full = sp_fft.irfft2(np.einsum("hwc,hwco->hwo", xf, wf), s=shape, axes=(0, 1))
    out = full[p:p + h, p:p + wd]
    if b is not None:
        out = out + b
    return np.ascontiguousarray(out)


def _conv_grad_weight(x: np.ndarray, grad_out: np.ndarray, k: int) -> np.ndarray:
    # gw[dy, dx] = sum_i x[i + d - p] (x) grad_out[i]: a cross-correlation at shifts -p..p
    h, wd, _ = x.shape
    p = k // 2
    shape = _fft_shape(h, wd, k)
    xf = sp_fft.rfft2(x, s=shape, axes=(0, 1))
    gf = sp_fft.rfft2(grad_out, s=shape, axes=(0, 1))
    corr = sp_fft.irfft2(np.einsum("hwc,hwo->hwco", xf, gf.conj()), s=shape, axes=(0, 1))
    shifts = np.arange(-p, p + 1)
    return np.ascontiguousarray(corr[np.ix_(shifts % shape[0], shifts % shape[1])])


def _conv_grad_input(grad_out: np.ndarray, w: np.ndarray) -> np.ndarray:
    # adjoint of a same-padded correlation with an odd kernel: correlate with the flipped, transposed kernel
    return conv2d_same(grad_out, w[::-1, ::-1].transpose(0, 1, 3, 2))


@dataclass
class ContextMessageNet:
    """conv(K1, L->C) -> ReLU -> conv(K2, C->L), stride 1, same padding.

    The receptive field is ``K1 + K2 - 1`` pixels; the defaults (15, 15) give
    29 px, about half of a 64 px image.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        k1, k2 = self.w1.shape[0], self.w2.shape[0]
        if k1 % 2 == 0 or k2 % 2 == 0:
            raise ValueError("kernel sizes must be odd")
        if self.w1.shape[1] != k1 or self.w2.shape[1] != k2:
            raise ValueError("kernels must be square")
        if self.w1.shape[3] != self.w2.shape[2] or self.w1.shape[2] != self.w2.shape[3]:
            raise ValueError("layer channel counts do not chain")

    @classmethod
    def init(cls, labels: int, channels: int = 32, k1: int = 15, k2: int = 15,
             rng: np.random.Generator | None = None, scale: float | None = None) -> "ContextMessageNet":
        """Small uniform first layer, zero second layer (the net starts as the zero message)."""
        rng = rng if rng is not None else np.random.default_rng(0)
        if scale is None:
            scale = 1.0 / np.sqrt(k1 * k1 * labels)
        return cls(
            w1=rng.uniform(-scale, scale, (k1, k1, labels, channels)),
            b1=np.zeros(channels),
            w2=np.zeros((k2, k2, channels, labels)),
            b2=np.zeros(labels),
        )

    @classmethod
    def zeros(cls, labels: int, channels: int = 32, k1: int = 15, k2: int = 15) -> "ContextMessageNet":
        return cls(np.zeros((k1, k1, labels, channels)), np.zeros(channels),
                   np.zeros((k2, k2, channels, labels)), np.zeros(labels))

    @property
    def labels(self) -> int:
        return self.w1.shape[2]

    @property
    def receptive_field(self) -> int:
        return self.w1.shape[0] + self.w2.shape[0] - 1

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def forward(self, p_hat: np.ndarray):
        pre = conv2d_same(p_hat, self.w1, self.b1)
        hidden = np.maximum(pre, 0.0)
        out = conv2d_same(hidden, self.w2, self.b2)
        return out, (p_hat, pre, hidden)

    def backward(self, grad_out: np.ndarray, cache) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        p_hat, pre, hidden = cache
        grads = {
            "w2": _conv_grad_weight(hidden, grad_out, self.w2.shape[0]),
            "b2": grad_out.sum(axis=(0, 1)),
        }
        grad_pre = _conv_grad_input(grad_out, self.w2) * (pre > 0)
        grads["w1"] = _conv_grad_weight(p_hat, grad_pre, self.w1.shape[0])
        grads["b1"] = grad_pre.sum(axis=(0, 1))
        return _conv_grad_input(grad_pre, self.w1), grads


@dataclass
class GlobalHead:
    """Global-node unaries from the local unary map.

    Each label's score map ``-phi`` is averaged over ``(2r+1)^2`` windows and
    max-pooled over the image, ``s_l = max_i mean_{w_i}(-phi[:, l])``; then
    ``phi_g[l, 1] = -(scale_l * s_l + bias_l)`` and ``phi_g[l, 0] = 0``.
    The local mean keeps single noisy pixels from dominating the max.
    """

    scale: np.ndarray
    bias: np.ndarray
    pool_radius: int = 2

    @classmethod
    def zeros(cls, labels: int, pool_radius: int = 2) -> "GlobalHead":
        return cls(np.zeros(labels), np.zeros(labels), pool_radius)

    @classmethod
    def init(cls, labels: int, scale: float = 1.0, bias: float = 0.0, pool_radius: int = 2) -> "GlobalHead":
        # a non-zero scale makes p_g informative from the first update; with
        # scale = 0 the global tables receive no useful gradient
        return cls(np.full(labels, float(scale)), np.full(labels, float(bias)), pool_radius)

    def params(self) -> dict[str, np.ndarray]:
        return {"scale": self.scale, "bias": self.bias}

    def forward(self, phi: np.ndarray):
        h, w, l = phi.shape
        smooth = box_filter(-phi, self.pool_radius).reshape(-1, l)
        arg = smooth.argmax(axis=0)
        pooled = smooth[arg, np.arange(l)]
        phi_g = np.zeros((l, 2))
        phi_g[:, 1] = -(self.scale * pooled + self.bias)
        return phi_g, (phi.shape, arg, pooled)

    def backward(self, grad_phi_g: np.ndarray, cache):
        (h, w, l), arg, pooled = cache
        g1 = grad_phi_g[:, 1]
        grads = {"scale": -g1 * pooled, "bias": -g1}
        r = self.pool_radius
        grad_phi = np.zeros((h, w, l))
        for k, idx in enumerate(arg):
            y, x = divmod(int(idx), w)
            win = (slice(max(y - r, 0), y + r + 1), slice(max(x - r, 0), x + r + 1), k)
            # two sign flips: phi_g = -(scale * mean(-phi))
            grad_phi[win] = g1[k] * self.scale[k] / grad_phi[win].size
        return grad_phi, grads


# ---------------------------------------------------------------------------
# messages


def indicator_mu_g(labels: int) -> np.ndarray:
    """``mu_g[l, v, y] = 1[v == l and y == 1]``."""
    mu = np.zeros((labels, labels, 2))
    mu[np.arange(labels), np.arange(labels), 1] = 1.0
    return mu


def global_message_to_local(p_g: np.ndarray, mu_g: np.ndarray) -> np.ndarray:
    """Expected global compatibility for each local label value: ``sum_l sum_y p_g[l,y] mu_g[l,v,y]``."""
    return np.einsum("ly,lvy->v", p_g, mu_g)


def local_message_to_global(p_hat: np.ndarray, mu_g: np.ndarray) -> np.ndarray:
    """``(L, 2)`` table ``sum_i sum_v p_hat[i,v] mu_g[l,v,y]``."""
    return np.einsum("v,lvy->ly", p_hat.sum(axis=(0, 1)), mu_g)


def high_order_message(p_hat: np.ndarray, net: ContextMessageNet) -> np.ndarray:
    """Clique-to-node message map ``U(p_hat)``; a function of the probability map only."""
    return net.forward(p_hat)[0]


# ---------------------------------------------------------------------------
# iteration


@dataclass
class ContextState:
    phi_u: np.ndarray   # (H, W, L)
    phi_g: np.ndarray   # (L, 2)
    p_hat: np.ndarray   # probabilities used by the last update
    p_g: np.ndarray
    iteration: int = 0


@dataclass
class ContextCache:
    phi: np.ndarray
    phi_g: np.ndarray
    p_hat: np.ndarray
    p_g: np.ndarray
    net: ContextMessageNet | None
    net_cache: tuple | None
    mu_g: np.ndarray | None


@dataclass
class ContextGrads:
    phi: np.ndarray
    phi_g: np.ndarray
    net: dict[str, np.ndarray] = field(default_factory=dict)
    mu_g: np.ndarray | None = None


def context_forward(phi, phi_g, net: ContextMessageNet | None, mu_g: np.ndarray | None,
                    iters: int = 1) -> tuple[ContextState, ContextCache | None]:
    """Run ``iters`` message-passing iterations; returns the state and, for ``iters == 1``, a cache.

    ``net=None`` or ``mu_g=None`` switch the corresponding message off.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    phi = as_tensor(phi)
    phi_g = np.asarray(phi_g, dtype=np.float64)
    if phi_g.shape != (phi.shape[2], 2):
        raise ValueError(f"phi_g must have shape {(phi.shape[2], 2)}, got {phi_g.shape}")
    phi_u, phi_g_u = phi, phi_g
    net_cache = None
    for _ in range(iters):
        p_hat = softmax_local(phi_u)
        p_g = softmax_local(phi_g_u)
        new_phi_u = phi
        new_phi_g = phi_g
        if net is not None:
            msg, net_cache = net.forward(p_hat)
            new_phi_u = new_phi_u - msg
        if mu_g is not None:
            new_phi_u = new_phi_u - global_message_to_local(p_g, mu_g)
            new_phi_g = new_phi_g - local_message_to_global(p_hat, mu_g)
        phi_u, phi_g_u = new_phi_u, new_phi_g
    state = ContextState(phi_u, phi_g_u, p_hat, p_g, iters)
    cache = None
    if iters == 1:
        cache = ContextCache(phi, phi_g, p_hat, p_g, net, net_cache, mu_g)
    return state, cache


def context_iterate(phi, phi_g, net: ContextMessageNet | None, mu_g: np.ndarray | None,
                    iters: int = 1) -> ContextState:
    """Marginal potentials after ``iters`` iterations (default one)."""
    return context_forward(phi, phi_g, net, mu_g, iters)[0]


def context_backward(grad_phi_u: np.ndarray, cache: ContextCache | None,
                     grad_phi_g_u: np.ndarray | None = None) -> ContextGrads:
    """Reverse-mode gradients of a single iteration.

    ``grad_phi_g_u`` is the optional upstream gradient of the global-node
    output potentials.
    """
    if cache is None:
        raise ValueError("missing forward cache (backward needs a one-iteration forward)")
    grad_phi = np.array(grad_phi_u, dtype=np.float64)
    grad_phi_g = np.zeros_like(cache.phi_g)
    grad_p_hat = np.zeros_like(cache.p_hat)
    grads = ContextGrads(phi=grad_phi, phi_g=grad_phi_g)

    if cache.net is not None:
        g_in, grads.net = cache.net.backward(-grad_phi_u, cache.net_cache)
        grad_p_hat += g_in

    if cache.mu_g is not None:
        mu_g = cache.mu_g
        grad_msg = -grad_phi_u.sum(axis=(0, 1))                       # (L,)
        grads.mu_g = np.einsum("v,ly->lvy", grad_msg, cache.p_g)
        grad_p_g = np.einsum("v,lvy->ly", grad_msg, mu_g)
        if grad_phi_g_u is not None:
            grad_phi_g_u = np.asarray(grad_phi_g_u, dtype=np.float64)
            grad_phi_g += grad_phi_g_u
            totals = cache.p_hat.sum(axis=(0, 1))
            grads.mu_g -= np.einsum("v,ly->lvy", totals, grad_phi_g_u)
            grad_p_hat -= np.einsum("ly,lvy->v", grad_phi_g_u, mu_g)
        grad_phi_g += softmax_backward(cache.p_g, grad_p_g)
    elif grad_phi_g_u is not None:
        grad_phi_g += grad_phi_g_u

    if cache.net is not None or (cache.mu_g is not None and grad_phi_g_u is not None):
        grad_phi += softmax_backward(cache.p_hat, grad_p_hat)
    return grads

