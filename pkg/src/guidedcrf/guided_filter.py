"""Colour-guided edge-preserving filter.

The filter is linear in its input: ``out_i = sum_j W_ij p_j`` with weights
built from the guide's local means and 3x3 covariances.  Two routes compute
it:

* :func:`plan` + :func:`filter` - the linear-time coefficient algorithm
  (per-window affine coefficients, then averaging over overlapping windows);
* :func:`weight_matrix` - the explicit dense ``W``, an O(N^2) oracle.

Border handling.  Every window is clipped to the image and normalised by its
true pixel count ``|w_k|``.  Window centres range over the image *plus a
margin of ``radius`` pixels*, so every pixel lies in exactly
``|w| = (2r+1)^2`` windows.  This gives

    W_ij = 1/|w| * sum_{k : i, j in w_k} 1/|w_k| * (1 + (I_i - m_k)^T (S_k + eps U)^-1 (I_j - m_k))

which is exactly symmetric and has unit row sums, and equals the textbook
``1/|w|^2`` form wherever all shared windows are interior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import as_tensor, bilinear_resize, box_sum_1d, window_counts

__all__ = [
    "GuidedFilterConfig",
    "GuidedFilterPlan",
    "plan",
    "filter",
    "filter_transpose",
    "filter_fast",
    "plan_fast",
    "FastFilterPlan",
    "weight_matrix",
    "ORACLE_MAX_PIXELS",
]

ORACLE_MAX_PIXELS = 4096

# upper-triangle order of the symmetric 3x3 blocks
_SYM = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


@dataclass(frozen=True)
class GuidedFilterConfig:
    radius: int = 50
    epsilon: float = 1.0
    subsample: int = 1

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError(f"radius must be a positive integer, got {self.radius}")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.subsample) != self.subsample or self.subsample < 1:
            raise ValueError(f"subsample must be a positive integer, got {self.subsample}")

    def low_res_radius(self) -> int:
        """Window radius used at the down-sampled resolution of the fast path."""
        return max(1, math.floor(self.radius / self.subsample + 0.5))


def _extended_box_mean(x: np.ndarray, radius: int) -> np.ndarray:
    """Means over clipped windows whose centres cover the image plus a ``radius`` margin."""
    h, w, _ = x.shape
    s = box_sum_1d(box_sum_1d(x, radius, 0, extend=True), radius, 1, extend=True)
    counts = np.outer(window_counts(h, radius, True), window_counts(w, radius, True))
    return s / counts[:, :, None]


def _full_window_average(x: np.ndarray, radius: int) -> np.ndarray:
    """Average of extended-grid values over the ``(2r+1)^2`` centres covering each pixel."""
    n = 2 * radius + 1
    s = box_sum_1d(box_sum_1d(x, radius, 0), radius, 1)
    # the extended grid is 2r larger; the window around pixel i sits at i + r
    return s[radius:-radius or None, radius:-radius or None] / (n * n)


def _sym_inverse(s: np.ndarray) -> np.ndarray:
    """Inverse of stacked symmetric 3x3 matrices stored as ``_SYM`` components, via the adjugate."""
    a, b, c, d, e, f = (s[..., k] for k in range(6))
    # matrix [[a, b, c], [b, d, e], [c, e, f]]
    c00 = d * f - e * e
    c01 = c * e - b * f
    c02 = b * e - c * d
    c11 = a * f - c * c
    c12 = b * c - a * e
    c22 = a * d - b * b
    det = a * c00 + b * c01 + c * c02
    return np.stack([c00, c01, c02, c11, c12, c22], axis=-1) / det[..., None]


def _sym_matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``m @ v`` for symmetric ``m`` (..., 6) and ``v`` (..., 3, L)."""
    m00, m01, m02, m11, m12, m22 = (m[..., k, None] for k in range(6))
    v0, v1, v2 = v[..., 0, :], v[..., 1, :], v[..., 2, :]
    return np.stack(
        [m00 * v0 + m01 * v1 + m02 * v2,
         m01 * v0 + m11 * v1 + m12 * v2,
         m02 * v0 + m12 * v1 + m22 * v2],
        axis=-2,
    )


@dataclass(frozen=True, eq=False)
class GuidedFilterPlan:
    """Per-window statistics of one guide image; reusable across inputs.

    All window arrays live on the extended centre grid of shape
    ``(H + 2r, W + 2r)``.
    """

    guide: np.ndarray       # (H, W, 3)
    radius: int
    epsilon: float
    mean: np.ndarray        # (H+2r, W+2r, 3) window means of the guide
    cov: np.ndarray         # (H+2r, W+2r, 6) population covariances, _SYM order
    inv: np.ndarray         # (H+2r, W+2r, 6) (cov + eps*U)^-1, _SYM order

    @property
    def shape(self) -> tuple[int, int]:
        return self.guide.shape[:2]

    def covariance_matrices(self) -> np.ndarray:
        """Full ``(H+2r, W+2r, 3, 3)`` covariance matrices."""
        return _unpack_sym(self.cov)

    def coefficients(self, src) -> tuple[np.ndarray, np.ndarray]:
        """Per-window linear coefficients ``a`` ``(.., 3, L)`` and ``b`` ``(.., L)`` for ``src``."""
        src = self._check_input(src)
        r = self.radius
        prod = self.guide[:, :, :, None] * src[:, :, None, :]
        h, w, l = src.shape
        stacked = np.concatenate([src, prod.reshape(h, w, 3 * l)], axis=2)
        means = _extended_box_mean(stacked, r)
        mean_p = means[..., :l]
        mean_ip = means[..., l:].reshape(means.shape[0], means.shape[1], 3, l)
        cov_ip = mean_ip - self.mean[..., :, None] * mean_p[..., None, :]
        a = _sym_matvec(self.inv, cov_ip)
        b = mean_p - np.einsum("...c,...cl->...l", self.mean, a)
        return a, b

    def _check_input(self, src) -> np.ndarray:
        src = as_tensor(src)
        if src.shape[:2] != self.shape:
            raise ValueError(
                f"input dims {src.shape[:2]} do not match plan dims {self.shape}"
            )
        return src


def _unpack_sym(s: np.ndarray) -> np.ndarray:
    out = np.empty(s.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(_SYM):
        out[..., i, j] = s[..., k]
        out[..., j, i] = s[..., k]
    return out


def _check_guide(guide) -> np.ndarray:
    guide = as_tensor(guide)
    if guide.shape[2] != 3:
        raise ValueError(f"guide must have 3 channels, got {guide.shape[2]}")
    return guide


def plan(guide, cfg: GuidedFilterConfig | None = None) -> GuidedFilterPlan:
    """Window means, covariances and regularised inverses of a 3-channel guide."""
    cfg = cfg or GuidedFilterConfig()
    guide = _check_guide(guide)
    r = int(cfg.radius)
    products = np.stack([guide[..., i] * guide[..., j] for i, j in _SYM], axis=-1)
    means = _extended_box_mean(np.concatenate([guide, products], axis=2), r)
    mean = means[..., :3]
    cov = means[..., 3:] - np.stack([mean[..., i] * mean[..., j] for i, j in _SYM], axis=-1)
    reg = cov.copy()
    reg[..., [0, 3, 5]] += cfg.epsilon
    return GuidedFilterPlan(
        guide=guide, radius=r, epsilon=float(cfg.epsilon),
        mean=mean, cov=cov, inv=_sym_inverse(reg),
    )


def _apply_coefficients(guide: np.ndarray, a_bar: np.ndarray, b_bar: np.ndarray) -> np.ndarray:
    return np.einsum("hwc,hwcl->hwl", guide, a_bar) + b_bar


def filter(p: GuidedFilterPlan, src) -> np.ndarray:  # noqa: A001 - mirrors the operation name
    """Apply the guided filter described by plan ``p`` to an L-channel input."""
    a, b = p.coefficients(src)
    h, w = p.shape
    l = b.shape[-1]
    r = p.radius
    ab = _full_window_average(np.concatenate([a.reshape(a.shape[0], a.shape[1], 3 * l), b], axis=2), r)
    return _apply_coefficients(p.guide, ab[..., : 3 * l].reshape(h, w, 3, l), ab[..., 3 * l:])


def filter_transpose(p: GuidedFilterPlan, grad) -> np.ndarray:
    """``W^T @ grad``.  ``W`` is symmetric, so this is the forward filter itself."""
    return filter(p, grad)


@dataclass(frozen=True, eq=False)
class FastFilterPlan:
    """Low-resolution plan of the fast path plus the full-resolution guide it is applied to."""

    guide: np.ndarray           # (H, W, 3) full resolution
    low: GuidedFilterPlan       # statistics of the down-sampled guide

    @property
    def shape(self) -> tuple[int, int]:
        return self.guide.shape[:2]


def plan_fast(guide, cfg: GuidedFilterConfig) -> FastFilterPlan:
    """Down-sample the guide by ``cfg.subsample`` and plan it with radius ``max(1, round(r / s))``."""
    if cfg.subsample < 2:
        raise ValueError("filter_fast needs subsample >= 2")
    guide = _check_guide(guide)
    h, w, _ = guide.shape
    lh, lw = int(round(h / cfg.subsample)), int(round(w / cfg.subsample))
    if lh < 2 or lw < 2:
        raise ValueError(f"down-sampled image {lh}x{lw} is smaller than 2x2")
    low_cfg = GuidedFilterConfig(cfg.low_res_radius(), cfg.epsilon, 1)
    return FastFilterPlan(guide, plan(bilinear_resize(guide, lh, lw), low_cfg))


def filter_fast(guide, src, cfg: GuidedFilterConfig | None = None, *,
                fast_plan: FastFilterPlan | None = None) -> np.ndarray:
    """Approximate :func:`filter` by fitting coefficients at ``1/subsample`` resolution.

    Guide and input are bilinearly down-sampled, the averaged coefficients are
    computed there with radius ``max(1, round(radius / s))``, bilinearly
    up-sampled and applied to the full-resolution guide.  Pass ``fast_plan``
    (from :func:`plan_fast`) to reuse the guide statistics across inputs.
    """
    if fast_plan is None:
        if cfg is None:
            raise ValueError("need cfg or fast_plan")
        fast_plan = plan_fast(guide, cfg)
    low = fast_plan.low
    src = as_tensor(src)
    if src.shape[:2] != fast_plan.shape:
        raise ValueError(f"input dims {src.shape[:2]} do not match guide dims {fast_plan.shape}")
    h, w, l = src.shape
    a, b = low.coefficients(bilinear_resize(src, *low.shape))
    r = low.radius
    ab = _full_window_average(np.concatenate([a.reshape(a.shape[0], a.shape[1], 3 * l), b], axis=2), r)
    ab = bilinear_resize(ab, h, w)
    return _apply_coefficients(fast_plan.guide, ab[..., : 3 * l].reshape(h, w, 3, l), ab[..., 3 * l:])


def weight_matrix(guide, cfg: GuidedFilterConfig | None = None) -> np.ndarray:
    """Dense ``N x N`` filter weights by direct summation over windows (oracle, N <= 4096).

    Window statistics are recomputed here from the pixels of each window, not
    taken from :func:`plan`.
    """
    cfg = cfg or GuidedFilterConfig()
    guide = _check_guide(guide)
    h, w, _ = guide.shape
    n = h * w
    if n > ORACLE_MAX_PIXELS:
        raise ValueError("oracle size exceeded")
    r = int(cfg.radius)
    flat = guide.reshape(n, 3)
    index = np.arange(n).reshape(h, w)
    weights = np.zeros((n, n))
    for ky in range(-r, h + r):
        for kx in range(-r, w + r):
            idx = index[max(ky - r, 0):ky + r + 1, max(kx - r, 0):kx + r + 1].ravel()
            pix = flat[idx]
            mu = pix.mean(axis=0)
            d = pix - mu
            sigma = d.T @ d / len(idx)
            inv = np.linalg.inv(sigma + cfg.epsilon * np.eye(3))
            weights[np.ix_(idx, idx)] += (1.0 + d @ inv @ d.T) / len(idx)
    return weights / (2 * r + 1) ** 2
