"""Synthetic segmentation scenes with noisy unaries standing in for a backbone.

Scenes are coloured ellipses and polygons on a textured background.  Each
class has a colour prior, and (for four or more classes) scenes follow a
co-occurrence rule: class 2 only appears together with class 3, always above
it, and class 1 never appears together with class 3.  Unary
energies are ``-(signal * onehot(jittered labels) + sigma * noise)``, where
the jittered label map grows or shrinks every object by up to ``jitter``
pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = ["SyntheticSample", "make_synthetic_dataset", "render_scene", "noisy_unaries", "PALETTE"]

# class colour priors (class 0 is background)
PALETTE = np.array([
    [0.45, 0.45, 0.40],
    [0.85, 0.20, 0.15],
    [0.15, 0.65, 0.25],
    [0.20, 0.30, 0.85],
    [0.90, 0.80, 0.15],
    [0.70, 0.25, 0.75],
    [0.10, 0.75, 0.80],
    [0.95, 0.55, 0.20],
])


@dataclass
class SyntheticSample:
    image: np.ndarray           # (H, W, 3) in [0, 1]
    labels: np.ndarray          # (H, W) uint8 in [0, L)
    unary: np.ndarray           # (H, W, L) energies
    unary_noise_seed: int


def _ellipse(h, w, rng, cy, cx, size):
    ry = rng.uniform(0.5, 1.0) * size
    rx = rng.uniform(0.5, 1.0) * size
    theta = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _polygon(h, w, rng, cy, cx, size):
    n = rng.integers(3, 7)
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    radii = rng.uniform(0.6, 1.0, n) * size
    vy = cy + radii * np.sin(angles)
    vx = cx + radii * np.cos(angles)
    yy, xx = np.mgrid[0:h, 0:w]
    inside = np.zeros((h, w), dtype=bool)
    # even-odd rule
    for k in range(n):
        y0, x0, y1, x1 = vy[k], vx[k], vy[(k + 1) % n], vx[(k + 1) % n]
        crosses = (y0 > yy) != (y1 > yy)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x0 + (yy - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (xx < xi)
    return inside


def _scene_classes(labels, rng):
    if labels < 4:
        present = [c for c in range(1, labels) if rng.random() < 0.8]
        return present or [int(rng.integers(1, labels))]
    # pair scenes hold 3 (below) and 2 (above); solo scenes hold 1; 1 and 3 never meet
    present = [3, 2] if rng.random() < 0.5 else [1]
    present += [c for c in range(4, labels) if rng.random() < 0.4]
    return present


def _objects(h, w, labels, rng):
    """List of ``(class, mask)`` in paint order."""
    present = _scene_classes(labels, rng)
    out = []
    size_base = min(h, w)
    for c in present:
        size = rng.uniform(0.12, 0.25) * size_base
        cx = rng.uniform(size, w - size)
        if c == 2:
            cy = rng.uniform(size, 0.45 * h)
        elif c == 3:
            cy = rng.uniform(0.6 * h, h - size)
        else:
            cy = rng.uniform(size, h - size)
        shape = _ellipse if rng.random() < 0.5 else _polygon
        mask = shape(h, w, rng, cy, cx, size)
        if mask.any():
            out.append((c, mask))
    return out


def _paint(h, w, objects) -> np.ndarray:
    lab = np.zeros((h, w), dtype=np.uint8)
    for c, mask in objects:
        lab[mask] = c
    return lab


def render_scene(h: int, w: int, labels: int, rng: np.random.Generator):
    """Returns ``(image, label_map, objects)`` for one random scene."""
    objects = _objects(h, w, labels, rng)
    lab = _paint(h, w, objects)
    colours = np.clip(PALETTE[:labels] + rng.uniform(-0.08, 0.08, (labels, 3)), 0, 1)
    image = colours[lab]
    # low-frequency shading plus fine texture
    shade = ndimage.gaussian_filter(rng.normal(0, 1, (h, w)), 6)
    shade *= 0.06 / max(np.abs(shade).max(), 1e-12)
    image = image + shade[..., None] + rng.normal(0, 0.03, (h, w, 3))
    return np.clip(image, 0.0, 1.0), lab, objects


def _jitter_objects(objects, jitter, rng):
    if jitter <= 0:
        return objects
    out = []
    for c, mask in objects:
        d = int(rng.integers(-jitter, jitter + 1))
        if d > 0:
            mask = ndimage.binary_dilation(mask, iterations=d)
        elif d < 0:
            eroded = ndimage.binary_erosion(mask, iterations=-d)
            mask = eroded if eroded.any() else mask
        out.append((c, mask))
    return out


# look-alike pairs used by the class-confusion corruption
CONFUSABLE = {1: 2, 2: 1}


def noisy_unaries(objects, shape, labels, *, sigma, jitter, signal, confusion=0.0, rng) -> np.ndarray:
    """Unary energies from jittered object masks plus Gaussian noise.

    With probability ``confusion`` an object of a confusable class shares its
    evidence with its look-alike class (a fraction drawn from U(0.35, 0.65)).
    """
    h, w = shape
    jittered = _jitter_objects(objects, jitter, rng)
    lab = _paint(h, w, jittered)
    score = signal * np.eye(labels)[lab]
    if confusion > 0:
        for c, mask in jittered:
            other = CONFUSABLE.get(c)
            if other is None or other >= labels or rng.random() >= confusion:
                continue
            frac = rng.uniform(0.35, 0.65)
            region = mask & (lab == c)
            score[region, c] -= signal * frac
            score[region, other] += signal * frac
    if sigma > 0:
        score = score + sigma * rng.normal(0, 1, score.shape)
    return -score


def make_synthetic_dataset(n: int, h: int = 64, w: int = 64, labels: int = 4, seed: int = 0, *,
                           sigma: float = 1.0, jitter: int = 2, signal: float = 1.5,
                           confusion: float = 0.0) -> list[SyntheticSample]:
    """``n`` reproducible samples; the same arguments always give bit-identical data."""
    if not 2 <= labels <= len(PALETTE):
        raise ValueError(f"labels must be in [2, {len(PALETTE)}]")
    if not (32 <= h <= 128 and 32 <= w <= 128):
        raise ValueError("image sides must be in [32, 128]")
    seeds = np.random.SeedSequence(seed).spawn(n)
    samples = []
    for ss in seeds:
        scene_ss, noise_ss = ss.spawn(2)
        image, lab, objects = render_scene(h, w, labels, np.random.default_rng(scene_ss))
        noise_seed = int(noise_ss.generate_state(1)[0])
        unary = noisy_unaries(objects, (h, w), labels, sigma=sigma, jitter=jitter, signal=signal,
                              confusion=confusion, rng=np.random.default_rng(noise_seed))
        samples.append(SyntheticSample(image, lab, unary, noise_seed))
    return samples
