"""Acceptance criteria, each run at its stated tolerance and time budget.

Every test prints one PASS/FAIL line; the lines are repeated in the pytest
terminal summary under "acceptance criteria".
"""

import time

import numpy as np
import pytest

from guidedcrf import bench as bm
from guidedcrf import guided_filter as gf
from guidedcrf.context_crf import (
    ContextMessageNet,
    GlobalHead,
    context_backward,
    context_forward,
    context_iterate,
)
from guidedcrf.guidance_crf import GuidanceParams, guidance_backward, guidance_forward, potts_init
from guidedcrf.model import CRFModel
from guidedcrf.tensor import bilinear_resize
from guidedcrf.training import ablation_datasets, grad_check, run_ablation
from guidedcrf.verify import oracle_check

# regression values from the first verified ablation run (train seed 1, test seed 2, cfg seed 0)
PINNED_ABLATION = {
    "unary": (0.23074072793301048, 0.31273968857231105),
    "A": (0.5732307177357815, 0.4927902311418166),
    "B": (0.596293310761586, 0.5138197211192421),
    "C": (0.62581301642051, 0.5513592784472819),
}
PIN_TOLERANCE = 2e-3


class TestOracle:
    def test_c1_oracle_equivalence(self, criterion):
        t0 = time.perf_counter()
        rep = oracle_check(fixtures=27, size=12)
        secs = time.perf_counter() - t0
        ok = rep.max_abs_error <= 1e-6 and rep.max_transpose_error <= 1e-6 and secs < 10
        criterion("C1 oracle equivalence", ok,
                  f"{rep.fixtures} fixtures, max |filter - W x| {rep.max_abs_error:.2e}, "
                  f"transpose {rep.max_transpose_error:.2e} (<= 1e-6), {secs:.2f} s (< 10 s)")

    def test_c2_row_stochastic_symmetric(self, criterion):
        rep = oracle_check(fixtures=27, size=12)
        # constant preservation through the fast coefficient path as well
        rng = np.random.default_rng(5)
        worst_const = 0.0
        for radius in (1, 2, 3, 8):
            for eps in (0.1, 1.0, 10.0):
                guide = rng.random((12, 12, 3))
                out = gf.filter(gf.plan(guide, gf.GuidedFilterConfig(radius, eps)), np.full((12, 12, 2), 0.7))
                worst_const = max(worst_const, float(np.abs(out - 0.7).max()))
        ok = rep.max_row_sum_error <= 1e-9 and worst_const <= 1e-9 and rep.max_asymmetry <= 1e-12
        criterion("C2 row sums and symmetry", ok,
                  f"max |W1 - 1| {rep.max_row_sum_error:.2e}, constant error {worst_const:.2e} (<= 1e-9), "
                  f"max |W - W^T| {rep.max_asymmetry:.2e} (<= 1e-12)")


class TestGradients:
    def test_c3_gradient_fidelity(self, criterion):
        t0 = time.perf_counter()
        reports = {c: grad_check(c) for c in ("guidance", "context", "e2e")}
        secs = time.perf_counter() - t0
        limits = {"guidance": 1e-5, "context": 1e-5, "e2e": 1e-4}
        ok = all(reports[c].max_rel_error <= limits[c] for c in limits) and secs < 60
        detail = ", ".join(f"{c} {reports[c].max_rel_error:.1e} (<= {limits[c]:.0e})" for c in limits)
        criterion("C3 gradient fidelity", ok, f"{detail}, {secs:.1f} s (< 60 s)")


class TestSpeed:
    def test_c4_radius_independence(self, criterion):
        t0 = time.perf_counter()
        small = bm.bench_guided(512, 512, 5, reps=5)
        large = bm.bench_guided(512, 512, 50, reps=5)
        secs = time.perf_counter() - t0
        ratio = large.seconds / small.seconds
        criterion("C4 radius independence", ratio <= 1.5 and secs < 30,
                  f"512x512 r=50 {large.seconds * 1e3:.0f} ms vs r=5 {small.seconds * 1e3:.0f} ms, "
                  f"ratio {ratio:.2f} (<= 1.5), {secs:.1f} s (< 30 s)")

    def test_c5_dense_speedup(self, criterion):
        t0 = time.perf_counter()
        radius = bm.scaled_radius(50, 512, 64)
        guided = bm.bench_guided(64, 64, radius, labels=4, reps=7)
        dense = bm.bench_dense(64, 64, labels=4, reps=3)
        secs = time.perf_counter() - t0
        speedup = dense.seconds / guided.seconds
        criterion("C5 speed-up over dense pass", speedup >= 50 and secs < 60,
                  f"64x64 L=4 guided r={radius} {guided.seconds * 1e3:.2f} ms, dense "
                  f"{dense.seconds * 1e3:.0f} ms, {speedup:.0f}x (>= 50x), {secs:.1f} s (< 60 s)")

    def test_c6_fast_path(self, criterion):
        exact = bm.bench_guided(512, 512, 50, reps=5)
        fast = bm.bench_guided(512, 512, 50, reps=5, subsample=4)
        speedup = exact.seconds / fast.seconds

        def labels(unary, image, radius, fast):
            params = GuidanceParams(potts_init(4), 1.0, gf.GuidedFilterConfig(radius, 0.01, 4), iters=3)
            return guidance_forward(unary, image, params, fast=fast)[0].argmin(axis=2)

        _, test = ablation_datasets(n_train=0, n_test=20)
        dis_small = [np.mean(labels(s.unary, s.image, 8, False) != labels(s.unary, s.image, 8, True))
                     for s in test]
        dis_large = []
        for s in test[:3]:
            image, unary = bilinear_resize(s.image, 512, 512), bilinear_resize(s.unary, 512, 512)
            dis_large.append(np.mean(labels(unary, image, 50, False) != labels(unary, image, 50, True)))
        worst = max(max(dis_small), max(dis_large))
        criterion("C6 fast path", speedup >= 5 and worst <= 0.02,
                  f"512x512 r=50 exact {exact.seconds * 1e3:.0f} ms vs s=4 {fast.seconds * 1e3:.1f} ms, "
                  f"{speedup:.1f}x (>= 5x); label disagreement max {100 * worst:.2f}% (<= 2%) over "
                  f"{len(dis_small)} 64x64 and {len(dis_large)} 512x512 fixtures")


class TestAblation:
    def test_c7_ablation_ordering(self, criterion):
        t0 = time.perf_counter()
        rows = run_ablation()
        secs = time.perf_counter() - t0
        m = {k: r.mean_iou for k, r in rows.items()}
        t = {k: r.trimap_iou for k, r in rows.items()}
        ordered = m["unary"] < m["A"] < m["C"] and m["B"] >= m["A"]
        margin = t["C"] - t["unary"]
        pinned = all(abs(m[k] - PINNED_ABLATION[k][0]) <= PIN_TOLERANCE
                     and abs(t[k] - PINNED_ABLATION[k][1]) <= PIN_TOLERANCE for k in PINNED_ABLATION)
        ok = ordered and margin >= 0.02 and secs < 15 * 60 and pinned
        table = ", ".join(f"{k} {100 * m[k]:.1f}/{100 * t[k]:.1f}" for k in ("unary", "A", "B", "C"))
        criterion("C7 ablation ordering", ok,
                  f"mIoU/trimap {table}; ordered {ordered}, trimap gain {100 * margin:.1f} pts (>= 2), "
                  f"pinned within {PIN_TOLERANCE:g} {pinned}, {secs:.0f} s (< 900 s)")


class TestIdentities:
    def test_c8_zero_parameter_identities(self, criterion):
        rng = np.random.default_rng(8)
        phi = rng.normal(0, 1, (9, 11, 3))
        image = rng.random((9, 11, 3))
        up = rng.normal(0, 1, phi.shape)
        checks = {}

        checks["resize to same dims"] = np.array_equal(bilinear_resize(phi, 9, 11), phi)

        net = ContextMessageNet.zeros(3, channels=4, k1=3, k2=3)
        mu_g = np.zeros((3, 3, 2))
        phi_g = GlobalHead.zeros(3).forward(phi)[0]
        for k in (1, 2, 3):
            checks[f"context K={k}"] = np.array_equal(context_iterate(phi, phi_g, net, mu_g, k).phi_u, phi)
        state, cache = context_forward(phi, phi_g, net, mu_g, 1)
        checks["context backward"] = np.array_equal(context_backward(up, cache).phi, up)

        potts = GuidanceParams(potts_init(3), 0.0, gf.GuidedFilterConfig(2, 0.1), iters=3)
        zero_mu = GuidanceParams(np.zeros((3, 3)), 1.0, gf.GuidedFilterConfig(2, 0.1), iters=3)
        for name, params in (("lambda=0", potts), ("mu=0", zero_mu)):
            out, gcache = guidance_forward(phi, image, params, training=True)
            checks[f"guidance {name}"] = np.array_equal(out, phi)
            checks[f"guidance {name} backward"] = np.array_equal(guidance_backward(up, gcache).phi_u, up)
            fast = GuidanceParams(params.mu, params.lam, gf.GuidedFilterConfig(2, 0.1, 2), iters=3)
            checks[f"guidance {name} fast"] = np.array_equal(guidance_forward(phi, image, fast, fast=True)[0], phi)

        model = CRFModel.build(3, "C", channels=4, k1=3, k2=3, filter_cfg=gf.GuidedFilterConfig(2, 0.1))
        model.set_params({k: np.zeros_like(v) for k, v in model.params().items()})
        out, mcache = model.forward(phi, image, training=True)
        checks["full model, zero parameters"] = np.array_equal(out, phi)
        checks["full model backward"] = np.array_equal(model.backward(up, mcache)[0], up)
        init_a = CRFModel.build(3, "A", channels=4, k1=3, k2=3, rng=rng)
        checks["context net at initialisation"] = np.array_equal(init_a.forward(phi, image)[0], phi)
        checks["unary model"] = np.array_equal(CRFModel(3).forward(phi, image)[0], phi)

        failed = [k for k, v in checks.items() if not v]
        criterion("C8 zero-parameter identities", not failed,
                  f"{len(checks) - len(failed)}/{len(checks)} exact" + (f"; failed: {failed}" if failed else ""))
