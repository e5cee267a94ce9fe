"""Central finite-difference checks of every analytic backward pass.

Each component is checked on a small random fixture (6x6 images, L=3, a
narrow 4-channel message net) against ``(f(x+h) - f(x-h)) / 2h`` with
``h = 1e-5`` for every entry of every input and parameter.  The error of one
entry is ``|a - b| / max(|a|, |b|, 1e-8)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import guided_filter as gf
from ..context_crf import ContextMessageNet, GlobalHead, context_backward, context_forward
from ..guidance_crf import GuidanceParams, guidance_backward, guidance_forward
from ..model import CRFModel
from .objective import cross_entropy_loss

__all__ = ["COMPONENTS", "TOLERANCES", "GradCheckReport", "grad_check", "numerical_gradient",
           "relative_error"]

TOLERANCES = {"loss": 1e-6, "context": 1e-5, "guidance": 1e-5, "e2e": 1e-4}
COMPONENTS = tuple(TOLERANCES)
STEP = 1e-5
LABELS = 3
SIDE = 6


@dataclass
class GradCheckReport:
    component: str
    tolerance: float
    groups: dict[str, float] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.groups.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float((np.abs(a - b) / denom).max())


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of ``f`` wrt every entry of ``x`` (perturbed in place, then restored)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        fp = f()
        flat[k] = old - h
        fm = f()
        flat[k] = old
        gflat[k] = (fp - fm) / (2 * h)
    return grad


# -- fixtures: each returns (inputs, objective, analytic) ---------------------
# ``objective()`` reads the arrays in ``inputs``; ``analytic()`` returns the
# gradient of the objective wrt each of them.

def _net(rng) -> ContextMessageNet:
    net = ContextMessageNet.init(LABELS, channels=4, k1=3, k2=3, rng=rng)
    net.w2 = rng.normal(0, 0.3, net.w2.shape)
    net.b1 = rng.normal(0, 0.1, net.b1.shape)
    net.b2 = rng.normal(0, 0.1, net.b2.shape)
    return net


def _loss_fixture(rng):
    phi = rng.normal(0, 1, (4, 4, LABELS))
    labels = rng.integers(0, LABELS, (4, 4))
    labels[0, 0] = 255
    inputs = {"phi": phi}

    def objective():
        return cross_entropy_loss(phi, labels)[0]

    def analytic():
        return {"phi": cross_entropy_loss(phi, labels)[1]}

    return inputs, objective, analytic


def _context_fixture(rng):
    net = _net(rng)
    inputs = {
        "phi": rng.normal(0, 1, (SIDE, SIDE, LABELS)),
        "mu_g": rng.normal(0, 1, (LABELS, LABELS, 2)),
        "global.scale": rng.normal(0, 1, LABELS),
        "global.bias": rng.normal(0, 1, LABELS),
        **{f"net.{k}": v for k, v in net.params().items()},
    }
    r_local = rng.normal(0, 1, (SIDE, SIDE, LABELS))
    r_global = rng.normal(0, 1, (LABELS, 2))

    def build():
        n = ContextMessageNet(inputs["net.w1"], inputs["net.b1"], inputs["net.w2"], inputs["net.b2"])
        head = GlobalHead(inputs["global.scale"], inputs["global.bias"])
        phi_g, head_cache = head.forward(inputs["phi"])
        state, cache = context_forward(inputs["phi"], phi_g, n, inputs["mu_g"], 1)
        return head, head_cache, state, cache

    def objective():
        _, _, state, _ = build()
        return float((r_local * state.phi_u).sum() + (r_global * state.phi_g).sum())

    def analytic():
        head, head_cache, _, cache = build()
        g = context_backward(r_local, cache, r_global)
        g_phi, g_head = head.backward(g.phi_g, head_cache)
        out = {"phi": g.phi + g_phi, "mu_g": g.mu_g}
        out.update({f"net.{k}": v for k, v in g.net.items()})
        out.update({f"global.{k}": v for k, v in g_head.items()})
        return out

    return inputs, objective, analytic


def _guidance_fixture(rng):
    guide = rng.random((SIDE, SIDE, 3))
    cfg = gf.GuidedFilterConfig(radius=1, epsilon=0.1)
    inputs = {
        "phi_u": rng.normal(0, 1, (SIDE, SIDE, LABELS)),
        "mu": rng.normal(0, 1, (LABELS, LABELS)),
        "lambda": np.array(0.5 + rng.random()),
    }
    weights = rng.normal(0, 1, (SIDE, SIDE, LABELS))
    p = gf.plan(guide, cfg)

    def run():
        params = GuidanceParams(inputs["mu"], float(inputs["lambda"]), cfg, iters=1)
        return guidance_forward(inputs["phi_u"], guide, params, training=True, plan=p)

    def objective():
        return float((weights * run()[0]).sum())

    def analytic():
        g = guidance_backward(weights, run()[1])
        return {"phi_u": g.phi_u, "mu": g.mu, "lambda": np.asarray(g.lam)}

    return inputs, objective, analytic


def _e2e_fixture(rng):
    model = CRFModel.build(LABELS, "C", channels=4, k1=3, k2=3,
                           filter_cfg=gf.GuidedFilterConfig(radius=1, epsilon=0.1), rng=rng)
    model.learn_lambda = True
    model.net = _net(rng)
    params = {k: np.array(v, dtype=np.float64) for k, v in model.params().items()}
    params["context.mu_g"] = rng.normal(0, 1, params["context.mu_g"].shape)
    params["guidance.mu"] = params["guidance.mu"] + rng.normal(0, 0.3, params["guidance.mu"].shape)
    params["context.global.scale"] = rng.normal(0, 1, LABELS)
    params["context.global.bias"] = rng.normal(0, 1, LABELS)
    params["guidance.lambda"] = np.array(0.5 + rng.random())
    image = rng.random((SIDE, SIDE, 3))
    labels = rng.integers(0, LABELS, (SIDE, SIDE))
    inputs = {"phi": rng.normal(0, 1, (SIDE, SIDE, LABELS)), **params}

    def run():
        model.set_params(params)
        out, cache = model.forward(inputs["phi"], image, training=True)
        loss, grad = cross_entropy_loss(out, labels)
        return loss, grad, cache

    def objective():
        return run()[0]

    def analytic():
        _, grad, cache = run()
        g_phi, grads = model.backward(grad, cache)
        return {"phi": g_phi, **grads}

    return inputs, objective, analytic


_FIXTURES = {"loss": _loss_fixture, "context": _context_fixture, "guidance": _guidance_fixture,
             "e2e": _e2e_fixture}


def grad_check(component: str, seed: int = 0, *, perturb: float = 0.0) -> GradCheckReport:
    """Max relative error per input/parameter group for ``component``.

    ``perturb`` scales every analytic gradient by ``1 + perturb``; it exists
    so the checker itself can be shown to fail on a broken backward pass.
    """
    if component not in _FIXTURES:
        raise ValueError(f"unknown component {component!r}; expected one of {list(_FIXTURES)}")
    rng = np.random.default_rng(seed)
    inputs, objective, analytic = _FIXTURES[component](rng)
    exact = analytic()
    report = GradCheckReport(component, TOLERANCES[component])
    for name, x in inputs.items():
        numeric = numerical_gradient(objective, x)
        report.groups[name] = relative_error(exact[name] * (1.0 + perturb), numeric)
    return report
