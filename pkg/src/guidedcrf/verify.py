"""Self-checks run by ``guidedcrf check``: filter-vs-oracle equivalence and gradient checks."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import guided_filter as gf
from .training.gradcheck import grad_check

__all__ = ["CHECKS", "OracleReport", "CheckResult", "oracle_check", "run_checks"]

ORACLE_TOLERANCE = 1e-6
SYMMETRY_TOLERANCE = 1e-12
ROW_SUM_TOLERANCE = 1e-9
RADII = (1, 2, 3)
EPSILONS = (0.1, 1.0, 10.0)
# cmd_check component -> gradient-check components it covers
CHECKS = {
    "guided": (),
    "loss": ("loss",),
    "context": ("context",),
    "guidance": ("guidance", "e2e"),
}


@dataclass
class OracleReport:
    fixtures: int
    max_abs_error: float        # filter vs W @ x
    max_transpose_error: float  # filter_transpose vs W^T @ x
    max_asymmetry: float        # max |W - W^T|
    max_row_sum_error: float    # max |W 1 - 1|

    @property
    def passed(self) -> bool:
        return (self.max_abs_error <= ORACLE_TOLERANCE
                and self.max_transpose_error <= ORACLE_TOLERANCE
                and self.max_asymmetry <= SYMMETRY_TOLERANCE
                and self.max_row_sum_error <= ROW_SUM_TOLERANCE)


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance


def oracle_check(fixtures: int = 20, size: int = 12, labels: int = 3, seed: int = 0) -> OracleReport:
    """Compare the coefficient algorithm with the dense weight matrix on random fixtures.

    Fixtures cycle through every (radius, epsilon) pair in ``RADII x EPSILONS``.
    """
    rng = np.random.default_rng(seed)
    settings = itertools.cycle(itertools.product(RADII, EPSILONS))
    worst = np.zeros(4)
    for _, (radius, eps) in zip(range(fixtures), settings):
        guide = rng.random((size, size, 3))
        x = rng.normal(0, 1, (size, size, labels))
        cfg = gf.GuidedFilterConfig(radius, eps)
        w = gf.weight_matrix(guide, cfg)
        p = gf.plan(guide, cfg)
        flat = x.reshape(-1, labels)
        errs = (
            np.abs(gf.filter(p, x).reshape(-1, labels) - w @ flat).max(),
            np.abs(gf.filter_transpose(p, x).reshape(-1, labels) - w.T @ flat).max(),
            np.abs(w - w.T).max(),
            np.abs(w.sum(axis=1) - 1.0).max(),
        )
        worst = np.maximum(worst, errs)
    return OracleReport(fixtures, *map(float, worst))


def run_checks(component: str = "all", seed: int = 0, perturb: float = 0.0) -> list[CheckResult]:
    """Run the oracle and/or gradient checks selected by ``component``."""
    if component != "all" and component not in CHECKS:
        raise ValueError(f"unknown component {component!r}")
    names = list(CHECKS) if component == "all" else [component]
    results = []
    if "guided" in names:
        rep = oracle_check(seed=seed)
        results += [
            CheckResult("guided: filter vs W", rep.max_abs_error, ORACLE_TOLERANCE),
            CheckResult("guided: transpose vs W^T", rep.max_transpose_error, ORACLE_TOLERANCE),
            CheckResult("guided: |W - W^T|", rep.max_asymmetry, SYMMETRY_TOLERANCE),
            CheckResult("guided: row sums", rep.max_row_sum_error, ROW_SUM_TOLERANCE),
        ]
    for name in names:
        for comp in CHECKS[name]:
            rep = grad_check(comp, seed, perturb=perturb)
            results.append(CheckResult(f"grad: {comp}", rep.max_rel_error, rep.tolerance))
    return results
