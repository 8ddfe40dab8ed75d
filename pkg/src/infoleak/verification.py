"""Randomized property suites run by ``infoleak verify``.

Each suite is a function of a seed returning :class:`PropertyResult`
entries; sizes are chosen so the whole set runs in well under a minute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .divergence import (
    Channel,
    DiscreteJoint,
    GaussianFeatureModel,
    concentration_check,
    discrete_tail,
    egamma_discrete,
    egamma_gaussian,
    egamma_sup_bruteforce,
    egamma_tail_integral,
    find_tail_dpi_violation,
    gaussian_tail,
    q_function,
)
from .mechanism import (
    calibrate_lambda,
    composition_check,
    leakage_bound,
    random_mechanism_instance,
    verify_feature_guarantee,
)


@dataclass
class PropertyResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.suite}: {self.name} {self.detail}".rstrip()


def _random_pair(rng, n):
    P = rng.dirichlet(np.full(n, rng.choice([0.3, 1.0, 3.0])))
    Q = rng.dirichlet(np.full(n, rng.choice([0.3, 1.0, 3.0])))
    return P / P.sum(), Q / Q.sum()


def suite_egamma(seed: int, trials: int = 1000) -> List[PropertyResult]:
    rng = np.random.default_rng(seed)
    worst, bad_range, bad_mono, bad_dpi = 0.0, 0, 0, 0
    for _ in range(trials):
        n = int(rng.integers(1, 13))
        P, Q = _random_pair(rng, n)
        g = 1.0 + rng.exponential(1.0)
        a = egamma_discrete(P, Q, g)
        worst = max(worst, abs(a - egamma_sup_bruteforce(P, Q, g)))
        bad_range += not (0.0 <= a <= 1.0)
        bad_mono += egamma_discrete(P, Q, g * 1.5) > a + 1e-15
        W = Channel(rng.dirichlet(np.ones(int(rng.integers(1, 6))), size=n))
        bad_dpi += egamma_discrete(W.apply(P), W.apply(Q), g) > a + 1e-12
    return [
        PropertyResult("egamma", "sum form equals subset supremum", worst <= 1e-12, f"max |diff| = {worst:.2e}"),
        PropertyResult("egamma", "value in [0, 1]", bad_range == 0, f"{bad_range} violations"),
        PropertyResult("egamma", "non-increasing in gamma", bad_mono == 0, f"{bad_mono} violations"),
        PropertyResult("egamma", "data processing under random channels", bad_dpi == 0, f"{bad_dpi} violations"),
    ]


def suite_gaussian(seed: int) -> List[PropertyResult]:
    vs = np.linspace(-8, 8, 1601)
    sym = float(np.max(np.abs(q_function(vs) + q_function(-vs) - 1.0)))
    qv = q_function(vs)
    inner = qv[1:] < 1 - 1e-12
    mono = bool(np.all(np.diff(qv) <= 0) and np.all(np.diff(qv)[inner] < 0))
    grid = np.linspace(0.05, 3, 25)
    a_ok = all(egamma_gaussian(a2, 1.0, math.e ** 0.5) >= egamma_gaussian(a1, 1.0, math.e ** 0.5) - 1e-15
               for a1, a2 in zip(grid[:-1], grid[1:]))
    l_ok = all(egamma_gaussian(1.0, l2, math.e ** 0.5) <= egamma_gaussian(1.0, l1, math.e ** 0.5) + 1e-15
               for l1, l2 in zip(grid[:-1], grid[1:]))
    c1, c2 = egamma_gaussian(1, 1, math.exp(0.5)), egamma_gaussian(1, 1, math.exp(0.74))
    return [
        PropertyResult("gaussian", "Q(v) + Q(-v) = 1", sym <= 1e-12, f"max err {sym:.1e}"),
        PropertyResult("gaussian", "Q decreasing on [-8, 8]", mono),
        PropertyResult("gaussian", "theta non-decreasing in the mean gap", a_ok),
        PropertyResult("gaussian", "theta non-increasing in lambda", l_ok),
        PropertyResult("gaussian", "calibration constants 0.238 and 0.180",
                       abs(c1 - 0.238) <= 0.005 and abs(c2 - 0.180) <= 0.005, f"{c1:.5f}, {c2:.5f}"),
    ]


def suite_tail(seed: int, count: int = 20) -> List[PropertyResult]:
    rng = np.random.default_rng(seed)
    worst_g, worst_d = 0.0, 0.0
    for _ in range(count):
        a, lam, eps = rng.uniform(0.1, 3), rng.uniform(0.3, 3), rng.uniform(0, 2)
        worst_g = max(worst_g, abs(egamma_tail_integral(gaussian_tail(a, lam), eps)
                                   - egamma_gaussian(a, lam, math.exp(eps))))
        P, Q = _random_pair(rng, int(rng.integers(2, 9)))
        eps = rng.uniform(0, 1.5)
        worst_d = max(worst_d, abs(egamma_tail_integral(discrete_tail(P, Q), eps)
                                   - egamma_discrete(P, Q, math.exp(eps))))
    return [
        PropertyResult("tail", "tail integral matches Gaussian closed form", worst_g < 1e-3, f"max err {worst_g:.2e}"),
        PropertyResult("tail", "tail integral matches discrete sum", worst_d < 1e-3, f"max err {worst_d:.2e}"),
    ]


def suite_composition(seed: int, instances: int = 100) -> List[PropertyResult]:
    rng = np.random.default_rng(seed)
    bad, worst = 0, -math.inf
    for _ in range(instances):
        eps = float(rng.uniform(0.05, 1.0))
        chk = composition_check(*random_mechanism_instance(rng), eps)
        bad += not chk.holds
        worst = max(worst, chk.composed - chk.delta)
    cert = leakage_bound(0.5, 1.0, 1.0, 7)
    arith = cert.composed_eps == 7 * cert.per_feature_eps and cert.composed_delta == 7 * cert.per_feature_delta
    return [
        PropertyResult("composition", "two-feature composed bound", bad == 0,
                       f"{bad} violations, max excess {worst:.2e}"),
        PropertyResult("composition", "certificate arithmetic", arith),
    ]


def suite_concentration(seed: int, n: int = 10 ** 5) -> List[PropertyResult]:
    out = []
    for rho in (0.2, 0.5):
        rep = concentration_check(GaussianFeatureModel(1, rho), 0.7, [0.1, 0.5, 1.0, 2.0], n, seed)
        out.append(PropertyResult("concentration", f"Gaussian rho={rho} tail below exp(-t)",
                                  not rep.violations, f"{len(rep.violations)} violations"))
    joint = DiscreteJoint(np.array([[0.5, 0.0], [0.0, 0.5]]))
    rep = concentration_check(joint, 0, [0.5], n, seed)
    out.append(PropertyResult("concentration", "correlated binary joint under P_X", not rep.violations,
                              f"tail {rep.rows[0].empirical_tail:.3f} vs {rep.rows[0].bound:.3f}"))
    return out


def suite_dpi(seed: int, joints: int = 50, trials: int = 10 ** 5) -> List[PropertyResult]:
    rng = np.random.default_rng(seed)
    found, bad = 0, 0
    for k in range(joints):
        t = rng.dirichlet(np.full(8, 0.7)).reshape(2, 4)
        w = find_tail_dpi_violation(DiscreteJoint(t / t.sum()), trials, seed + k)
        if w is not None:
            found += 1
            bad += not (w.dpi_holds and w.gap > 0)
            if found >= 5:
                break
    ident = find_tail_dpi_violation(DiscreteJoint(np.full((2, 3), 1 / 6)), 200, seed)
    return [
        PropertyResult("dpi", "tail-probability witness exists", found > 0, f"{found} witnesses"),
        PropertyResult("dpi", "E_gamma data processing holds at every witness", bad == 0, f"{bad} failures"),
        PropertyResult("dpi", "independent joint yields no witness", ident is None),
    ]


def suite_mechanism(seed: int) -> List[PropertyResult]:
    out = []
    for eps, delta in ((0.5, 0.238), (0.74, 0.180), (0.3, 0.05)):
        lam = calibrate_lambda(eps, delta, 1, 1.0)
        ok = egamma_gaussian(1.0, lam, math.exp(eps)) <= delta and \
            egamma_gaussian(1.0, 0.999 * lam, math.exp(eps)) > delta
        out.append(PropertyResult("mechanism", f"calibrated lambda minimal (eps={eps}, delta={delta})", ok,
                                  f"lambda={lam:.6f}"))
    chk = verify_feature_guarantee(0.5, 1.0, 1.0, 2 * 10 ** 5, seed)
    out.append(PropertyResult("mechanism", "Monte-Carlo E_gamma within theta(K) and tight at K", chk.ok,
                              f"estimate at K {chk.rows[-1].estimate:.4f} vs {chk.bound:.4f}"))
    return out


SUITES: Dict[str, Callable[[int], List[PropertyResult]]] = {
    "egamma": suite_egamma,
    "gaussian": suite_gaussian,
    "tail": suite_tail,
    "composition": suite_composition,
    "concentration": suite_concentration,
    "dpi": suite_dpi,
    "mechanism": suite_mechanism,
}


def run_suites(names, seed: int) -> List[PropertyResult]:
    names = list(SUITES) if "all" in names else list(names)
    results = []
    for name in names:
        results.extend(SUITES[name](seed))
    return results
