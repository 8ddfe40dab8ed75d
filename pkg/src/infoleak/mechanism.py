"""Leaking-feature detection and the per-feature Gaussian obfuscation mechanism.

A feature x_j is flagged when the conditional information density
i(s; x_j | x^{j-1}) exceeds ``eps`` in magnitude for some attribute value.
Flagged features receive N(0, lam^2 I) noise. If every released feature
satisfies E_{e^eps}(P_{Y_j|s,y^{j-1}} || P_{Y_j|y^{j-1}}) <= delta/m, the
whole release satisfies E_{e^{m eps}}(P_{Y|s} || P_Y) <= delta. For the
Gaussian branch the per-feature value is at most theta_{e^eps}(K, lam),
K being the largest feature norm.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .divergence import DiscreteJoint, egamma_discrete, egamma_sup_bruteforce, theta
from .errors import InvalidParameterError, NumericalError, ShapeMismatchError
from .estimators.network import TideModel

log = logging.getLogger(__name__)

NEAR_VACUOUS = 0.99

CERTIFICATE_CAVEAT = (
    "The composed bound assumes every released feature meets the per-feature "
    "E_gamma bound. Noised features meet it by the Gaussian calibration. Features "
    "released unperturbed were only checked against the information density "
    "threshold eps, which is a different condition, so the composed bound is "
    "conditional on that assumption. Output clamping, if enabled, is "
    "post-processing and cannot increase E_gamma."
)


@dataclass
class MechanismConfig:
    """Parameters of detection, calibration and composition accounting."""

    eps: float
    delta: float
    m: int
    K: float
    lam: float
    M: float = 5.0
    clamp_output: bool = False

    def __post_init__(self):
        if not self.eps >= 0:
            raise InvalidParameterError("eps must be >= 0")
        if not 0 < self.delta <= 1:
            raise InvalidParameterError("delta must lie in (0, 1]")
        if self.m < 1:
            raise InvalidParameterError("m must be a positive integer")
        if not (self.K > 0 and self.lam > 0 and self.M > 0):
            raise InvalidParameterError("K, lam and M must be positive")

    @classmethod
    def calibrated(cls, eps, delta, m, K, M=5.0, clamp_output=False) -> "MechanismConfig":
        return cls(eps, delta, m, K, calibrate_lambda(eps, delta, m, K), M, clamp_output)

    def per_feature_delta(self) -> float:
        return theta(self.eps, self.K, self.lam) if math.isfinite(self.eps) else 0.0

    def satisfied(self) -> bool:
        """Whether theta_{e^eps}(K, lam) <= delta / m."""
        return self.per_feature_delta() <= self.delta / self.m


@dataclass
class LeakageReport:
    """Per-position scores and flags for one sample under a feature ordering.

    ``scores[k]`` is max_s |i(s; x_{o_k} | x_{o_1}, ..., x_{o_{k-1}})| with
    ``o = ordering``; ``argmax_s[k]`` is the attribute value attaining it.
    """

    ordering: list
    scores: list
    flags: list
    argmax_s: list
    eps: float

    def __post_init__(self):
        m = len(self.ordering)
        if not (len(self.scores) == len(self.flags) == len(self.argmax_s) == m):
            raise ShapeMismatchError("report fields must all have one entry per feature")
        if sorted(self.ordering) != list(range(m)):
            raise InvalidParameterError("ordering must be a permutation of 0..m-1")

    @property
    def m(self) -> int:
        return len(self.ordering)

    def flags_by_feature(self) -> np.ndarray:
        out = np.zeros(self.m, dtype=bool)
        out[np.asarray(self.ordering, dtype=int)] = self.flags
        return out

    def scores_by_feature(self) -> np.ndarray:
        out = np.zeros(self.m)
        out[np.asarray(self.ordering, dtype=int)] = self.scores
        return out

    @property
    def leaking(self) -> list:
        """Original indices of flagged features."""
        return [int(j) for j in np.flatnonzero(self.flags_by_feature())]

    def to_dict(self) -> dict:
        return {
            "eps": _json_float(self.eps),
            "ordering": [int(v) for v in self.ordering],
            "features": [
                {"position": k, "feature": int(self.ordering[k]), "score": _json_float(self.scores[k]),
                 "argmax_s": _json_scalar(self.argmax_s[k]), "leaking": bool(self.flags[k])}
                for k in range(self.m)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "LeakageReport":
        feats = sorted(d["features"], key=lambda r: r["position"])
        return cls([int(v) for v in d["ordering"]], [float(r["score"]) for r in feats],
                   [bool(r["leaking"]) for r in feats], [r["argmax_s"] for r in feats], float(d["eps"]))


def _json_float(v):
    v = float(v)
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")


def _json_scalar(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v)
    return v


@dataclass
class GuaranteeCertificate:
    """Per-feature and composed E_gamma guarantees."""

    per_feature_eps: float
    per_feature_delta: float
    composed_eps: float
    composed_delta: float
    K: float
    lam: float
    m: int
    caveat: str = CERTIFICATE_CAVEAT
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_feature_eps"] = _json_float(self.per_feature_eps)
        d["composed_eps"] = _json_float(self.composed_eps)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def format_block(self) -> str:
        rows = [
            ("eps (per feature)", self.per_feature_eps),
            ("delta/m (per feature)", self.per_feature_delta),
            ("lambda", self.lam),
            ("K", self.K),
            ("m", self.m),
            ("composed eps (m*eps)", self.composed_eps),
            ("composed delta", self.composed_delta),
        ]
        lines = ["guarantee certificate"]
        lines += [f"  {k:<24s}{v:.6g}" if isinstance(v, float) else f"  {k:<24s}{v}" for k, v in rows]
        for k, v in self.notes.items():
            lines.append(f"  {k:<24s}{v:.6g}" if isinstance(v, float) else f"  {k:<24s}{v}")
        lines.append("  note: " + self.caveat)
        return "\n".join(lines)


# -- detection ------------------------------------------------------------

def _prefix_matrix_tide(model: TideModel, x_ordered: np.ndarray, s_alphabet) -> np.ndarray:
    """i-hat(s; x^j) for every s in the alphabet and j = 0..m, shape (|S|, m+1)."""
    m = model.n_features
    n_s = len(s_alphabet)
    flat = x_ordered.reshape(1, -1)
    if flat.shape[1] != m * model.feature_dim:
        raise ShapeMismatchError(f"sample has {flat.shape[1]} values, model expects {m * model.feature_dim}")
    s_rows = np.repeat(np.asarray(s_alphabet, dtype=np.float64).reshape(n_s, -1), m + 1, axis=0)
    x_rows = np.repeat(flat, n_s * (m + 1), axis=0)
    pre = np.tile(np.arange(m + 1), n_s)
    if not model.prefix_mask_supported and m > 1:
        raise ShapeMismatchError("conditional densities need a model trained with prefix masking")
    if not model.prefix_mask_supported:
        out = np.zeros((n_s, 2))
        out[:, 1] = model.evaluate(s_rows[1::2], x_rows[1::2])
        return out
    return model.evaluate(s_rows, x_rows, pre).reshape(n_s, m + 1)


def _prefix_matrix_joint(joint: DiscreteJoint, x_ordered, s_alphabet, ordering) -> np.ndarray:
    reordered = DiscreteJoint(np.transpose(joint.table, (0, *(1 + np.asarray(ordering)))))
    m = joint.n_features
    return np.array([[reordered.prefix_density(int(s), x_ordered, j) for j in range(m + 1)]
                     for s in s_alphabet])


def identify_leaking(estimator, x, s_alphabet: Sequence, eps: float,
                     ordering: Optional[Sequence[int]] = None) -> LeakageReport:
    """Flag features whose conditional density exceeds ``eps`` for some s.

    Parameters
    ----------
    estimator : TideModel, DiscreteJoint or callable
        A prefix-capable TIDE (trained on features in ``ordering``), an exact
        discrete oracle, or ``f(s, x_ordered, j) -> i(s; x^j)``.
    x : array, shape (m,) or (m, r)
        One sample, features in their original order.
    s_alphabet : sequence
        Attribute values to maximize over.
    eps : float
        Threshold; ``inf`` flags nothing.
    ordering : sequence of int, optional
        Revelation order; identity by default.
    """
    if len(s_alphabet) == 0:
        raise InvalidParameterError("attribute alphabet is empty")
    if not eps >= 0:
        raise InvalidParameterError("eps must be >= 0")
    x = np.asarray(x)
    m = x.shape[0]
    order = list(range(m)) if ordering is None else [int(v) for v in ordering]
    if sorted(order) != list(range(m)):
        raise InvalidParameterError("ordering must be a permutation of the feature indices")
    x_ordered = x[order]
    if isinstance(estimator, TideModel):
        if estimator.n_features != m:
            raise ShapeMismatchError(f"model has {estimator.n_features} features, sample has {m}")
        pm = _prefix_matrix_tide(estimator, x_ordered.astype(np.float64), s_alphabet)
    elif isinstance(estimator, DiscreteJoint):
        pm = _prefix_matrix_joint(estimator, x_ordered, s_alphabet, order)
    elif callable(estimator):
        pm = np.array([[0.0] + [float(estimator(s, x_ordered, j)) for j in range(1, m + 1)]
                       for s in s_alphabet])
    else:
        raise InvalidParameterError(f"unsupported estimator type {type(estimator).__name__}")
    with np.errstate(invalid="ignore"):
        cond = np.abs(np.diff(pm, axis=1))
    cond = np.where(np.isnan(cond), np.inf, cond)
    best = np.argmax(cond, axis=0)
    scores = cond[best, np.arange(m)]
    flags = [bool(v > eps) for v in scores]
    return LeakageReport(order, [float(v) for v in scores], flags,
                         [_json_scalar(s_alphabet[b]) for b in best], float(eps))


# -- calibration ----------------------------------------------------------

def calibrate_lambda(eps: float, delta: float, m: int, K: float, rtol: float = 1e-9,
                     max_doublings: int = 200) -> float:
    """Smallest lam with theta_{e^eps}(K, lam) <= delta / m.

    Bisection on the decreasing map lam -> theta; the bracket starts at
    [1e-6 K, K] and doubles upward until the bound is met.
    """
    if not K > 0:
        raise InvalidParameterError("K must be positive")
    if m < 1 or not delta > 0 or not eps >= 0:
        raise InvalidParameterError("need m >= 1, delta > 0, eps >= 0")
    target = delta / m
    lo, hi = 1e-6 * K, K
    if target >= 1:
        warnings.warn("delta/m >= 1 makes the bound vacuous; returning the bracket floor", stacklevel=2)
        return lo
    if target >= NEAR_VACUOUS:
        warnings.warn(f"delta/m = {target:g} is close to 1; the guarantee is nearly vacuous", stacklevel=2)
    if theta(eps, K, lo) <= target:
        return lo
    for _ in range(max_doublings):
        if theta(eps, K, hi) <= target:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NumericalError(f"no lambda up to {hi:g} satisfies the bound {target:g}")
    for _ in range(400):
        if hi - lo <= rtol * hi:
            return hi
        mid = 0.5 * (lo + hi)
        if theta(eps, K, mid) <= target:
            hi = mid
        else:
            lo = mid
    raise NumericalError("bisection did not converge")


def leakage_bound(eps: float, lam: float, K: float, m: int) -> GuaranteeCertificate:
    """Certificate for the Gaussian mechanism with noise scale ``lam``."""
    if not (lam > 0 and K > 0 and m >= 1 and eps >= 0):
        raise InvalidParameterError("need lam > 0, K > 0, m >= 1, eps >= 0")
    per = theta(eps, K, lam) if math.isfinite(eps) else 0.0
    return GuaranteeCertificate(float(eps), per, m * float(eps), m * per, float(K), float(lam), int(m))


# -- mechanism ------------------------------------------------------------

def obfuscate(x, report: LeakageReport, lam: float, seed: int, clamp_output: bool = False,
              domain: tuple = (0.0, 1.0), sample_id: int = 0) -> np.ndarray:
    """Add lam * N(0, I) to every flagged feature; others pass through unchanged.

    The noise stream is derived from ``(seed, sample_id)`` so samples in a
    batch can be processed in any order. ``clamp_output`` clips noised
    features to ``domain``; the guarantee is stated for the unclamped
    mechanism and clamping can only reduce leakage.
    """
    if not lam > 0:
        raise InvalidParameterError("lam must be positive")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != report.m:
        raise ShapeMismatchError(f"report covers {report.m} features, sample has {x.shape[0]}")
    flags = report.flags_by_feature()
    out = x.copy()
    if not flags.any():
        return out
    rng = np.random.default_rng([int(seed), int(sample_id)])
    noise = rng.standard_normal(x.shape)
    out[flags] = x[flags] + lam * noise[flags]
    if clamp_output:
        out[flags] = np.clip(out[flags], *domain)
    return out


@dataclass
class GuaranteeCheckRow:
    a: float
    estimate: float
    std_error: float
    closed_form: float


@dataclass
class GuaranteeCheck:
    """Monte-Carlo check of the per-feature Gaussian E_gamma bound."""

    eps: float
    lam: float
    K: float
    bound: float
    rows: list

    @property
    def within_bound(self) -> bool:
        return all(r.estimate <= self.bound + 3 * r.std_error for r in self.rows)

    @property
    def tight_at_K(self) -> bool:
        top = max(self.rows, key=lambda r: r.a)
        return top.a == self.K and abs(top.estimate - self.bound) <= 3 * top.std_error + 1e-12

    @property
    def ok(self) -> bool:
        return self.within_bound and self.tight_at_K


def verify_feature_guarantee(eps: float, lam: float, K: float, n_mc: int, seed: int,
                             grid: Optional[Sequence[float]] = None) -> GuaranteeCheck:
    """Estimate E_{e^eps}(N(a, lam^2) || N(0, lam^2)) for ||a|| on a grid up to K.

    Uses E_gamma(P||Q) = E_P[(1 - gamma exp(-i))_+] with the exact log
    ratio i. By rotation invariance only ||a|| matters, so the draw is
    one-dimensional along a.
    """
    if n_mc < 10 ** 5:
        raise InvalidParameterError("n_mc must be at least 1e5")
    if not (lam > 0 and K > 0 and eps >= 0):
        raise InvalidParameterError("need lam > 0, K > 0, eps >= 0")
    grid = np.linspace(0.0, K, 6) if grid is None else np.asarray(grid, dtype=np.float64)
    if np.any(grid < 0) or np.any(grid > K):
        raise InvalidParameterError("grid norms must lie in [0, K]")
    rng = np.random.default_rng(seed)
    gamma = math.exp(eps)
    rows = []
    for a in grid:
        y = a + lam * rng.standard_normal(n_mc)
        i = (a * y - 0.5 * a * a) / (lam * lam)
        v = np.maximum(1.0 - gamma * np.exp(-i), 0.0)
        rows.append(GuaranteeCheckRow(float(a), float(v.mean()), float(v.std(ddof=1) / math.sqrt(n_mc)),
                                      theta(eps, float(a), lam)))
    return GuaranteeCheck(float(eps), float(lam), float(K), theta(eps, K, lam), rows)


# -- composition ----------------------------------------------------------

@dataclass
class CompositionCheck:
    """Exhaustive check of two-feature composition on a discrete mechanism."""

    eps: float
    per_feature: float
    delta: float
    composed: float
    tol: float = 1e-10

    @property
    def holds(self) -> bool:
        return self.composed <= self.delta + self.tol


def composition_check(joint: DiscreteJoint, W1, W2, eps: float) -> CompositionCheck:
    """Release Y_j = W_j(X_j) for a two-feature joint and test composition.

    The per-feature value is the largest of E_{e^eps}(P_{Y1|s} || P_{Y1})
    and E_{e^eps}(P_{Y2|s,y1} || P_{Y2|y1}) over all s and y1, computed
    with :func:`egamma_discrete`. With delta = 2 * per-feature, the joint
    output must satisfy E_{e^{2 eps}}(P_{Y|s} || P_Y) <= delta for every s,
    which is evaluated by enumerating all output subsets.
    """
    if joint.n_features != 2:
        raise InvalidParameterError("composition check needs exactly two features")
    W1 = np.asarray(W1, dtype=np.float64)
    W2 = np.asarray(W2, dtype=np.float64)
    t = joint.table
    if W1.shape[0] != t.shape[1] or W2.shape[0] != t.shape[2]:
        raise ShapeMismatchError("channel inputs do not match the feature alphabets")
    out = np.einsum("sab,ay,bz->syz", t, W1, W2)
    gamma = math.exp(eps)
    p_s = out.sum(axis=(1, 2))
    p_y = out.sum(axis=0)
    per = 0.0
    for s in range(out.shape[0]):
        if p_s[s] <= 0:
            continue
        cond = out[s] / p_s[s]
        per = max(per, egamma_discrete(cond.sum(axis=1), p_y.sum(axis=1), gamma))
        for y1 in range(out.shape[1]):
            c1, m1 = cond[y1].sum(), p_y[y1].sum()
            if c1 > 0 and m1 > 0:
                per = max(per, egamma_discrete(cond[y1] / c1, p_y[y1] / m1, gamma))
    delta = 2.0 * per
    composed = 0.0
    for s in range(out.shape[0]):
        if p_s[s] > 0:
            composed = max(composed, egamma_sup_bruteforce(_renorm(out[s].ravel()),
                                                           _renorm(p_y.ravel()), gamma * gamma))
    return CompositionCheck(float(eps), per, delta, composed)


def _renorm(p):
    return p / p.sum()


def random_mechanism_instance(rng: np.random.Generator, max_alphabet: int = 4,
                              dirichlet_alpha: float = 1.0):
    """Random (joint over S, X1, X2; channel W1; channel W2) with alphabets <= max_alphabet."""
    ks, k1, k2, o1, o2 = rng.integers(2, max_alphabet + 1, size=5)
    table = rng.dirichlet(np.full(ks * k1 * k2, dirichlet_alpha)).reshape(ks, k1, k2)
    table /= table.sum()
    W1 = rng.dirichlet(np.full(o1, dirichlet_alpha), size=k1)
    W2 = rng.dirichlet(np.full(o2, dirichlet_alpha), size=k2)
    return DiscreteJoint(table), W1, W2
