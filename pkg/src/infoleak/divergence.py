"""Exact information density and E_gamma (hockey-stick) divergence.

All densities are natural-log (nats). Finite alphabets are handled by
:class:`DiscreteJoint`; the correlated Gaussian pair by
:class:`GaussianFeatureModel`. The Monte-Carlo verifiers at the bottom
take an explicit seed and never touch global random state.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erfc

from . import kernels
from .errors import (
    AlphabetTooLargeError,
    ContractViolationError,
    InvalidParameterError,
    UndefinedDensityError,
)

PROB_ATOL = 1e-12
MAX_BRUTEFORCE_ALPHABET = 20


def as_prob_vector(p, name="p"):
    """Validate and return ``p`` as a float64 probability vector."""
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 0:
        raise InvalidParameterError(f"{name} is empty")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InvalidParameterError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > PROB_ATOL:
        raise InvalidParameterError(f"{name} sums to {p.sum()!r}, not 1")
    return p


@dataclass(frozen=True)
class DiscreteJoint:
    """Finite joint law of a sensitive attribute and m discrete features.

    ``table[s, x1, ..., xm]`` is the probability mass. With a 2-D table
    the feature block is a single symbol.
    """

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if t.ndim < 2:
            raise InvalidParameterError("joint table needs an attribute axis and at least one feature axis")
        if np.any(t < 0) or abs(t.sum() - 1.0) > PROB_ATOL:
            raise InvalidParameterError("joint table must be non-negative and sum to 1")
        object.__setattr__(self, "table", t)

    @property
    def n_features(self) -> int:
        return self.table.ndim - 1

    @property
    def p_s(self) -> np.ndarray:
        return self.table.reshape(self.table.shape[0], -1).sum(axis=1)

    @property
    def p_x(self) -> np.ndarray:
        return self.table.sum(axis=0)

    def prefix_table(self, j: int) -> np.ndarray:
        """Joint of (S, X_1..X_j) with later features summed out."""
        if not 0 <= j <= self.n_features:
            raise InvalidParameterError(f"prefix length {j} outside [0, {self.n_features}]")
        axes = tuple(range(j + 1, self.table.ndim))
        return self.table.sum(axis=axes) if axes else self.table

    def conditional(self, s: int) -> np.ndarray:
        """P_{X|s} as an array shaped like the feature block."""
        ps = self.p_s[s]
        if ps <= 0:
            raise UndefinedDensityError(f"P_S({s}) = 0")
        return self.table[s] / ps

    def prefix_density(self, s: int, x: Sequence[int], j: int) -> float:
        """i(s; x^j); zero for the empty prefix."""
        if j == 0:
            return 0.0
        sub = self.prefix_table(j)
        idx = tuple(int(v) for v in np.atleast_1d(x)[:j])
        p_sx = sub[(s,) + idx]
        p_s = sub[s].sum()
        p_x = sub[(slice(None),) + idx].sum()
        if p_s <= 0 or p_x <= 0:
            raise UndefinedDensityError(f"zero marginal at s={s}, x^{j}={idx}")
        if p_sx == 0:
            return -math.inf
        return math.log(p_sx) - math.log(p_s) - math.log(p_x)

    def cond_density(self, s: int, x: Sequence[int], j: int) -> float:
        """i(s; x_j | x^{j-1}) through the chain rule."""
        return cond_info_density(self.prefix_density(s, x, j), self.prefix_density(s, x, j - 1))

    def sample(self, n: int, rng: np.random.Generator):
        """Draw ``n`` pairs; returns ``(s, x)`` with ``x`` shaped (n, m)."""
        flat = self.table.ravel()
        cells = rng.choice(flat.size, size=n, p=flat / flat.sum())
        coords = np.array(np.unravel_index(cells, self.table.shape)).T
        return coords[:, 0], coords[:, 1:]


def info_density_discrete(joint: DiscreteJoint, s: int, x) -> float:
    """i(s; x) = log P(s,x) - log P(s) - log P(x) for the full feature block.

    Returns ``-inf`` when P(s, x) = 0 but both marginals are positive.
    """
    return joint.prefix_density(s, np.atleast_1d(x), joint.n_features)


def cond_info_density(i_full: float, i_prefix: float) -> float:
    return i_full - i_prefix


@dataclass(frozen=True)
class GaussianFeatureModel:
    """(S, X) standard normal in R^d each, with corr(S_i, X_j) = rho 1{i=j}."""

    d: int
    rho: float

    def __post_init__(self):
        if self.d < 1:
            raise InvalidParameterError("dimension must be positive")
        if not -1.0 < self.rho < 1.0:
            raise InvalidParameterError(f"|rho| must be < 1, got {self.rho}")

    @property
    def mutual_information(self) -> float:
        return -0.5 * self.d * math.log1p(-self.rho ** 2)

    def info_density(self, s, x):
        return info_density_gaussian(self, s, x)

    def sample(self, n: int, rng: np.random.Generator):
        s = rng.standard_normal((n, self.d))
        z = rng.standard_normal((n, self.d))
        x = self.rho * s + math.sqrt(1.0 - self.rho ** 2) * z
        return s, x


def info_density_gaussian(model: GaussianFeatureModel, s, x):
    """Closed-form log density ratio of the correlated Gaussian pair.

    Accepts single vectors of length d or row-stacked arrays (n, d); the
    result is a float or an array of length n accordingly.
    """
    if not -1.0 < model.rho < 1.0:
        raise InvalidParameterError(f"|rho| must be < 1, got {model.rho}")
    s = np.asarray(s, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if s.shape != x.shape or s.shape[-1] != model.d:
        raise InvalidParameterError(f"expected matching (..., {model.d}) inputs, got {s.shape} and {x.shape}")
    r = model.rho
    one_m = 1.0 - r * r
    per = -0.5 * math.log(one_m) - (r * r * (s * s + x * x) - 2.0 * r * s * x) / (2.0 * one_m)
    out = per.sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Channel:
    """Row-stochastic kernel W[input, output]."""

    rows: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.rows, dtype=np.float64)
        if w.ndim != 2 or np.any(w < 0) or np.any(np.abs(w.sum(axis=1) - 1.0) > PROB_ATOL):
            raise InvalidParameterError("channel rows must be probability vectors")
        object.__setattr__(self, "rows", w)

    def apply(self, p) -> np.ndarray:
        return np.asarray(p, dtype=np.float64) @ self.rows

    @classmethod
    def identity(cls, n: int) -> "Channel":
        return cls(np.eye(n))


def _check_gamma(gamma):
    if not gamma >= 1.0:
        raise InvalidParameterError(f"gamma must be >= 1, got {gamma}")


def egamma_discrete(P, Q, gamma: float) -> float:
    """E_gamma(P||Q) = sum_a (P(a) - gamma Q(a))_+."""
    _check_gamma(gamma)
    P = as_prob_vector(P, "P")
    Q = as_prob_vector(Q, "Q")
    if P.shape != Q.shape:
        raise InvalidParameterError("P and Q live on different alphabets")
    return float(np.maximum(P - gamma * Q, 0.0).sum())


def egamma_sup_bruteforce(P, Q, gamma: float, return_set: bool = False):
    """sup_A P(A) - gamma Q(A) by visiting every subset of the alphabet."""
    _check_gamma(gamma)
    P = as_prob_vector(P, "P")
    Q = as_prob_vector(Q, "Q")
    if P.shape != Q.shape:
        raise InvalidParameterError("P and Q live on different alphabets")
    if P.size > MAX_BRUTEFORCE_ALPHABET:
        raise AlphabetTooLargeError(f"alphabet of {P.size} exceeds {MAX_BRUTEFORCE_ALPHABET}")
    value, mask = kernels.subset_sup(P, Q, float(gamma))
    if return_set:
        return value, frozenset(b for b in range(P.size) if (mask >> b) & 1)
    return value


def leakage_egamma(joint: DiscreteJoint, s: int, gamma: float, direction: str = "forward") -> float:
    """E_gamma between P_{X|s} and P_X.

    ``direction="forward"`` gives E(P_{X|s}||P_X); ``"reverse"`` swaps
    the arguments.
    """
    cond = joint.conditional(s).ravel()
    marg = joint.p_x.ravel()
    if direction == "forward":
        return egamma_discrete(cond, marg, gamma)
    if direction == "reverse":
        return egamma_discrete(marg, cond, gamma)
    raise InvalidParameterError(f"unknown direction {direction!r}")


def q_function(v):
    """Standard normal upper tail Pr(N(0,1) >= v).

    Evaluated as erfc(v / sqrt 2) / 2 with the Cephes erfc in SciPy
    (relative error near machine epsilon), so both tails keep full
    relative precision.
    """
    out = 0.5 * erfc(np.asarray(v, dtype=np.float64) / math.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


def egamma_gaussian(mean_gap: float, lam: float, gamma: float) -> float:
    """E_gamma(N(mu1, lam^2 I) || N(mu2, lam^2 I)) with |mu1 - mu2| = mean_gap."""
    if not lam > 0:
        raise InvalidParameterError(f"noise scale must be positive, got {lam}")
    if mean_gap < 0:
        raise InvalidParameterError("mean gap is a norm and cannot be negative")
    _check_gamma(gamma)
    if mean_gap == 0.0:
        return max(1.0 - gamma, 0.0)
    beta = mean_gap / lam
    lg = math.log(gamma)
    val = q_function(lg / beta - 0.5 * beta) - gamma * q_function(lg / beta + 0.5 * beta)
    return min(max(val, 0.0), 1.0)


def theta(eps: float, a: float, lam: float) -> float:
    """theta_{e^eps}(a, lam): Gaussian E_gamma at mean gap ``a``."""
    return egamma_gaussian(a, lam, math.exp(eps))


def gaussian_tail(mean_gap: float, lam: float) -> Callable[[float], float]:
    """t -> Pr(i > t) for i the log ratio of N(a, lam^2) to N(0, lam^2) under N(a, lam^2).

    The log ratio is linear in the sample, so it is N(beta^2/2, beta^2).
    """
    beta = mean_gap / lam
    if beta == 0:
        return lambda t: 1.0 if t < 0 else 0.0
    return lambda t: q_function((t - 0.5 * beta * beta) / beta)


def discrete_tail(P, Q) -> Callable[[float], float]:
    """t -> P(log P/Q > t) for finite P, Q (symbols with P = 0 carry no mass)."""
    P = as_prob_vector(P, "P")
    Q = as_prob_vector(Q, "Q")
    keep = P > 0
    with np.errstate(divide="ignore"):
        dens = np.log(P[keep]) - np.log(Q[keep])
    mass = P[keep]
    return lambda t: float(mass[dens > t].sum())


def _adaptive_simpson(f, a, b, tol, max_depth=48):
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    total = 0.0
    while stack:
        a, b, fa, fm, fb, whole, tol, depth = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        delta = left + right - whole
        if depth >= max_depth or abs(delta) <= 15.0 * tol:
            total += left + right + delta / 15.0
        else:
            stack.append((a, m, fa, flm, fm, left, 0.5 * tol, depth + 1))
            stack.append((m, b, fm, frm, fb, right, 0.5 * tol, depth + 1))
    return total


TAIL_SPAN = 40.0


def egamma_tail_integral(tail_prob: Callable[[float], float], eps: float,
                         tol: float = 1e-10, grid: int = 801) -> float:
    """e^eps * int_eps^inf e^-t Pr(i > t) dt by adaptive Simpson.

    The integrand is bounded by e^-(t - eps), so truncating at
    ``eps + 40`` leaves less than 5e-18. ``tail_prob`` is sampled on a
    uniform grid first and must be non-increasing with values in [0, 1].
    """
    if eps < 0:
        raise InvalidParameterError("eps must be non-negative")
    hi = eps + TAIL_SPAN
    ts = np.linspace(eps, hi, grid)
    vals = np.array([tail_prob(t) for t in ts], dtype=np.float64)
    if np.any(vals < -1e-12) or np.any(vals > 1 + 1e-12):
        raise ContractViolationError("tail probability outside [0, 1]")
    if np.any(np.diff(vals) > 1e-12):
        raise ContractViolationError("tail probability is not non-increasing")

    def integrand(t):
        return math.exp(eps - t) * tail_prob(t)

    # Subdivide on the check grid so steps between samples are not missed.
    edges = np.linspace(eps, hi, 81)
    return float(sum(_adaptive_simpson(integrand, lo, up, tol / 80)
                     for lo, up in zip(edges[:-1], edges[1:])))


def wilson_interval(k: int, n: int, z: float = 2.5758293035489) -> tuple:
    """Wilson score interval for a binomial proportion (default 99%)."""
    if n <= 0:
        raise InvalidParameterError("need at least one trial")
    ph = k / n
    den = 1.0 + z * z / n
    centre = (ph + z * z / (2 * n)) / den
    half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / den
    return max(centre - half, 0.0), min(centre + half, 1.0)


@dataclass
class ConcentrationRow:
    t: float
    empirical_tail: float
    ci_low: float
    ci_high: float
    bound: float

    @property
    def violated(self) -> bool:
        return self.ci_low > self.bound


@dataclass
class ConcentrationReport:
    measure: str
    n_samples: int
    rows: list = field(default_factory=list)

    @property
    def violations(self) -> list:
        return [r for r in self.rows if r.violated]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "empirical_tail", "ci_low", "ci_high", "bound"])
        for r in self.rows:
            w.writerow([r.t, r.empirical_tail, r.ci_low, r.ci_high, r.bound])
        return buf.getvalue()


def concentration_check(model, s, t_grid, n_samples: int, seed: int,
                        measure: str = "marginal") -> ConcentrationReport:
    """Empirical Pr(i(s; X) > t) against the e^-t tail bound.

    ``measure="marginal"`` draws X from P_X, the law under which the bound
    holds for every s (Markov's inequality on e^{i}). ``"conditional"``
    draws from P_{X|s} instead; the bound need not hold there and the
    option exists to show it.
    """
    if measure not in ("marginal", "conditional"):
        raise InvalidParameterError(f"unknown measure {measure!r}")
    t_grid = [float(t) for t in t_grid]
    if any(t < 0 for t in t_grid):
        raise InvalidParameterError("thresholds must be non-negative")
    rng = np.random.default_rng(seed)
    if isinstance(model, GaussianFeatureModel):
        s_vec = np.broadcast_to(np.asarray(s, dtype=np.float64), (model.d,))
        if measure == "marginal":
            x = rng.standard_normal((n_samples, model.d))
        else:
            x = model.rho * s_vec + math.sqrt(1 - model.rho ** 2) * rng.standard_normal((n_samples, model.d))
        dens = info_density_gaussian(model, np.broadcast_to(s_vec, x.shape), x)
    elif isinstance(model, DiscreteJoint):
        law = model.p_x if measure == "marginal" else model.conditional(int(s))
        flat = law.ravel()
        cells = rng.choice(flat.size, size=n_samples, p=flat / flat.sum())
        cond = model.conditional(int(s)).ravel()
        marg = model.p_x.ravel()
        with np.errstate(divide="ignore"):
            table = np.log(cond) - np.log(marg)
        dens = table[cells]
    else:
        raise InvalidParameterError(f"unsupported model type {type(model).__name__}")
    report = ConcentrationReport(measure=measure, n_samples=n_samples)
    for t in t_grid:
        k = int(np.count_nonzero(dens > t))
        lo, hi = wilson_interval(k, n_samples)
        report.rows.append(ConcentrationRow(t, k / n_samples, lo, hi, math.exp(-t)))
    return report


@dataclass
class DpiWitness:
    """A post-processing channel that raises a tail probability of i(s; .)."""

    channel: Channel
    s: int
    eps: float
    gap: float
    egamma_before: float
    egamma_after: float

    @property
    def dpi_holds(self) -> bool:
        return self.egamma_after <= self.egamma_before + 1e-12


def _tail_under_marginal(cond, marg, t):
    keep = marg > 0
    with np.errstate(divide="ignore"):
        dens = np.log(cond[keep]) - np.log(marg[keep])
    return float(marg[keep][dens > t].sum()), dens


def find_tail_dpi_violation(joint: DiscreteJoint, n_trials: int, seed: int,
                            dirichlet_alpha: float = 0.5) -> Optional[DpiWitness]:
    """Random search for a channel Y -> Y~ with Pr(i(s;Y~) > eps) > Pr(i(s;Y) > eps).

    Tail probabilities are taken under the output marginal, the law under
    which E[exp i] = 1 for both Y and Y~. The first witness found is
    returned together with both E_{e^eps} values at its threshold.
    """
    if joint.n_features != 1:
        raise InvalidParameterError("expects a 2-D joint table")
    n_x = joint.table.shape[1]
    if n_x > 8:
        raise AlphabetTooLargeError("search is meant for |X| <= 8")
    rng = np.random.default_rng(seed)
    marg = joint.p_x
    support_s = [s for s in range(joint.table.shape[0]) if joint.p_s[s] > 0]
    for _ in range(n_trials):
        k = int(rng.integers(2, n_x + 1))
        w = Channel(rng.dirichlet(np.full(k, dirichlet_alpha), size=n_x))
        s = support_s[int(rng.integers(len(support_s)))]
        cond = joint.conditional(s)
        cond_out, marg_out = w.apply(cond), w.apply(marg)
        _, dens_out = _tail_under_marginal(cond_out, marg_out, 0.0)
        cands = [0.0] + [float(v) * (1 - 1e-9) for v in dens_out if np.isfinite(v) and v > 1e-9]
        for eps in cands:
            before, _ = _tail_under_marginal(cond, marg, eps)
            after, _ = _tail_under_marginal(cond_out, marg_out, eps)
            if after - before > 1e-12:
                g = math.exp(eps)
                return DpiWitness(
                    channel=w, s=s, eps=eps, gap=after - before,
                    egamma_before=egamma_discrete(cond, marg, g),
                    egamma_after=egamma_discrete(cond_out, marg_out, g),
                )
    return None
