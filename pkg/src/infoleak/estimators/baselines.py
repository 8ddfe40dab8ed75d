"""Baseline information density estimators and the WMAE metric."""

from __future__ import annotations

from collections import Counter

import numpy as np

from .. import kernels
from ..errors import BandwidthError, InvalidParameterError, ShapeMismatchError
from .network import DensityField
from .samples import SampleSet

PLUGIN_FLOOR = 1e-12


def _as_rows(a, n=None):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a[:, None] if n is None or a.shape[0] == n else a[None, :]
    return a


def plugin_estimator(data: SampleSet, bins: int = 30) -> DensityField:
    """Log ratio of quantized empirical joint and marginal frequencies.

    Every coordinate is cut into ``bins`` equal-width cells spanning its
    training range (values outside are assigned to the edge cells). Cells
    are keyed by their integer coordinates, so high-dimensional grids cost
    only as much memory as the occupied cells. Each empirical probability
    gets ``PLUGIN_FLOOR`` added, which keeps logs finite on unseen cells
    and is what drives the estimator's large error on continuous data.
    """
    if bins < 2:
        raise InvalidParameterError("bins must be >= 2")
    s_tr, x_tr = data.train
    n = s_tr.shape[0]
    lo_s, hi_s = s_tr.min(axis=0), s_tr.max(axis=0)
    lo_x, hi_x = x_tr.min(axis=0), x_tr.max(axis=0)

    def cells(a, lo, hi):
        span = np.where(hi > lo, hi - lo, 1.0)
        return np.clip(np.floor((a - lo) / span * bins), 0, bins - 1).astype(np.int64)

    cs, cx = cells(s_tr, lo_s, hi_s), cells(x_tr, lo_x, hi_x)
    joint = Counter(map(bytes, np.hstack([cs, cx])))
    marg_s = Counter(map(bytes, cs))
    marg_x = Counter(map(bytes, cx))

    def evaluate(s, x):
        x = _as_rows(x)
        s = _as_rows(s, x.shape[0])
        es, ex = cells(s, lo_s, hi_s), cells(x, lo_x, hi_x)
        ej = np.hstack([es, ex])
        pj = np.array([joint.get(bytes(r), 0) for r in ej]) / n + PLUGIN_FLOOR
        ps = np.array([marg_s.get(bytes(r), 0) for r in es]) / n + PLUGIN_FLOOR
        px = np.array([marg_x.get(bytes(r), 0) for r in ex]) / n + PLUGIN_FLOOR
        return np.log(pj) - np.log(ps) - np.log(px)

    return DensityField(evaluate, kind="plugin")


def silverman_bandwidth(points) -> np.ndarray:
    """Per-coordinate Silverman rule sigma_k * (4 / ((D + 2) n))^(1 / (D + 4))."""
    points = _as_rows(points)
    n, D = points.shape
    if n < 2:
        raise BandwidthError("Silverman's rule needs at least two points")
    sd = points.std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise BandwidthError(f"zero-variance coordinate(s) {np.flatnonzero(sd <= 0).tolist()}")
    return sd * (4.0 / ((D + 2) * n)) ** (1.0 / (D + 4))


def kde_estimator(data: SampleSet, bandwidth="silverman") -> DensityField:
    """Product-Gaussian-kernel estimate of log p(s, x) - log p(s) - log p(x).

    One bandwidth vector over the stacked (s, x) coordinates is chosen by
    Silverman's rule (or given explicitly) and shared by the joint and
    both marginals, so the joint kernel factorizes exactly into the
    marginal kernels.
    """
    s_tr, x_tr = data.train
    joint_tr = np.hstack([s_tr, x_tr])
    ds = s_tr.shape[1]
    if isinstance(bandwidth, str):
        if bandwidth != "silverman":
            raise InvalidParameterError(f"unknown bandwidth rule {bandwidth!r}")
        h = silverman_bandwidth(joint_tr)
    else:
        h = np.broadcast_to(np.asarray(bandwidth, dtype=np.float64), (joint_tr.shape[1],)).copy()
        if np.any(~(h > 0)):
            raise BandwidthError("bandwidths must be positive")

    def evaluate(s, x):
        x = _as_rows(x)
        s = _as_rows(s, x.shape[0])
        if s.shape[1] != ds or x.shape[1] != x_tr.shape[1]:
            raise ShapeMismatchError("query dimensions differ from the training data")
        lj = kernels.gauss_log_mean(np.ascontiguousarray(np.hstack([s, x])), joint_tr, h)
        ls = kernels.gauss_log_mean(np.ascontiguousarray(s), np.ascontiguousarray(s_tr), h[:ds])
        lx = kernels.gauss_log_mean(np.ascontiguousarray(x), np.ascontiguousarray(x_tr), h[ds:])
        return lj - ls - lx

    return DensityField(evaluate, kind="kde")


def oracle_field(model) -> DensityField:
    """Exact density of a :class:`~infoleak.divergence.GaussianFeatureModel`."""
    return DensityField(lambda s, x: model.info_density(s, x), kind="oracle")


def wmae(estimate, oracle, s, x, M: float = 5.0, weights=None) -> float:
    """Mean |clip(estimate) - clip(oracle)| over evaluation rows.

    Rows drawn from the true joint realize the joint weighting; for an
    exhaustive finite support pass the joint masses as ``weights``.
    """
    if not M > 0:
        raise InvalidParameterError("M must be positive")
    e = np.clip(np.asarray(estimate(s, x), dtype=np.float64), -M, M)
    o = np.clip(np.asarray(oracle(s, x), dtype=np.float64), -M, M)
    err = np.abs(e - o)
    if weights is None:
        return float(np.mean(err))
    return float(np.average(err, weights=weights))
