"""Trimmed information density estimator (TIDE).

A small fully-connected network g(s, x) with a saturating output
``M * tanh(z / M)`` is trained to maximize the empirical
Donsker-Varadhan objective

    mean_joint g - log mean_product exp(g).

The maximizer of that objective is the information density up to an
additive constant. After training the constant is pinned by requiring
``mean_product exp(g) = 1``, which the true density satisfies, and
evaluation clips the result to [-M, M].

Prefix support: features beyond the prefix are zeroed and the prefix
fraction ``j / m`` is appended as an extra input, so a single network
serves every i(s; x^j).
"""

from __future__ import annotations

import base64
import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from ..errors import InvalidParameterError, ShapeMismatchError, TrainingError

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, h):
    return (z > 0).astype(z.dtype)


def _tanh_grad(z, h):
    return 1.0 - h * h


ACTIVATIONS = {
    "tanh": (np.tanh, _tanh_grad),
    "relu": (_relu, _relu_grad),
}


@dataclass
class TrainConfig:
    """Optimizer settings for :func:`tide_train`.

    The optimizer is Adagrad with the accumulator seeded at
    ``initial_accumulator``; that seed keeps the first steps on pure
    sampling noise small. ``weight_decay`` adds an L2 penalty on weight
    matrices (not biases) to the ascent direction.
    ``attribute_init_scale``, when set, overrides the initial standard
    deviation of the first-layer weights reading the attribute columns;
    with wide feature blocks the Glorot scale leaves the attribute signal
    too weak for the s-x interaction to form.
    """

    epochs: int = 300
    batch_size: int = 128
    learning_rate: float = 0.05
    seed: int = 0
    optimizer: str = "adagrad"
    initial_accumulator: float = 0.1
    weight_decay: float = 0.001
    adagrad_eps: float = 1e-8
    offset_draws: int = 20
    attribute_init_scale: Optional[float] = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise InvalidParameterError("epochs must be >= 1 and batch_size >= 2")
        if not self.learning_rate > 0:
            raise InvalidParameterError("learning rate must be positive")
        if self.weight_decay < 0 or self.initial_accumulator < 0:
            raise InvalidParameterError("weight decay and accumulator seed must be >= 0")
        if self.optimizer != "adagrad":
            raise InvalidParameterError(f"unsupported optimizer {self.optimizer!r}")


class TideModel:
    """Bounded network g_theta(s, x^j) with a flat parameter vector.

    Parameters
    ----------
    hidden : sequence of int
        Hidden layer widths; the input and scalar output layers are added.
    M : float
        Trim bound. Every value returned by :meth:`evaluate` lies in [-M, M].
    s_dim, n_features, feature_dim : int
        Attribute width, feature count m and per-feature width r.
    prefix_mask_supported : bool
        Whether the extra prefix input is present.
    input_shift, input_scale : array, optional
        Per-column affine standardization of the (s, x) block applied
        before masking, so a masked feature sits at its training mean.
    """

    def __init__(self, hidden: Sequence[int], M: float, *, activation: str = "tanh",
                 s_dim: int = 1, n_features: int = 1, feature_dim: int = 1,
                 prefix_mask_supported: bool = False, theta=None, offsets=None,
                 input_shift=None, input_scale=None, metadata: Optional[dict] = None):
        if not M > 0:
            raise InvalidParameterError("trim bound M must be positive")
        if activation not in ACTIVATIONS:
            raise InvalidParameterError(f"unknown activation {activation!r}")
        if any(h < 1 for h in hidden):
            raise InvalidParameterError("layer widths must be positive")
        self.M = float(M)
        self.activation = activation
        self.s_dim = int(s_dim)
        self.n_features = int(n_features)
        self.feature_dim = int(feature_dim)
        self.prefix_mask_supported = bool(prefix_mask_supported)
        self.layer_sizes = [self.input_dim, *map(int, hidden), 1]
        self.theta = np.zeros(self.n_params) if theta is None else np.array(theta, dtype=np.float64)
        if self.theta.shape != (self.n_params,):
            raise ShapeMismatchError(f"theta has {self.theta.size} entries, architecture needs {self.n_params}")
        n_off = self.n_features + 1
        self.offsets = np.zeros(n_off) if offsets is None else np.array(offsets, dtype=np.float64)
        if self.offsets.shape != (n_off,):
            raise ShapeMismatchError("offsets must have one entry per prefix length 0..m")
        width = self.s_dim + self.n_features * self.feature_dim
        self.input_shift = np.zeros(width) if input_shift is None else np.array(input_shift, dtype=np.float64)
        self.input_scale = np.ones(width) if input_scale is None else np.array(input_scale, dtype=np.float64)
        if self.input_shift.shape != (width,) or self.input_scale.shape != (width,):
            raise ShapeMismatchError("standardization vectors must cover every s and x column")
        if np.any(self.input_scale <= 0):
            raise InvalidParameterError("input scales must be positive")
        self.metadata = dict(metadata or {})

    @property
    def input_dim(self) -> int:
        return self.s_dim + self.n_features * self.feature_dim + int(self.prefix_mask_supported)

    @property
    def n_params(self) -> int:
        sizes = self.layer_sizes
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

    def layers(self):
        """(W, b) views into ``theta``; writes go through to the flat vector."""
        out, k = [], 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = self.theta[k:k + a * b].reshape(a, b)
            k += a * b
            out.append((W, self.theta[k:k + b]))
            k += b
        return out

    def initialize(self, rng: np.random.Generator) -> "TideModel":
        """Glorot-normal hidden weights, zero biases, zero readout.

        The zero readout makes the initial function identically zero.
        """
        layers = self.layers()
        for i, (W, b) in enumerate(layers):
            b[:] = 0.0
            if i == len(layers) - 1:
                W[:] = 0.0
            else:
                W[:] = rng.standard_normal(W.shape) * math.sqrt(2.0 / sum(W.shape))
        return self

    def copy(self) -> "TideModel":
        return copy.deepcopy(self)

    # -- encoding -------------------------------------------------------
    def encode(self, s, x, prefix=None) -> np.ndarray:
        """Stack network inputs for rows of (s, x) at the given prefix lengths."""
        s = np.asarray(s, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0] if x.ndim > 1 else 1
        s = s.reshape(n, self.s_dim)
        x = x.reshape(n, self.n_features * self.feature_dim)
        z = (np.hstack([s, x]) - self.input_shift) / self.input_scale
        s, x = z[:, :self.s_dim], z[:, self.s_dim:]
        if not self.prefix_mask_supported:
            if prefix is not None and np.any(np.asarray(prefix) != self.n_features):
                raise InvalidParameterError("model was trained without prefix support")
            return np.hstack([s, x])
        pre = np.broadcast_to(np.asarray(self.n_features if prefix is None else prefix), (n,))
        if np.any(pre < 0) or np.any(pre > self.n_features):
            raise InvalidParameterError(f"prefix length outside [0, {self.n_features}]")
        keep = np.arange(self.n_features)[None, :] < pre[:, None]
        keep = np.repeat(keep, self.feature_dim, axis=1)
        return np.hstack([s, x * keep, (pre / self.n_features)[:, None]])

    # -- raw network ----------------------------------------------------
    def forward(self, inputs: np.ndarray):
        """Saturated output M*tanh(z/M) and the cache needed by :meth:`backward`."""
        act, _ = ACTIVATIONS[self.activation]
        layers = self.layers()
        cache = []
        h = inputs
        for W, b in layers[:-1]:
            z = h @ W + b
            cache.append((h, z))
            h = act(z)
        W, b = layers[-1]
        z = (h @ W + b)[:, 0]
        cache.append((h, None))
        t = np.tanh(z / self.M)
        return self.M * t, (cache, t)

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        """Gradient of sum(dy * y) with respect to theta."""
        _, dact = ACTIVATIONS[self.activation]
        stack, t = cache
        grad = np.empty_like(self.theta)
        grads = []
        dz = (dy * (1.0 - t * t))[:, None]
        layers = self.layers()
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            h_in = stack[i][0]
            grads.append((h_in.T @ dz, dz.sum(axis=0)))
            if i > 0:
                h_prev_in, z_prev = stack[i - 1]
                dz = (dz @ W.T) * dact(z_prev, h_in)
        k = 0
        for gW, gb in reversed(grads):
            grad[k:k + gW.size] = gW.ravel()
            k += gW.size
            grad[k:k + gb.size] = gb
            k += gb.size
        return grad

    # -- evaluation -----------------------------------------------------
    def evaluate(self, s, x, prefix=None) -> np.ndarray:
        """Trimmed density estimate of i(s; x^prefix), always within [-M, M]."""
        inputs = self.encode(s, x, prefix)
        pre = np.broadcast_to(np.asarray(self.n_features if prefix is None else prefix), (inputs.shape[0],))
        y, _ = self.forward(inputs)
        out = np.clip(y - self.offsets[pre], -self.M, self.M)
        return np.where(pre == 0, 0.0, out)

    def field(self) -> "DensityField":
        return DensityField(lambda s, x: self.evaluate(s, x), kind="tide", bound=self.M)

    # -- persistence ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "layer_sizes": self.layer_sizes,
            "M": self.M,
            "activation": self.activation,
            "s_dim": self.s_dim,
            "n_features": self.n_features,
            "feature_dim": self.feature_dim,
            "prefix_mask_supported": self.prefix_mask_supported,
            "theta_b64": base64.b64encode(self.theta.astype("<f8").tobytes()).decode("ascii"),
            "offsets": [float(v) for v in self.offsets],
            "input_shift": [float(v) for v in self.input_shift],
            "input_scale": [float(v) for v in self.input_scale],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TideModel":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise InvalidParameterError(f"unsupported model format {d.get('format_version')!r}")
        theta = np.frombuffer(base64.b64decode(d["theta_b64"]), dtype="<f8").astype(np.float64)
        model = cls(d["layer_sizes"][1:-1], d["M"], activation=d["activation"],
                    s_dim=d["s_dim"], n_features=d["n_features"], feature_dim=d["feature_dim"],
                    prefix_mask_supported=d["prefix_mask_supported"], theta=theta,
                    offsets=d["offsets"], input_shift=d.get("input_shift"),
                    input_scale=d.get("input_scale"), metadata=d.get("metadata"))
        if model.layer_sizes != list(d["layer_sizes"]):
            raise ShapeMismatchError("stored layer sizes disagree with the encoded dimensions")
        return model

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TideModel":
        return cls.from_dict(json.loads(text))


@dataclass
class DensityField:
    """A pointwise density estimate (s, x) -> value."""

    evaluator: Callable
    kind: str
    bound: Optional[float] = None

    def __call__(self, s, x):
        return np.asarray(self.evaluator(s, x), dtype=np.float64)


# -- DV objective ---------------------------------------------------------

def _log_weighted_mean_exp(values, weights=None):
    if weights is None:
        return float(logsumexp(values) - math.log(len(values)))
    w = np.asarray(weights, dtype=np.float64)
    return float(logsumexp(values, b=w / w.sum()))


def dv_objective(g, joint_batch, product_batch, joint_weights=None, product_weights=None) -> float:
    """E_joint[g] - log E_product[exp g] on (s, x) batches.

    ``g`` is any callable (s, x) -> values. Optional weights turn the
    batches into exact expectations over a finite support.
    """
    gj = np.asarray(g(*joint_batch), dtype=np.float64).ravel()
    gp = np.asarray(g(*product_batch), dtype=np.float64).ravel()
    if gj.size == 0 or gp.size == 0:
        raise InvalidParameterError("DV objective needs non-empty batches")
    first = float(np.mean(gj)) if joint_weights is None else float(np.average(gj, weights=joint_weights))
    return first - _log_weighted_mean_exp(gp, product_weights)


def _dv_value_and_grad(model: TideModel, joint_inputs, product_inputs):
    yj, cj = model.forward(joint_inputs)
    yp, cp = model.forward(product_inputs)
    lse = logsumexp(yp)
    value = float(np.mean(yj) - (lse - math.log(len(yp))))
    w = np.exp(yp - lse)
    grad = model.backward(cj, np.full(len(yj), 1.0 / len(yj))) - model.backward(cp, w)
    return value, grad


def dv_gradient(model: TideModel, joint_batch, product_batch) -> np.ndarray:
    """Exact gradient of the raw-network DV objective with respect to theta.

    Batches are ``(s, x)`` or ``(s, x, prefix)`` tuples. The gradient is
    of the saturated network output, before the normalizing offset.
    """
    ji = model.encode(*joint_batch)
    pi = model.encode(*product_batch)
    if len(ji) == 0 or len(pi) == 0:
        raise InvalidParameterError("DV gradient needs non-empty batches")
    return _dv_value_and_grad(model, ji, pi)[1]


def dv_value(model: TideModel, joint_batch, product_batch) -> float:
    """Raw-network DV objective, the scalar whose gradient is :func:`dv_gradient`."""
    return _dv_value_and_grad(model, model.encode(*joint_batch), model.encode(*product_batch))[0]


# -- training -------------------------------------------------------------

@dataclass
class TrainResult:
    model: TideModel
    objective: list = field(default_factory=list)


def _decay_mask(model: TideModel) -> np.ndarray:
    mask = np.zeros(model.n_params)
    k = 0
    for a, b in zip(model.layer_sizes[:-1], model.layer_sizes[1:]):
        mask[k:k + a * b] = 1.0
        k += a * b + b
    return mask


def tide_train(s, x, hidden: Sequence[int], M: float, config: TrainConfig, *,
               activation: str = "tanh", n_features: Optional[int] = None,
               prefix: bool = False, standardize: bool = False) -> TideModel:
    """Fit a TIDE on training rows ``s`` (n, d_s) and ``x`` (n, m*r).

    Each step draws a minibatch of joint pairs and forms product pairs by
    permuting the attribute column inside the batch. With ``prefix=True``
    every pair gets a uniform random prefix length in 1..m shared by its
    joint and product copies. Deterministic for a fixed ``config.seed``.
    With ``standardize`` every input column is shifted and scaled to zero
    mean and unit variance on the training rows (constant columns are
    only shifted). Leave it off for inputs such as pixels, where scaling
    would blow near-constant noise columns up to unit variance.

    Raises
    ------
    TrainingError
        When the objective turns non-finite; the exception carries the
        last finite model.
    """
    s = np.asarray(s, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise InvalidParameterError("need at least two training rows")
    s = s.reshape(n, -1)
    x = x.reshape(n, -1)
    m = n_features or (x.shape[1] if prefix else 1)
    if x.shape[1] % m:
        raise ShapeMismatchError(f"{x.shape[1]} feature columns do not split into {m} features")
    model = TideModel(hidden, M, activation=activation, s_dim=s.shape[1], n_features=m,
                      feature_dim=x.shape[1] // m, prefix_mask_supported=prefix)
    if standardize:
        both = np.hstack([s, x])
        sd = both.std(axis=0)
        model.input_shift = both.mean(axis=0)
        model.input_scale = np.where(sd > 1e-12, sd, 1.0)
    rng = np.random.default_rng(config.seed)
    model.initialize(rng)
    if config.attribute_init_scale is not None:
        W0 = model.layers()[0][0]
        W0[:model.s_dim] = rng.standard_normal(W0[:model.s_dim].shape) * config.attribute_init_scale
    accum = np.full(model.n_params, config.initial_accumulator)
    decay = config.weight_decay * _decay_mask(model)
    bs = min(config.batch_size, n)
    history = []
    last_good = model.copy()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        values = []
        for start in range(0, n - bs + 1, bs):
            idx = order[start:start + bs]
            perm = rng.permutation(bs)
            pre = rng.integers(1, m + 1, size=bs) if prefix else None
            ji = model.encode(s[idx], x[idx], pre)
            pi = model.encode(s[idx][perm], x[idx], pre)
            value, grad = _dv_value_and_grad(model, ji, pi)
            if not math.isfinite(value) or not np.all(np.isfinite(grad)):
                raise TrainingError(f"non-finite DV objective at epoch {epoch}", last_good, epoch)
            grad -= decay * model.theta
            accum += grad * grad
            model.theta += config.learning_rate * grad / (np.sqrt(accum) + config.adagrad_eps)
            values.append(value)
        history.append(float(np.mean(values)))
        if epoch % 25 == 24:
            log.debug("epoch %d objective %.5f", epoch + 1, history[-1])
        last_good = model.copy()
    _fit_offsets(model, s, x, rng, config.offset_draws)
    model.metadata.update({
        "train_config": asdict(config),
        "objective_trajectory": history,
        "n_train": int(n),
    })
    return model


def _fit_offsets(model: TideModel, s, x, rng, draws: int):
    """Set offsets so that mean_product exp(g) = 1 at every prefix length."""
    n = x.shape[0]
    perms = [rng.permutation(n) for _ in range(draws)]
    sp = np.concatenate([s[p] for p in perms])
    xp = np.tile(x, (draws, 1))
    lengths = range(1, model.n_features + 1) if model.prefix_mask_supported else [model.n_features]
    for j in lengths:
        pre = np.full(len(xp), j) if model.prefix_mask_supported else None
        y, _ = model.forward(model.encode(sp, xp, pre))
        model.offsets[j] = logsumexp(y) - math.log(len(y))


def final_objective(model: TideModel, s, x, seed: int = 0, draws: int = 20) -> float:
    """DV objective of the normalized estimate on (s, x), in nats."""
    s = np.asarray(s, dtype=np.float64).reshape(len(x), -1)
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    rng = np.random.default_rng(seed)
    sp = np.concatenate([s[rng.permutation(len(s))] for _ in range(draws)])
    xp = np.tile(x, (draws, 1))
    return dv_objective(model.evaluate, (s, x), (sp, xp))


def tide_eval(model: TideModel, s, x, prefix: int) -> np.ndarray:
    """Trimmed estimate of i(s; x^prefix); the empty prefix gives 0."""
    if not 0 <= prefix <= model.n_features:
        raise InvalidParameterError(f"prefix length {prefix} outside [0, {model.n_features}]")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0] if x.ndim > 1 else 1
    return model.evaluate(s, x, np.full(n, prefix))


def cond_density_estimate(model: TideModel, s, x, j: int) -> np.ndarray:
    """i(s; x_j | x^{j-1}) estimate, within [-2M, 2M]."""
    if not 1 <= j <= model.n_features:
        raise InvalidParameterError(f"feature index {j} outside [1, {model.n_features}]")
    return tide_eval(model, s, x, j) - tide_eval(model, s, x, j - 1)
