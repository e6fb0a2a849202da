"""Fully connected networks with hand-written backprop, the Gaussian policy,
input normalization and the Adam optimizer. Everything is float64."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))
# tanh saturates to exactly +-1 in float64 for |z| > ~19; keep actor outputs strictly inside.
_TANH_BOUND = float(np.nextafter(1.0, 0.0))


class ShapeError(ValueError):
    pass


class MLP:
    """``input -> hidden... -> output`` with ReLU between layers.

    Weights are stored as ``(out, in)`` matrices so a layer computes
    ``x @ W.T + b``. ``output`` is ``"identity"`` (critic) or ``"tanh"`` (actor).
    """

    def __init__(self, weights, biases, output: str = "identity"):
        if output not in ("identity", "tanh"):
            raise ValueError(f"unknown output activation {output!r}")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        self.output = output
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0],):
                raise ShapeError(f"layer {k}: bias shape {b.shape} vs weight {w.shape}")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(f"layer {k} input {w.shape[1]} != previous output "
                                 f"{self.weights[k - 1].shape[0]}")

    @classmethod
    def init(cls, sizes, output: str = "identity", rng: np.random.Generator | None = None):
        """Uniform fan-in initialization, bound ``1/sqrt(fan_in)`` for weights and biases."""
        rng = np.random.default_rng(0) if rng is None else rng
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases, output)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.output)

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.sizes[0]:
            raise ShapeError(f"input has {x.shape[-1]} features, network expects {self.sizes[0]}")
        return x

    def forward(self, x) -> np.ndarray:
        h = self._check(x)
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if k < last:
                h = np.maximum(h, 0.0)
        if self.output == "tanh":
            h = np.clip(np.tanh(h), -_TANH_BOUND, _TANH_BOUND)
        return h

    __call__ = forward

    def forward_cache(self, x):
        """Forward pass keeping layer inputs and pre-activations for :meth:`backward`."""
        h = self._check(x)
        inputs, pre = [], []
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w.T + b
            pre.append(z)
            h = np.maximum(z, 0.0) if k < last else z
        if self.output == "tanh":
            h = np.clip(np.tanh(h), -_TANH_BOUND, _TANH_BOUND)
        return h, (inputs, pre, h)

    def backward(self, cache, upstream) -> list[np.ndarray]:
        """Parameter gradients of ``sum(upstream * output)``, ordered like :attr:`params`.

        Batched inputs accumulate gradients over the batch axis.
        """
        inputs, pre, out = cache
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != out.shape:
            raise ShapeError(f"upstream shape {g.shape} != output shape {out.shape}")
        if self.output == "tanh":
            g = g * (1.0 - out * out)
        grads = [None] * (2 * len(self.weights))
        for k in range(len(self.weights) - 1, -1, -1):
            x = inputs[k]
            if g.ndim == 1:
                grads[2 * k] = np.outer(g, x)
                grads[2 * k + 1] = g.copy()
            else:
                grads[2 * k] = g.T @ x
                grads[2 * k + 1] = g.sum(axis=0)
            if k:
                g = (g @ self.weights[k]) * (pre[k - 1] > 0.0)
        return grads

    def gradient(self, x, upstream) -> list[np.ndarray]:
        _, cache = self.forward_cache(x)
        return self.backward(cache, upstream)


class GaussianPolicy:
    """Diagonal Gaussian around the actor's output with a fixed variance."""

    def __init__(self, actor: MLP, variance: float = 0.018):
        if not variance > 0:
            raise ValueError("exploration variance must be positive")
        self.actor = actor
        self.variance = float(variance)

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))

    def mean(self, obs) -> np.ndarray:
        return self.actor.forward(obs)

    def log_prob_from_mean(self, mean, action):
        d = np.asarray(action) - mean
        k = d.shape[-1]
        return -0.5 * np.sum(d * d, axis=-1) / self.variance - 0.5 * k * (LOG_2PI + np.log(self.variance))

    def log_prob(self, obs, action):
        return self.log_prob_from_mean(self.mean(obs), action)

    def sample_action(self, obs, rng: np.random.Generator, deterministic: bool = False):
        mu = self.mean(obs)
        if deterministic:
            return mu
        return mu + self.std * rng.standard_normal(mu.shape)


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray
    count: int = 0

    def __call__(self, obs):
        return normalize(self, obs)


def fit_normalizer(states, std_floor: float = 1e-6) -> Normalizer:
    """Per-coordinate mean and population standard deviation, floored at ``std_floor``."""
    x = np.asarray(states, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("cannot fit a normalizer without samples")
    if len(x) < 2:
        raise ValueError("need at least two samples to fit a normalizer")
    mean = x.mean(axis=0)
    # correction pass: the column sums above accumulate rounding error, which a
    # floored std would amplify in the normalized values
    mean += (x - mean).mean(axis=0)
    std = np.sqrt(((x - mean) ** 2).mean(axis=0))
    return Normalizer(mean, np.maximum(std, std_floor), len(x))


def normalize(n: Normalizer, obs) -> np.ndarray:
    return (np.asarray(obs, dtype=np.float64) - n.mean) / n.std


@dataclass
class AdamState:
    lr: float
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr: float, **kw) -> "AdamState":
        return cls(lr, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update, applied to ``params`` in place (minimization)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and moments differ in length")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
