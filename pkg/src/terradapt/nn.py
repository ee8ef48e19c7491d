"""Minimal feedforward networks with hand-rolled reverse-mode gradients.

Everything trainable in this package (basis derivative nets, baseline
models, the patch autoencoders) is a plain MLP: ReLU hidden layers, linear
output. Parameters are flat lists of numpy arrays [W0, b0, W1, b1, ...]
so the Adam optimizer and checkpointing work on any collection of nets.
64-bit is the default; float32 is a runtime option with looser tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_VERSION = 1


def hidden_width(k: int) -> int:
    """Hidden-layer width scaled with the number of basis functions,
    h = floor(64 * sqrt(k))."""
    return int(64.0 * math.sqrt(k))


class FeedforwardNet:
    """MLP with ReLU hidden activations and a linear output layer.

    ``layer_sizes`` lists neuron counts including input and output, e.g.
    (24, 313, 313, 313, 313, 6). Weight W has shape (fan_in, fan_out) and
    the forward pass is ``x @ W + b`` per layer. The ReLU subgradient at
    exactly zero is 0.
    """

    def __init__(self, layer_sizes, weights, biases, activation="relu"):
        layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(layer_sizes) < 2 or any(s <= 0 for s in layer_sizes):
            raise ValueError(f"bad layer sizes {layer_sizes}")
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (layer_sizes[i], layer_sizes[i + 1]) or b.shape != (layer_sizes[i + 1],):
                raise ValueError(f"layer {i} parameter shapes inconsistent with {layer_sizes}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"non-finite parameters in layer {i}")
        self.layer_sizes = layer_sizes
        self.weights = list(weights)
        self.biases = list(biases)
        self.activation = activation

    @classmethod
    def create(cls, layer_sizes, rng: np.random.Generator, activation="relu",
               dtype=np.float64) -> "FeedforwardNet":
        """He-uniform fan-in init for weights, zero biases."""
        ws, bs = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = math.sqrt(6.0 / fan_in)
            ws.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
            bs.append(np.zeros(fan_out, dtype=dtype))
        return cls(layer_sizes, ws, bs, activation)

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_params(self, params) -> None:
        for i in range(self.n_layers):
            self.weights[i] = params[2 * i]
            self.biases[i] = params[2 * i + 1]

    def copy(self) -> "FeedforwardNet":
        return FeedforwardNet(self.layer_sizes, [w.copy() for w in self.weights],
                              [b.copy() for b in self.biases], self.activation)

    def _check_input(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=self.dtype))
        if x.shape[1] != self.layer_sizes[0]:
            raise ValueError(
                f"input width {x.shape[1]} != expected {self.layer_sizes[0]}")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self._check_input(x)
        a = x
        last = self.n_layers - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = np.maximum(z, 0.0) if (l < last and self.activation == "relu") else z
        return a

    def forward_cached(self, x: np.ndarray):
        """Forward pass retaining per-layer inputs and pre-activations for
        :meth:`backward`."""
        x = self._check_input(x)
        a = x
        cache = []
        last = self.n_layers - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            cache.append((a, z))
            a = np.maximum(z, 0.0) if (l < last and self.activation == "relu") else z
        return a, cache

    def backward(self, cache, upstream: np.ndarray):
        """Gradients of sum(upstream * forward(x)) from a forward cache.

        Returns (param_grads, input_grad) with param_grads ordered like
        :meth:`params`.
        """
        g = np.asarray(upstream, dtype=self.dtype)
        if g.ndim == 1:
            g = g[np.newaxis, :]
        if g.shape != (cache[0][0].shape[0], self.layer_sizes[-1]):
            raise ValueError(f"upstream shape {g.shape} mismatches output")
        grads = [None] * (2 * self.n_layers)
        last = self.n_layers - 1
        for l in range(last, -1, -1):
            a_in, z = cache[l]
            gz = g * (z > 0.0) if (l < last and self.activation == "relu") else g
            grads[2 * l] = a_in.T @ gz
            grads[2 * l + 1] = gz.sum(axis=0)
            g = gz @ self.weights[l].T
        return grads, g

    def grad_check_ready(self) -> bool:
        return True


def zero_grads_like(params) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in params]


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second-moment accumulators mirroring a parameter list."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params],
                   t=0, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params, grads, state: AdamState, lr: float):
    """One Adam update with bias correction, in place. Returns (params, state)."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ValueError("params/grads/state length mismatch")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ValueError(f"grad {i} shape {g.shape} != param shape {params[i].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {i}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass(frozen=True)
class CosineSchedule:
    """Cosine-annealed learning rate from lr_start down to lr_end."""

    lr_start: float = 1e-3
    lr_end: float = 1e-5
    total_steps: int = 1000

    def __post_init__(self):
        if self.lr_start <= 0 or self.lr_end <= 0 or self.total_steps <= 0:
            raise ValueError("schedule parameters must be positive")

    def lr_at(self, step: int) -> float:
        step = min(max(step, 0), self.total_steps)
        return self.lr_end + 0.5 * (self.lr_start - self.lr_end) * (
            1.0 + math.cos(math.pi * step / self.total_steps))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_net(path, net: FeedforwardNet) -> None:
    """Self-describing single-net checkpoint; bit-exact round trip in 64-bit."""
    arrays = {
        "format_version": np.array(CHECKPOINT_VERSION, dtype=np.int64),
        "layer_sizes": np.array(net.layer_sizes, dtype=np.int64),
        "activation": np.array(net.activation),
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    np.savez(path, **arrays)


def load_net(path) -> FeedforwardNet:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint format version {version} unsupported "
                f"(expected {CHECKPOINT_VERSION})")
        sizes = tuple(int(s) for s in data["layer_sizes"])
        activation = str(data["activation"])
        ws = [data[f"w{i}"] for i in range(len(sizes) - 1)]
        bs = [data[f"b{i}"] for i in range(len(sizes) - 1)]
    return FeedforwardNet(sizes, ws, bs, activation)
