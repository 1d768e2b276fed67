"""Small dense-network engine: forward, reverse-mode gradients, Adam.

Networks are sequential stacks of affine layers with ReLU on hidden layers
and identity on the last. Everything is float64. Parameters are plain
numpy arrays owned by the layers; optimizers update them in place.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

RELU = "relu"
IDENTITY = "identity"


class DivergenceError(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class Dense:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = RELU

    @property
    def shape(self):
        return self.W.shape


class Mlp:
    """Sequential stack of :class:`Dense` layers."""

    def __init__(self, layers: Sequence[Dense]):
        layers = list(layers)
        if not layers:
            raise ValueError("an Mlp needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].W.shape[1] != layers[k - 1].W.shape[0]:
                raise ValueError(
                    f"layer {k} expects width {layers[k].W.shape[1]}, "
                    f"previous layer gives {layers[k - 1].W.shape[0]}"
                )
        if layers[-1].activation != IDENTITY:
            raise ValueError("the final layer must use the identity activation")
        self.layers = layers

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator) -> "Mlp":
        """Glorot-uniform weights, zero biases; ``sizes`` = [in, hidden..., out]."""
        if len(sizes) < 2:
            raise ValueError("sizes needs an input and an output width")
        layers = []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            act = IDENTITY if k == len(sizes) - 2 else RELU
            layers.append(Dense(W, np.zeros(fan_out), act))
        return cls(layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def n_out(self) -> int:
        return self.layers[-1].W.shape[0]

    def params(self) -> list:
        out = []
        for layer in self.layers:
            out.append(layer.W)
            out.append(layer.b)
        return out

    def copy(self) -> "Mlp":
        return Mlp([Dense(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])

    def forward(self, x: np.ndarray):
        """Return ``(output, trace)``; the trace feeds :meth:`backward`."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"expected input of shape (n, {self.n_in}), got {x.shape}")
        inputs = []
        h = x
        for layer in self.layers:
            inputs.append(h)
            h = h @ layer.W.T + layer.b
            if layer.activation == RELU:
                h = np.maximum(h, 0.0)
        return h, inputs

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, trace, grad_out: np.ndarray, need_input_grad: bool = True):
        """Gradients of a scalar loss given ``d loss / d output``.

        Returns ``(param_grads, grad_input)`` with ``param_grads`` aligned
        with :meth:`params`. ReLU masks are recovered from the next layer's
        cached input, so the trace holds only one array per layer.
        """
        inputs = trace
        if len(inputs) != len(self.layers):
            raise ValueError("trace does not belong to this network")
        g = np.asarray(grad_out, dtype=np.float64)
        if g.shape != (inputs[0].shape[0], self.n_out):
            raise ValueError(
                f"upstream gradient has shape {g.shape}, expected {(inputs[0].shape[0], self.n_out)}"
            )
        grads = [None] * (2 * len(self.layers))
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if layer.activation == RELU:
                out = inputs[k + 1] if k + 1 < len(inputs) else None
                if out is None:
                    raise ValueError("a ReLU output layer cannot be differentiated from the trace")
                g = g * (out > 0.0)
            grads[2 * k] = g.T @ inputs[k]
            grads[2 * k + 1] = g.sum(axis=0)
            if k > 0 or need_input_grad:
                g = g @ layer.W
        return grads, (g if need_input_grad else None)


class Adam:
    """Adam with bias correction over a fixed list of parameter arrays."""

    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        for g, p in zip(grads, self.params):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            if not np.all(np.isfinite(g)):
                raise DivergenceError("non-finite gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        step = self.lr * math.sqrt(c2) / c1
        eps = self.eps * math.sqrt(c2)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= step * m / (np.sqrt(v) + eps)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, target: np.ndarray):
    """Mean softmax cross-entropy and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target)
    n, k = logits.shape
    if target.shape != (n,):
        raise ValueError(f"expected {n} class indices, got shape {target.shape}")
    if n and (target.min() < 0 or target.max() >= k):
        raise ValueError(f"class index out of range 0..{k - 1}")
    if n == 0:
        return 0.0, np.zeros_like(logits)
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, target]))
    grad = np.exp(z - logsum[:, None])
    grad[rows, target] -= 1.0
    grad /= n
    return loss, grad


def squared_error(pred: np.ndarray, target: np.ndarray):
    """Mean of elementwise squared differences and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.size == 0:
        return 0.0, np.zeros_like(pred)
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# ------------------------------------------------------------- checkpoints

def mlp_to_dict(net: Mlp) -> dict:
    out = {}
    for k, layer in enumerate(net.layers):
        out[f"{k}.weight"] = {"shape": list(layer.W.shape), "data": layer.W.ravel().tolist(),
                              "activation": layer.activation}
        out[f"{k}.bias"] = {"shape": list(layer.b.shape), "data": layer.b.tolist()}
    return out


def mlp_from_dict(d: dict) -> Mlp:
    layers = []
    k = 0
    while f"{k}.weight" in d:
        w = d[f"{k}.weight"]
        b = d[f"{k}.bias"]
        W = np.array(w["data"], dtype=np.float64).reshape(w["shape"])
        layers.append(Dense(W, np.array(b["data"], dtype=np.float64).reshape(b["shape"]),
                            w.get("activation", RELU)))
        k += 1
    return Mlp(layers)


def save_checkpoint(nets: dict, path: str, extra: dict = None) -> None:
    """Write named networks as one JSON document (floats round-trip exactly)."""
    doc = {"networks": {name: mlp_to_dict(net) for name, net in nets.items()}}
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path: str):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    nets = {name: mlp_from_dict(d) for name, d in doc.pop("networks").items()}
    return nets, doc
