"""DANN with one weighted binary discriminator per domain pair.

For every unordered pair ``i < j`` a small network outputs a logit ``s``
with ``D_ij = sigmoid(s)`` (probability the encoding came from ``i``) and
``D_ji = 1 - D_ij``. The discriminators maximise
``E[sum_{j != u} w_uj log D_uj(e)]``; the encoder minimises it.

All pair networks share a shape, so their weights are stacked into
``(P, out, in)`` tensors and evaluated with batched matmuls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import TsdaModel, encode, encoder_backward, predictor_loss
from .neuralcore import Adam, DivergenceError, Mlp

WEIGHT_SCHEMES = ("inverse-distance", "uniform")


def pair_weights(distances, scheme="inverse-distance") -> np.ndarray:
    """Symmetric pair weights with zero diagonal.

    ``inverse-distance`` is ``1 / A_ij`` rescaled to unit mean off the
    diagonal; ``uniform`` is all ones. An explicit matrix is validated and
    returned as float.
    """
    a = np.asarray(distances, dtype=np.float64)
    n = a.shape[0]
    off = ~np.eye(n, dtype=bool)
    if isinstance(scheme, str):
        if scheme == "uniform":
            w = off.astype(float)
        elif scheme == "inverse-distance":
            w = np.zeros_like(a)
            w[off] = 1.0 / a[off]
            w /= w[off].mean()
        else:
            raise ValueError(f"unknown weight scheme {scheme!r}; expected {WEIGHT_SCHEMES}")
    else:
        w = np.array(scheme, dtype=np.float64)
        if w.shape != a.shape:
            raise ValueError(f"weights must be {a.shape}, got {w.shape}")
        if np.any(w < 0) or not np.allclose(w, w.T):
            raise ValueError("weights must be non-negative and symmetric")
        w = np.where(off, w, 0.0)
    return w


class PairDiscriminators:
    """``P`` independent MLPs with identical layer sizes, stored stacked."""

    def __init__(self, n_pairs, sizes, rng):
        self.W = []
        self.b = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.W.append(rng.uniform(-limit, limit, size=(n_pairs, fan_out, fan_in)))
            self.b.append(np.zeros((n_pairs, 1, fan_out)))

    def params(self):
        out = []
        for W, b in zip(self.W, self.b):
            out += [W, b]
        return out

    def forward(self, h):
        """``h``: (P, n, in) -> logits (P, n)."""
        inputs = []
        last = len(self.W) - 1
        for k, (W, b) in enumerate(zip(self.W, self.b)):
            inputs.append(h)
            h = np.matmul(h, W.transpose(0, 2, 1)) + b
            if k < last:
                h = np.maximum(h, 0.0)
        return h[..., 0], inputs

    def backward(self, inputs, g_logits, need_input_grad=True, need_param_grads=True):
        g = g_logits[..., None]
        grads = [None] * (2 * len(self.W)) if need_param_grads else None
        for k in range(len(self.W) - 1, -1, -1):
            if k < len(self.W) - 1:
                g = g * (inputs[k + 1] > 0.0)
            if need_param_grads:
                grads[2 * k] = np.matmul(g.transpose(0, 2, 1), inputs[k])
                grads[2 * k + 1] = g.sum(axis=1, keepdims=True)
            if k > 0 or need_input_grad:
                g = np.matmul(g, self.W[k])
        return grads, (g if need_input_grad else None)


@dataclass
class PairwiseDannModel(TsdaModel):
    pair_nets: PairDiscriminators = None
    pairs: np.ndarray = None  # (P, 2), i < j
    weights: np.ndarray = None  # (N, N)

    @classmethod
    def build(cls, n_features, embeddings, norm_distances, distances, weights, n_classes,
              cfg, rng) -> "PairwiseDannModel":
        n = embeddings.n_domains
        h = cfg.hidden
        raw = Mlp.init([n_features, h, h, h], rng)
        joint = Mlp.init([h + embeddings.d_z, h, cfg.encoding_dim], rng)
        pred = Mlp.init([cfg.encoding_dim, h, h, n_classes], rng)
        iu, ju = np.triu_indices(n, k=1)
        pairs = np.stack([iu, ju], axis=1)
        nets = PairDiscriminators(
            len(pairs), [cfg.encoding_dim] + [cfg.pair_hidden] * 5 + [1], rng
        )
        w = pair_weights(distances, "inverse-distance" if weights is None else weights)
        return cls(raw, joint, None, None, pred, embeddings, norm_distances,
                   lambda_e=cfg.lambda_e, lambda_d=cfg.lambda_d, lambda_t=0.0,
                   pair_nets=nets, pairs=pairs, weights=w)

    def networks(self) -> dict:
        return {"raw_encoder": self.raw_encoder, "joint_encoder": self.joint_encoder,
                "predictor": self.predictor}


def gather_pair_rows(m: PairwiseDannModel, u):
    """Row indices relevant to each pair discriminator, padded to equal length.

    Returns ``(index, target, weight)``, each of shape (P, M): ``target`` is
    1 for rows of the pair's first domain, and ``weight`` is ``w_ij`` on
    real rows and 0 on padding.
    """
    u = np.asarray(u)
    by_dom = [np.flatnonzero(u == d) for d in range(m.n_domains)]
    width = max(1, max(len(by_dom[i]) + len(by_dom[j]) for i, j in m.pairs))
    P = len(m.pairs)
    index = np.zeros((P, width), dtype=int)
    target = np.zeros((P, width))
    weight = np.zeros((P, width))
    for p, (i, j) in enumerate(m.pairs):
        ri, rj = by_dom[i], by_dom[j]
        k = len(ri) + len(rj)
        index[p, :len(ri)] = ri
        index[p, len(ri):k] = rj
        target[p, :len(ri)] = 1.0
        weight[p, :k] = m.weights[i, j]
    return index, target, weight


def pairwise_loss(m: PairwiseDannModel, e, u, gathered=None, param_grads=True,
                  input_grad=True):
    """Weighted binary cross-entropy of all pair discriminators, averaged over rows.

    Its negation is the inner objective the discriminators maximise.
    Returns ``(loss, pair_grads, grad_e)``; either gradient is ``None`` when
    not requested.
    """
    n = len(u)
    index, target, w = gathered if gathered is not None else gather_pair_rows(m, u)
    s, trace = m.pair_nets.forward(e[index])
    # log(1 + exp(-|s|)) form of the logistic loss
    loss_terms = np.maximum(s, 0.0) - s * target + np.log1p(np.exp(-np.abs(s)))
    loss = float(np.sum(w * loss_terms) / n)
    sig = 0.5 * (1.0 + np.tanh(0.5 * s))
    g_s = w * (sig - target) / n
    if not (param_grads or input_grad):
        return loss, None, None
    grads, g_h0 = m.pair_nets.backward(trace, g_s, need_input_grad=input_grad,
                                       need_param_grads=param_grads)
    grad_e = None
    if input_grad:
        grad_e = np.zeros_like(e)
        np.add.at(grad_e, index.ravel(), g_h0.reshape(-1, e.shape[1]))
    return loss, grads, grad_e


def pairwise_objective_value(m: PairwiseDannModel, e, u) -> float:
    """``mean_rows sum_{j != u} w_uj log D_uj(e)`` (the quantity in the minimax game)."""
    return -pairwise_loss(m, e, u)[0]


@dataclass
class _PairOpt:
    d: Adam
    etf: Adam


def pairwise_step(m: PairwiseDannModel, opt: _PairOpt, x, u, y, rng):
    from .training import StepLosses

    u = np.asarray(u)
    y = np.asarray(y)
    e, enc_trace = encode(m, x, u, return_trace=True)
    gathered = gather_pair_rows(m, u)
    loss_d, g_d, _ = pairwise_loss(m, e, u, gathered, input_grad=False)
    if not math.isfinite(loss_d):
        raise DivergenceError(f"pairwise discriminator loss became non-finite ({loss_d})")
    opt.d.step(g_d)
    grad_e = np.zeros_like(e)
    if m.lambda_d:
        _, _, g_e = pairwise_loss(m, e, u, gathered, param_grads=False)
        grad_e -= m.lambda_d * g_e
    lab = y >= 0
    if lab.any():
        loss_f, g_f, g_e = predictor_loss(m, e[lab], y[lab])
        grad_e[lab] += m.lambda_e * g_e
        g_f = [m.lambda_e * g for g in g_f]
    else:
        loss_f = float("nan")
        g_f = [np.zeros_like(p) for p in m.predictor.params()]
    opt.etf.step(encoder_backward(m, enc_trace, grad_e) + g_f)
    return StepLosses(loss_f, loss_d, float("nan"))


def fit_pairwise(m: PairwiseDannModel, X, y, u, cfg, eval_labels=None, callback=None):
    from .training import _loop

    opt = _PairOpt(Adam(m.pair_nets.params(), lr=cfg.lr_d),
                   Adam(m.encoder_params + m.predictor.params(), lr=cfg.lr_etf))
    return _loop(m, opt, X, y, u, np.arange(len(y)), cfg, "pairwise-dann", eval_labels,
                 callback, pairwise_step)
