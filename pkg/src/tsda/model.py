"""The four-player model: encoder, discriminator, taxonomist, predictor.

The encoder is ``e = joint(concat(raw(x), z_u))`` where ``z_u`` is a
pretrained, frozen domain embedding. The discriminator classifies ``u``
from ``e``; the taxonomist maps ``e`` to a 2-D point ``t`` and is scored on
how well ``||t1 - t2||`` reproduces the taxonomy distance of a pair; the
predictor classifies the label.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._rng import derive_rng
from .neuralcore import Adam, DivergenceError, Mlp, cross_entropy, squared_error


def normalize_distances(a) -> np.ndarray:
    """Scale distances by the root-mean-square off-diagonal entry.

    The diagonal stays zero and all off-diagonal entries stay positive, so
    the result is still a valid regression target for a norm; a flat
    taxonomy maps to all-ones off the diagonal.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if n < 2:
        return np.zeros_like(a)
    off = a[~np.eye(n, dtype=bool)]
    return a / np.sqrt(np.mean(off * off))


@dataclass
class DomainEmbeddings:
    z: np.ndarray
    encoder: Optional[Mlp] = None
    losses: list = field(default_factory=list)

    @property
    def d_z(self) -> int:
        return self.z.shape[1]

    @property
    def n_domains(self) -> int:
        return self.z.shape[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def embedding_loss(z: np.ndarray, target: np.ndarray):
    """Mean over ordered pairs i != j of ``(|z_i . z_j| - target_ij)**2``.

    Returns ``(loss, d loss / d z)``.
    """
    n = z.shape[0]
    if n < 2:
        return 0.0, np.zeros_like(z)
    s = z @ z.T
    off = ~np.eye(n, dtype=bool)
    r = np.where(off, np.abs(s) - target, 0.0)
    m = n * (n - 1)
    loss = float(np.sum(r * r) / m)
    coef = 2.0 * r * np.sign(s) / m
    # s is symmetric, so each z_i collects from both (i, j) and (j, i)
    grad = (coef + coef.T) @ z
    return loss, grad


def pretrain_domain_embeddings(
    a,
    d_z: int = 8,
    epochs: int = 3000,
    seed: int = 0,
    lr: float = 1e-2,
    normalize: bool = True,
) -> DomainEmbeddings:
    """Fit a one-layer taxonomy encoder mapping each domain's row of A to ``z_u``.

    Full-batch Adam over all ordered domain pairs, i.e. the exact
    expectation under uniform pair sampling. The loss after the last update
    is recorded as ``losses[-1]``.
    """
    a = np.asarray(a, dtype=np.float64)
    target = normalize_distances(a) if normalize else a
    n = target.shape[0]
    rng = derive_rng(seed, "taxonomy-encoder")
    enc = Mlp.init([n, d_z], rng)
    opt = Adam(enc.params(), lr=lr)
    losses = []
    for _ in range(epochs):
        z, trace = enc.forward(target)
        loss, gz = embedding_loss(z, target)
        if not np.isfinite(loss):
            raise DivergenceError("taxonomy-encoder pretraining diverged")
        losses.append(loss)
        grads, _ = enc.backward(trace, gz, need_input_grad=False)
        opt.step(grads)
    z = enc(target)
    losses.append(embedding_loss(z, target)[0])
    z.setflags(write=False)
    return DomainEmbeddings(z, enc, losses)


@dataclass
class TsdaModel:
    """Wired players plus the frozen embedding table and loss weights."""

    raw_encoder: Mlp
    joint_encoder: Mlp
    discriminator: Optional[Mlp]
    taxonomist: Optional[Mlp]
    predictor: Mlp
    embeddings: DomainEmbeddings
    distances: np.ndarray  # normalized
    lambda_e: float = 0.5
    lambda_d: float = 0.25
    lambda_t: float = 2.0
    x_mean: np.ndarray = None
    x_scale: np.ndarray = None

    def __post_init__(self):
        for name in ("lambda_e", "lambda_d", "lambda_t"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.x_mean is None:
            self.x_mean = np.zeros(self.raw_encoder.n_in)
        if self.x_scale is None:
            self.x_scale = np.ones(self.raw_encoder.n_in)

    @classmethod
    def build(
        cls,
        n_features: int,
        embeddings: DomainEmbeddings,
        distances,
        n_classes: int = 2,
        hidden: int = 64,
        encoding_dim: int = 2,
        rng: np.random.Generator = None,
        with_discriminator: bool = True,
        with_taxonomist: bool = True,
        **lambdas,
    ) -> "TsdaModel":
        rng = rng if rng is not None else np.random.default_rng(0)
        n = embeddings.n_domains
        h = hidden
        raw = Mlp.init([n_features, h, h, h], rng)
        joint = Mlp.init([h + embeddings.d_z, h, encoding_dim], rng)
        disc = Mlp.init([encoding_dim] + [h] * 5 + [n], rng) if with_discriminator else None
        tax = Mlp.init([encoding_dim] + [h] * 5 + [2], rng) if with_taxonomist else None
        pred = Mlp.init([encoding_dim, h, h, n_classes], rng)
        return cls(raw, joint, disc, tax, pred, embeddings, np.asarray(distances, float), **lambdas)

    @property
    def n_domains(self) -> int:
        return self.embeddings.n_domains

    @property
    def encoder_params(self) -> list:
        return self.raw_encoder.params() + self.joint_encoder.params()

    def networks(self) -> dict:
        nets = {"raw_encoder": self.raw_encoder, "joint_encoder": self.joint_encoder,
                "predictor": self.predictor}
        if self.discriminator is not None:
            nets["discriminator"] = self.discriminator
        if self.taxonomist is not None:
            nets["taxonomist"] = self.taxonomist
        return nets

    def check_domains(self, u) -> np.ndarray:
        u = np.asarray(u)
        if u.size and (u.min() < 0 or u.max() >= self.n_domains):
            raise IndexError(f"domain index out of range 0..{self.n_domains - 1}")
        return u.astype(int, copy=False)


def encode(m: TsdaModel, x, u, return_trace: bool = False):
    """Encoding ``e = joint(concat(raw(x), z_u))`` of standardized ``x``."""
    u = m.check_domains(u)
    x = (np.asarray(x, dtype=np.float64) - m.x_mean) / m.x_scale
    h, raw_trace = m.raw_encoder.forward(x)
    hz = np.concatenate([h, m.embeddings.z[u]], axis=1)
    e, joint_trace = m.joint_encoder.forward(hz)
    if return_trace:
        return e, (raw_trace, joint_trace, h.shape[1])
    return e


def encoder_backward(m: TsdaModel, trace, grad_e) -> list:
    """Encoder parameter gradients given ``d loss / d e``; z stays frozen."""
    raw_trace, joint_trace, h_width = trace
    g_joint, g_hz = m.joint_encoder.backward(joint_trace, grad_e)
    g_raw, _ = m.raw_encoder.backward(raw_trace, g_hz[:, :h_width], need_input_grad=False)
    return g_raw + g_joint


def discriminator_loss(m: TsdaModel, e, u):
    """Mean cross-entropy of the domain classifier.

    Returns ``(loss, discriminator_grads, grad_e)``.
    """
    logits, trace = m.discriminator.forward(e)
    loss, g = cross_entropy(logits, np.asarray(u))
    grads, grad_e = m.discriminator.backward(trace, g)
    return loss, grads, grad_e


def taxonomist_loss(m: TsdaModel, e, u, pairs, distances=None):
    """Mean squared error between ``||t1 - t2||`` and the pair's distance.

    ``pairs`` is an ``(n_pairs, 2)`` array of row indices into ``e``.
    An empty pairing gives zero loss and zero gradients.
    """
    a = m.distances if distances is None else np.asarray(distances, float)
    u = np.asarray(u)
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    t, trace = m.taxonomist.forward(e)
    if len(pairs) == 0:
        zero = [np.zeros_like(p) for p in m.taxonomist.params()]
        return 0.0, zero, np.zeros_like(e)
    i, j = pairs[:, 0], pairs[:, 1]
    diff = t[i] - t[j]
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    loss, g_dist = squared_error(dist, a[u[i], u[j]])
    safe = np.where(dist > 0.0, dist, 1.0)
    g_diff = np.where(dist[:, None] > 0.0, diff / safe[:, None], 0.0) * g_dist[:, None]
    g_t = np.zeros_like(t)
    np.add.at(g_t, i, g_diff)
    np.add.at(g_t, j, -g_diff)
    grads, grad_e = m.taxonomist.backward(trace, g_t)
    return loss, grads, grad_e


def predictor_loss(m: TsdaModel, e, y):
    """Mean cross-entropy of the label predictor on labelled rows."""
    logits, trace = m.predictor.forward(e)
    loss, g = cross_entropy(logits, np.asarray(y))
    grads, grad_e = m.predictor.backward(trace, g)
    return loss, grads, grad_e


def combine_objective(lambda_e, lambda_d, lambda_t, loss_f, loss_d, loss_t) -> float:
    return lambda_e * loss_f - lambda_d * loss_d + lambda_t * loss_t


def game_objective(m: TsdaModel, x, u, y, pairs) -> float:
    """``lambda_e * L_f - lambda_d * L_d + lambda_t * L_t`` on one batch.

    ``y`` uses -1 for unlabelled rows; only labelled rows enter ``L_f``.
    Terms with a zero weight (or a missing player) are not evaluated.
    """
    e = encode(m, x, u)
    y = np.asarray(y)
    lab = y >= 0
    lf = predictor_loss(m, e[lab], y[lab])[0] if lab.any() and m.lambda_e else 0.0
    ld = discriminator_loss(m, e, u)[0] if m.lambda_d and m.discriminator is not None else 0.0
    lt = taxonomist_loss(m, e, u, pairs)[0] if m.lambda_t and m.taxonomist is not None else 0.0
    return combine_objective(m.lambda_e, m.lambda_d, m.lambda_t, lf, ld, lt)


# ------------------------------------------------------------- checkpoints

def save_model(m: TsdaModel, path: str, extra: dict = None) -> None:
    """Write the model's networks plus the frozen state inference needs."""
    from .neuralcore import save_checkpoint

    state = {
        "embeddings": m.embeddings.z.tolist(),
        "distances": np.asarray(m.distances, float).tolist(),
        "x_mean": m.x_mean.tolist(),
        "x_scale": m.x_scale.tolist(),
        "lambdas": {"lambda_e": m.lambda_e, "lambda_d": m.lambda_d, "lambda_t": m.lambda_t},
    }
    if extra:
        state.update(extra)
    save_checkpoint(m.networks(), path, state)


def load_model(path: str):
    """Inverse of :func:`save_model`; returns ``(model, extra)``.

    Players that were not saved (e.g. pair discriminators) come back as
    ``None``; encoder and predictor are always present.
    """
    from .neuralcore import load_checkpoint

    nets, doc = load_checkpoint(path)
    try:
        z = np.array(doc.pop("embeddings"), dtype=np.float64)
        a = np.array(doc.pop("distances"), dtype=np.float64)
        x_mean = np.array(doc.pop("x_mean"), dtype=np.float64)
        x_scale = np.array(doc.pop("x_scale"), dtype=np.float64)
        lambdas = doc.pop("lambdas")
        m = TsdaModel(nets["raw_encoder"], nets["joint_encoder"], nets.get("discriminator"),
                      nets.get("taxonomist"), nets["predictor"], DomainEmbeddings(z), a,
                      x_mean=x_mean, x_scale=x_scale, **lambdas)
    except KeyError as exc:
        raise ValueError(f"{path}: not a model checkpoint (missing {exc})") from None
    return m, doc
