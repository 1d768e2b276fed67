"""Alternating minimax training, inference, and the baseline methods.

Each mini-batch does two sub-steps: an Adam step on the discriminator with
the encoder frozen, then an Adam step on encoder, taxonomist and predictor
against the updated, now frozen, discriminator. DANN is the same loop with
the taxonomist weight at zero; Source-Only drops both adversarial players.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from ._rng import derive_rng
from .model import (
    TsdaModel,
    discriminator_loss,
    encode,
    encoder_backward,
    normalize_distances,
    predictor_loss,
    pretrain_domain_embeddings,
    taxonomist_loss,
)
from .neuralcore import Adam, DivergenceError, cross_entropy
from .taxonomy import is_non_informative

logger = logging.getLogger(__name__)

METHODS = ("tsda", "dann", "source-only", "pairwise-dann")


class TaxonomistWeightWarning(UserWarning):
    """lambda_t <= lambda_d on an informative taxonomy.

    In that regime the optimum may collapse to uniform alignment and ignore
    the taxonomy; ``lambda_t > lambda_d`` is the safe choice.
    """


@dataclass
class TrainConfig:
    lambda_e: float = 0.5
    lambda_d: float = 0.25
    lambda_t: float = 2.0
    lr_d: float = 1e-4
    lr_etf: float = 1e-4
    batch_size: int = 64
    epochs: int = 500
    seed: int = 0
    warn_on_lambda: bool = True
    hidden: int = 64
    encoding_dim: int = 2
    embedding_dim: int = 8
    pretrain_epochs: int = 3000
    pair_hidden: int = 32

    def __post_init__(self):
        for name in ("lambda_e", "lambda_d", "lambda_t"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("lr_d", "lr_etf"):
            lr = getattr(self, name)
            if not 1e-6 <= lr <= 1e-1:
                raise ValueError(f"{name}={lr} outside [1e-6, 1e-1]")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (pairs need two rows)")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})


def _coerce(value: str, kind):
    if kind is bool:
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return kind(value.strip())


def parse_config(text: str) -> dict:
    """Parse flat ``key = value`` lines into TrainConfig field values.

    Blank lines and ``#`` comments are skipped; unknown keys are errors.
    """
    kinds = {f.name: type(getattr(TrainConfig(), f.name)) for f in fields(TrainConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in kinds:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        out[key] = _coerce(value, kinds[key])
    return out


def format_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())


@dataclass
class MetricsRow:
    epoch: int
    loss_f: float
    loss_d: float
    loss_t: float
    acc_domain: list
    acc_target_avg: float


def metrics_csv(history, n_domains: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "L_f", "L_d", "L_t"]
               + [f"acc_domain_{k}" for k in range(n_domains)] + ["acc_target_avg"])
    for r in history:
        w.writerow([r.epoch, repr(r.loss_f), repr(r.loss_d), repr(r.loss_t)]
                   + [repr(a) for a in r.acc_domain] + [repr(r.acc_target_avg)])
    return buf.getvalue()


# ------------------------------------------------------------------ batches

def pair_sampler(u, rng: np.random.Generator) -> np.ndarray:
    """Random pairing of batch rows, keeping only cross-domain pairs.

    Rows are shuffled and consecutive rows paired, so ``floor(n/2)`` pairs
    are formed before same-domain pairs are dropped.
    """
    u = np.asarray(u)
    perm = rng.permutation(len(u))
    k = len(u) // 2
    pairs = np.stack([perm[0:2 * k:2], perm[1:2 * k:2]], axis=1)
    keep = u[pairs[:, 0]] != u[pairs[:, 1]]
    return pairs[keep]


def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if len(idx) >= 2:
            yield idx


@dataclass
class StepLosses:
    loss_f: float
    loss_d: float
    loss_t: float


@dataclass
class Optimizers:
    d: Optional[Adam]
    etf: Adam


def make_optimizers(m: TsdaModel, cfg: TrainConfig) -> Optimizers:
    etf = m.encoder_params + m.predictor.params()
    if m.taxonomist is not None:
        etf += m.taxonomist.params()
    d = Adam(m.discriminator.params(), lr=cfg.lr_d) if m.discriminator is not None else None
    return Optimizers(d, Adam(etf, lr=cfg.lr_etf))


def _check(value, what):
    if not math.isfinite(value):
        raise DivergenceError(f"{what} became non-finite ({value})")


def train_step(m: TsdaModel, opt: Optimizers, x, u, y, rng: np.random.Generator) -> StepLosses:
    """One alternating update on a batch; ``y`` is -1 on unlabelled rows."""
    u = np.asarray(u)
    y = np.asarray(y)
    e, enc_trace = encode(m, x, u, return_trace=True)
    grad_e = np.zeros_like(e)

    loss_d = float("nan")
    if m.discriminator is not None:
        # (1) discriminator step, encoder fixed
        logits, d_trace = m.discriminator.forward(e)
        loss_d, g = cross_entropy(logits, u)
        _check(loss_d, "L_d")
        g_d, _ = m.discriminator.backward(d_trace, g, need_input_grad=False)
        opt.d.step(g_d)
        if m.lambda_d:
            # (2a) adversarial signal from the updated discriminator
            _, _, g_e = discriminator_loss(m, e, u)
            grad_e -= m.lambda_d * g_e

    etf_grads = []
    loss_t = float("nan")
    if m.taxonomist is not None:
        pairs = pair_sampler(u, rng)
        loss_t, g_t, g_e = taxonomist_loss(m, e, u, pairs)
        _check(loss_t, "L_t")
        grad_e += m.lambda_t * g_e
        etf_grads_t = [m.lambda_t * g for g in g_t]
    lab = y >= 0
    if lab.any():
        loss_f, g_f, g_e = predictor_loss(m, e[lab], y[lab])
        _check(loss_f, "L_f")
        grad_e[lab] += m.lambda_e * g_e
        g_f = [m.lambda_e * g for g in g_f]
    else:
        loss_f = float("nan")
        g_f = [np.zeros_like(p) for p in m.predictor.params()]

    etf_grads = encoder_backward(m, enc_trace, grad_e) + g_f
    if m.taxonomist is not None:
        etf_grads += etf_grads_t
    opt.etf.step(etf_grads)
    return StepLosses(loss_f, loss_d, loss_t)


# --------------------------------------------------------------- inference

def predict_logits(m, x, u) -> np.ndarray:
    return m.predictor(encode(m, x, u))


def infer(m, x, u) -> np.ndarray:
    """Predicted labels ``argmax F(E(x, u))``; ties go to the lowest class."""
    return np.argmax(predict_logits(m, x, u), axis=1)


def domain_accuracies(m, x, u, y, n_domains: int) -> np.ndarray:
    pred = infer(m, x, u)
    acc = np.full(n_domains, np.nan)
    for d in range(n_domains):
        sel = u == d
        if sel.any():
            acc[d] = float(np.mean(pred[sel] == y[sel]))
    return acc


# ------------------------------------------------------------------ driver

@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    method: str = "tsda"
    config: TrainConfig = None

    @property
    def final(self) -> MetricsRow:
        return self.history[-1]


def _standardizer(x):
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    return mean, np.where(scale > 0, scale, 1.0)


def _lambda_warning(cfg: TrainConfig, distances):
    if cfg.warn_on_lambda and cfg.lambda_t <= cfg.lambda_d and not is_non_informative(distances):
        warnings.warn(
            f"lambda_t={cfg.lambda_t} <= lambda_d={cfg.lambda_d} on an informative taxonomy: "
            "training may settle on uniform alignment and ignore the taxonomy "
            "(choose lambda_t > lambda_d)",
            TaxonomistWeightWarning,
            stacklevel=3,
        )


def fit_arrays(X, y, u, distances, cfg: TrainConfig, method: str = "tsda",
               weights=None, eval_labels=None, callback=None) -> TrainResult:
    """Train on pooled arrays.

    ``y`` holds -1 for unlabelled rows; those rows never contribute to the
    label loss. ``eval_labels`` (true labels for every row) is only used to
    fill per-epoch accuracy metrics and never reaches a gradient.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    u = np.asarray(u, dtype=int)
    distances = np.asarray(distances)
    labelled = y >= 0
    if not labelled.any():
        raise ValueError("no labelled (source) rows to train on")
    n_classes = int(y[labelled].max()) + 1 if eval_labels is None else int(
        max(y[labelled].max(), np.asarray(eval_labels).max())) + 1
    n_classes = max(n_classes, 2)

    if method == "tsda":
        _lambda_warning(cfg, distances)
    if method == "dann":
        cfg = cfg.replace(lambda_t=0.0)

    emb = pretrain_domain_embeddings(distances, cfg.embedding_dim, cfg.pretrain_epochs, cfg.seed)
    logger.debug("embedding pretraining finished with L_g=%.3g", emb.final_loss)
    build_rng = derive_rng(cfg.seed, "init", method)
    norm_a = normalize_distances(distances)
    mean, scale = _standardizer(X)

    if method == "pairwise-dann":
        from .pairwise import PairwiseDannModel, fit_pairwise

        m = PairwiseDannModel.build(X.shape[1], emb, norm_a, distances, weights, n_classes, cfg,
                                    build_rng)
        m.x_mean, m.x_scale = mean, scale
        return fit_pairwise(m, X, y, u, cfg, eval_labels, callback)

    m = TsdaModel.build(
        X.shape[1], emb, norm_a, n_classes=n_classes, hidden=cfg.hidden,
        encoding_dim=cfg.encoding_dim, rng=build_rng,
        with_discriminator=method in ("tsda", "dann"),
        with_taxonomist=method == "tsda" and cfg.lambda_t > 0,
        lambda_e=cfg.lambda_e if method != "source-only" else 1.0,
        lambda_d=cfg.lambda_d if method != "source-only" else 0.0,
        lambda_t=cfg.lambda_t if method == "tsda" else 0.0,
    )
    m.x_mean, m.x_scale = mean, scale
    opt = make_optimizers(m, cfg)
    rows = np.flatnonzero(labelled) if method == "source-only" else np.arange(len(y))
    return _loop(m, opt, X, y, u, rows, cfg, method, eval_labels, callback, train_step)


def _loop(m, opt, X, y, u, rows, cfg, method, eval_labels, callback, step_fn) -> TrainResult:
    n_domains = m.n_domains
    batch_rng = derive_rng(cfg.seed, "batches", method)
    pair_rng = derive_rng(cfg.seed, "pairs", method)
    target_mask = np.ones(n_domains, bool)
    target_mask[np.unique(u[y >= 0])] = False
    history = []
    for epoch in range(cfg.epochs):
        sums = np.zeros(3)
        counts = np.zeros(3)
        for idx in iterate_minibatches(len(rows), cfg.batch_size, batch_rng):
            b = rows[idx]
            losses = step_fn(m, opt, X[b], u[b], y[b], pair_rng)
            for k, v in enumerate((losses.loss_f, losses.loss_d, losses.loss_t)):
                if not math.isnan(v):
                    sums[k] += v
                    counts[k] += 1
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        if eval_labels is not None:
            acc = domain_accuracies(m, X, u, np.asarray(eval_labels), n_domains)
            tgt = acc[target_mask]
            avg = float(np.nanmean(tgt)) if np.isfinite(tgt).any() else float("nan")
            acc_list = acc.tolist()
        else:
            acc_list, avg = [float("nan")] * n_domains, float("nan")
        row = MetricsRow(epoch, float(means[0]), float(means[1]), float(means[2]), acc_list, avg)
        history.append(row)
        if callback is not None:
            callback(row)
    if not history:
        history.append(MetricsRow(-1, float("nan"), float("nan"), float("nan"),
                                  [float("nan")] * n_domains, float("nan")))
        if eval_labels is not None:
            acc = domain_accuracies(m, X, u, np.asarray(eval_labels), n_domains)
            history[-1].acc_domain = acc.tolist()
            history[-1].acc_target_avg = float(np.nanmean(acc[target_mask]))
    return TrainResult(m, history, method, cfg)


def train(benchmark, cfg: TrainConfig = None, method: str = "tsda", weights=None,
          callback=None) -> TrainResult:
    """Train one method on a :class:`~tsda.synthgen.GaussBenchmark`.

    Target-domain labels are masked before training and only reused for
    per-epoch accuracy reporting.
    """
    cfg = cfg or TrainConfig()
    if not benchmark.source_domains:
        raise ValueError("benchmark has no source domains")
    return fit_arrays(benchmark.X, benchmark.training_labels(), benchmark.u,
                      benchmark.distances, cfg, method=method, weights=weights,
                      eval_labels=benchmark.y, callback=callback)


def train_source_only(benchmark, cfg: TrainConfig = None, **kw) -> TrainResult:
    return train(benchmark, cfg, method="source-only", **kw)


def train_dann(benchmark, cfg: TrainConfig = None, **kw) -> TrainResult:
    return train(benchmark, cfg, method="dann", **kw)


def train_pairwise_dann(benchmark, weights="inverse-distance", cfg: TrainConfig = None,
                        **kw) -> TrainResult:
    return train(benchmark, cfg, method="pairwise-dann", weights=weights, **kw)
