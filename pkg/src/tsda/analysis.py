"""Alignment probing, evaluation, and numeric checks of the game's theory.

The oracles here are independent of training: they work on discrete
encoding distributions or on encodings sampled independently of the
domain, where the relevant quantities have closed forms.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._rng import derive_rng
from .model import encode
from .neuralcore import Adam, Mlp, cross_entropy
from .taxonomy import is_non_informative


# ------------------------------------------------------------------ probing

class InsufficientDataError(ValueError):
    pass


@dataclass
class ProbeResult:
    accuracy: float
    chance: float
    confusion: np.ndarray  # (N, N) counts, rows = true domain
    n_test: int

    @property
    def margin(self) -> float:
        """Accuracy above chance."""
        return self.accuracy - self.chance

    def is_uniformly_aligned(self, tol: float = 0.1) -> bool:
        return self.accuracy <= self.chance + tol


def stratified_split(domains, test_fraction: float, rng: np.random.Generator):
    train, test = [], []
    for d in np.unique(domains):
        idx = rng.permutation(np.flatnonzero(domains == d))
        n_test = int(round(test_fraction * len(idx)))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.concatenate(train), np.concatenate(test)


def alignment_probe(encodings, domains, seed: int = 0, epochs: int = 200, hidden: int = 64,
                    lr: float = 1e-3, batch_size: int = 64, test_fraction: float = 0.2) -> ProbeResult:
    """Held-out accuracy of a fresh 6-layer domain classifier on frozen encodings.

    The split is stratified by domain, so a constant prediction scores
    exactly chance on balanced data.
    """
    e = np.asarray(encodings, dtype=np.float64)
    if e.ndim == 1:
        e = e[:, None]
    u = np.asarray(domains, dtype=int)
    labels, counts = np.unique(u, return_counts=True)
    if len(labels) < 2:
        raise InsufficientDataError("the probe needs at least two domains")
    if counts.min() < 10:
        raise InsufficientDataError(
            f"domain {labels[counts.argmin()]} has {counts.min()} encodings; need >= 10"
        )
    n_dom = int(labels.max()) + 1
    rng = derive_rng(seed, "probe")
    tr, te = stratified_split(u, test_fraction, rng)
    mean = e[tr].mean(axis=0)
    scale = e[tr].std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    z = (e - mean) / scale

    net = Mlp.init([e.shape[1]] + [hidden] * 5 + [n_dom], rng)
    opt = Adam(net.params(), lr=lr)
    for _ in range(epochs):
        order = rng.permutation(tr)
        for start in range(0, len(order), batch_size):
            b = order[start:start + batch_size]
            logits, trace = net.forward(z[b])
            _, g = cross_entropy(logits, u[b])
            grads, _ = net.backward(trace, g, need_input_grad=False)
            opt.step(grads)
    pred = np.argmax(net(z[te]), axis=1)
    conf = np.zeros((n_dom, n_dom), dtype=int)
    np.add.at(conf, (u[te], pred), 1)
    acc = float(np.trace(conf) / conf.sum())
    return ProbeResult(acc, 1.0 / len(labels), conf, len(te))


def probe_model(model, benchmark, seed: int = 0, **kw) -> ProbeResult:
    """Probe the encodings a trained model gives every benchmark row."""
    return alignment_probe(encode(model, benchmark.X, benchmark.u), benchmark.u, seed, **kw)


# --------------------------------------------------------------- evaluation

def evaluate(model, benchmark) -> dict:
    """Per-domain accuracies plus macro averages over target and source domains."""
    from .training import domain_accuracies

    acc = domain_accuracies(model, benchmark.X, benchmark.u, benchmark.y, benchmark.n_domains)
    tgt = list(benchmark.target_domains)
    src = list(benchmark.source_domains)
    return {
        "per_domain": acc.tolist(),
        "target_avg": float(np.mean(acc[tgt])) if tgt else float("nan"),
        "source_avg": float(np.mean(acc[src])) if src else float("nan"),
        "source_domains": src,
        "target_domains": tgt,
    }


def export_encodings(model, benchmark) -> str:
    """CSV (e0, e1, domain_index, label) of every benchmark row's encoding."""
    e = encode(model, benchmark.X, benchmark.u)
    if e.shape[1] != 2:
        raise ValueError(f"encoding width is {e.shape[1]}; export needs width 2")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["e0", "e1", "domain_index", "label"])
    for (e0, e1), d, y in zip(e, benchmark.u, benchmark.y):
        w.writerow([repr(float(e0)), repr(float(e1)), int(d), int(y)])
    return buf.getvalue()


# ------------------------------------------------------------------ oracles

@dataclass
class OracleReport:
    name: str
    computed: float
    reference: float
    tolerance: float
    relation: str = "eq"  # eq: |c - r| <= tol; ge: c >= r - tol; gt: c > r + tol
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        c, r, tol = self.computed, self.reference, self.tolerance
        if self.relation == "eq":
            return abs(c - r) <= tol
        if self.relation == "ge":
            return c >= r - tol
        if self.relation == "gt":
            return c > r + tol
        raise ValueError(f"unknown relation {self.relation!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def reports_json(reports: Sequence[OracleReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, default=float) + "\n"


@dataclass
class DiscreteGameSpec:
    """Per-domain encoding distributions on ``K`` points and pair weights."""

    p: np.ndarray  # (N, K), rows sum to 1
    w: np.ndarray  # (N, N), non-negative

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        n = self.p.shape[0]
        if self.p.ndim != 2 or n < 2:
            raise ValueError("p must be an (N, K) array with N >= 2")
        if np.any(self.p < 0) or np.any(np.abs(self.p.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("each row of p must be a probability vector")
        if self.w.shape != (n, n) or np.any(self.w < 0):
            raise ValueError(f"w must be a non-negative ({n}, {n}) array")

    @property
    def n_domains(self) -> int:
        return self.p.shape[0]


def random_game_spec(rng: np.random.Generator, n_domains=None, support=None,
                     equal_rows: bool = False) -> DiscreteGameSpec:
    n = n_domains or int(rng.integers(2, 6))
    k = support or int(rng.integers(2, 7))
    if equal_rows:
        p = np.tile(rng.dirichlet(np.ones(k)), (n, 1))
    else:
        p = rng.dirichlet(np.ones(k), size=n)
    w = rng.uniform(0.1, 2.0, size=(n, n))
    w = 0.5 * (w + w.T)
    np.fill_diagonal(w, 0.0)
    return DiscreteGameSpec(p, w)


def optimal_discriminators(spec: DiscreteGameSpec) -> np.ndarray:
    """``D*[i, j, k] = p(k|i) / (p(k|i) + p(k|j))``; 1/2 where both vanish."""
    pi = spec.p[:, None, :]
    pj = spec.p[None, :, :]
    tot = pi + pj
    return np.where(tot > 0, pi / np.where(tot > 0, tot, 1.0), 0.5)


def _xlogy(x, y):
    return np.where(x > 0, x * np.log(np.where(x > 0, y, 1.0)), 0.0)


def pair_terms(spec: DiscreteGameSpec, d: np.ndarray) -> np.ndarray:
    """``p(k|i) log D_ij(k) + p(k|j) log(1 - D_ij(k))`` for every (i, j, k)."""
    pi = spec.p[:, None, :]
    pj = spec.p[None, :, :]
    return _xlogy(pi, d) + _xlogy(pj, 1.0 - d)


def game_value(spec: DiscreteGameSpec, d: np.ndarray = None) -> float:
    """Pairwise-discriminator objective with uniform domain prior.

    ``(1 / 2N) sum_{i != j} w_ij sum_k [p(k|i) log D_ij(k) + p(k|j) log(1 - D_ij(k))]``,
    evaluated at ``d`` (default: the optimal discriminators).
    """
    d = optimal_discriminators(spec) if d is None else d
    n = spec.n_domains
    off = ~np.eye(n, dtype=bool)
    per_pair = pair_terms(spec, d).sum(axis=2)
    return float(np.sum(spec.w[off] * per_pair[off]) / (2 * n))


def uniform_alignment_bound(spec: DiscreteGameSpec) -> float:
    """``-(log 2 / N) sum_{i != j} w_ij``."""
    n = spec.n_domains
    off = ~np.eye(n, dtype=bool)
    return -math.log(2.0) / n * float(spec.w[off].sum())


def optimal_discriminator_oracle(spec: DiscreteGameSpec, grid_step: float = 1e-3,
                                 tol: float = 1e-6) -> list:
    """Check the closed-form discriminator against a grid search, and the game value.

    For every (i, j, support point) the pointwise objective at ``D*`` must
    be at least the best value over ``D`` in ``{step, 2 step, ..., 1 - step}``
    minus ``tol``. The game value is compared with the uniform-alignment
    bound: equal when all rows coincide, strictly larger otherwise.
    """
    d_star = optimal_discriminators(spec)
    closed = pair_terms(spec, d_star)
    grid = np.arange(grid_step, 1.0, grid_step)
    grid = grid[grid < 1.0]
    pi = spec.p[:, None, :, None]
    pj = spec.p[None, :, :, None]
    grid_vals = _xlogy(pi, grid) + _xlogy(pj, 1.0 - grid)
    best = grid_vals.max(axis=-1)
    off = ~np.eye(spec.n_domains, dtype=bool)
    shortfall = float(np.max((best - closed)[off]))
    reports = [OracleReport("optimal_discriminator_vs_grid", -shortfall, 0.0, tol, "ge",
                            {"grid_step": grid_step})]

    value = game_value(spec, d_star)
    bound = uniform_alignment_bound(spec)
    equal_rows = bool(np.allclose(spec.p, spec.p[0], atol=0.0, rtol=0.0))
    if equal_rows:
        reports.append(OracleReport("game_value_equals_bound", value, bound, 1e-9, "eq"))
    else:
        reports.append(OracleReport("game_value_exceeds_bound", value, bound, 0.0, "gt"))
    return reports


def random_head(rng: np.random.Generator, in_dim: int = 2, hidden: int = 16,
                scale: float = 1.0) -> Callable:
    """A fixed random taxonomist head ``T(e, e') = scale * ||T'(e) - T'(e')||``."""
    net = Mlp.init([in_dim] + [hidden] * 5 + [2], rng)

    def head(e1, e2):
        diff = net(e1) - net(e2)
        return scale * np.sqrt(np.sum(diff * diff, axis=1))

    return head


def lt_decomposition_check(a, head: Callable = None, n_pairs: int = 100_000, seed: int = 0,
                           encoding_dim: int = 2, sampler: Callable = None) -> list:
    """Monte-Carlo taxonomist loss vs. its variance/bias decomposition when e is independent of u.

    Encodings come from one pooled distribution (``sampler(rng, n)``,
    default standard normal) and domain labels are drawn uniformly and
    independently, so ``e`` carries no domain information. The default head
    is a random network rescaled so its mean output matches the mean
    off-diagonal distance; otherwise the variance term would be negligible
    next to the bias term and the check would have little power. Two independent
    estimates are compared within three combined standard errors:

    * direct: mean over pairs of ``1/2 * [u != u'] * (A_uu' - T(e, e'))**2``;
    * decomposed: ``alpha Var[T] + beta sum_{i != j} (A_ij - E[T])**2``
      with ``alpha = N(N-1)/(2N^2)`` and ``beta = 1/(2N^2)``, from a
      separate sample of head values.

    A second report checks that the best constant head,
    ``beta sum (A_ij - mean A)**2``, is zero exactly when A is flat.
    """
    if n_pairs < 1000:
        raise ValueError("n_pairs must be at least 1000")
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    rng = derive_rng(seed, "lt-decomposition")
    sampler = sampler or (lambda r, m: r.standard_normal((m, encoding_dim)))
    off = ~np.eye(n, dtype=bool)
    if head is None:
        head_rng = derive_rng(seed, "lt-head")
        raw = random_head(head_rng, encoding_dim)
        pilot = raw(sampler(head_rng, 1000), sampler(head_rng, 1000)).mean()
        target = a[off].mean() if n > 1 else 1.0
        head = random_head(derive_rng(seed, "lt-head"), encoding_dim, scale=target / pilot)
    alpha = n * (n - 1) / (2.0 * n * n)
    beta = 1.0 / (2.0 * n * n)

    e1, e2 = sampler(rng, n_pairs), sampler(rng, n_pairs)
    u1, u2 = rng.integers(n, size=n_pairs), rng.integers(n, size=n_pairs)
    t = head(e1, e2)
    direct = 0.5 * (u1 != u2) * (a[u1, u2] - t) ** 2

    f1, f2 = sampler(rng, n_pairs), sampler(rng, n_pairs)
    s = head(f1, f2)
    mean_t = float(s.mean())
    var_t = float(s.var())
    decomposed = alpha * var_t + beta * float(np.sum((a[off] - mean_t) ** 2))
    # the decomposed value is linear in the first two moments of T, i.e. a sample
    # mean of g(T) = beta * sum_{i != j} (A_ij - T)^2, which gives its standard error
    sa, sa2 = a[off].sum(), (a[off] ** 2).sum()
    g = beta * (sa2 - 2.0 * sa * s + off.sum() * s * s)
    se = math.sqrt(direct.var() / n_pairs + g.var() / n_pairs)

    c_star = float(a[off].mean()) if n > 1 else 0.0
    const_min = beta * float(np.sum((a[off] - c_star) ** 2))
    flat = is_non_informative(a)
    return [
        OracleReport("lt_decomposition", float(direct.mean()), decomposed, 3.0 * se, "eq",
                     {"alpha": alpha, "beta": beta, "mean_T": mean_t, "var_T": var_t,
                      "n_pairs": n_pairs}),
        OracleReport("constant_head_minimum", const_min, 0.0, 0.0, "eq" if flat else "gt",
                     {"c_star": c_star, "non_informative": flat}),
    ]


def run_oracle_suite(seed: int = 0, n_specs: int = 100, distances=None,
                     n_pairs: int = 100_000) -> list:
    """All training-free checks; returns a flat list of reports."""
    from .synthgen import make_dt14
    from .taxonomy import distance_matrix, flat_taxonomy

    rng = derive_rng(seed, "oracle-specs")
    reports = []
    for k in range(n_specs):
        spec = random_game_spec(rng)
        for r in optimal_discriminator_oracle(spec):
            r.name = f"{r.name}[{k}]"
            reports.append(r)
    for k in range(10):
        spec = random_game_spec(rng, equal_rows=True)
        for r in optimal_discriminator_oracle(spec):
            r.name = f"equal_rows/{r.name}[{k}]"
            reports.append(r)
    a = make_dt14(seed).distances if distances is None else distances
    reports += lt_decomposition_check(a, n_pairs=n_pairs, seed=seed)
    flat = distance_matrix(flat_taxonomy(a.shape[0]))
    for r in lt_decomposition_check(flat, head=lambda x, y: np.full(len(x), 2.0),
                                    n_pairs=n_pairs, seed=seed):
        r.name = "flat/" + r.name
        reports.append(r)
    return reports


# ------------------------------------------------------------ experiments

def lambda_sweep(benchmark, grid, cfg=None, seeds: Sequence[int] = None,
                 probe: bool = True) -> list:
    """Train one TSDA model per (lambda_d, lambda_t) cell and seed."""
    from .training import TrainConfig, train

    grid = list(grid)
    if not grid:
        raise ValueError("the lambda grid is empty")
    cfg = cfg or TrainConfig()
    seeds = list(seeds) if seeds is not None else [cfg.seed]
    rows = []
    for lam_d, lam_t in grid:
        for s in seeds:
            c = cfg.replace(lambda_d=float(lam_d), lambda_t=float(lam_t), seed=s,
                            warn_on_lambda=False)
            res = train(benchmark, c)
            ev = evaluate(res.model, benchmark)
            row = {"lambda_d": lam_d, "lambda_t": lam_t, "seed": s,
                   "target_acc": ev["target_avg"]}
            if probe:
                row["probe_acc"] = probe_model(res.model, benchmark, s).accuracy
            rows.append(row)
    return rows


def ablate(benchmark, cfg=None) -> dict:
    """Average target accuracy of the full model and with each adversary/cooperator removed."""
    from .training import TrainConfig, train

    cfg = cfg or TrainConfig()
    variants = {
        "full": (cfg, "tsda"),
        "no_discriminator": (cfg.replace(lambda_d=0.0), "tsda"),
        "no_taxonomist": (cfg, "dann"),
    }
    out = {}
    for name, (c, method) in variants.items():
        res = train(benchmark, c, method=method)
        out[name] = evaluate(res.model, benchmark)["target_avg"]
    return out


def rows_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
