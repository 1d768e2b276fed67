"""Synthetic taxonomy-structured benchmarks (DT-14 and DT-40).

A perfect binary tree of 2-D unit vectors is grown bottom-up: random leaf
vectors are sorted by angle, consecutive pairs get a parent vector at their
(renormalized) midpoint, and so on up to the root. The tree is pruned at
random to the target number of leaves; each remaining leaf becomes a domain
whose two classes are Gaussians at +/- a mean that points along the leaf
vector, with length growing with the leaf angle.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from ._rng import derive_rng
from .taxonomy import (
    Taxonomy,
    TaxonomyNode,
    build_taxonomy,
    distance_matrix,
    distance_matrix_from_csv,
    distance_matrix_to_csv,
    flat_taxonomy,
    parse_taxonomy,
    serialize_taxonomy,
)

#: ``mean_scale`` that reads the leaf angle in degrees instead of radians.
DEGREES = 180.0 / math.pi

DEFAULT_MEAN_SCALE = DEGREES


@dataclass
class UnitVectorTree:
    """Binary tree whose nodes carry unit 2-vectors.

    ``leaves`` lists leaf node ids in angle order. Node ids index
    ``vectors``, ``parent`` and ``children``; pruned nodes are dropped and
    the remaining ids are compacted.
    """

    vectors: np.ndarray
    parent: list
    children: list
    leaves: list
    root: int

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def angle(self, node: int) -> float:
        a, b = self.vectors[node]
        return math.atan2(b, a)

    def leaf_angles(self) -> np.ndarray:
        return np.array([self.angle(n) for n in self.leaves])

    def to_taxonomy(self) -> Taxonomy:
        """Taxonomy whose domain ``u`` is the ``u``-th leaf in angle order."""
        domain_of = {leaf: u for u, leaf in enumerate(self.leaves)}
        return build_taxonomy(
            TaxonomyNode(i, self.parent[i], (), domain_of.get(i))
            for i in range(len(self.parent))
        )


def _angle_order(vectors: np.ndarray, ids: list) -> list:
    return sorted(ids, key=lambda i: math.atan2(vectors[i][1], vectors[i][0]))


def generate_unit_vector_tree(depth: int, seed: int, half_plane: bool = True) -> UnitVectorTree:
    """Grow a perfect binary tree with ``2**(depth-1)`` random unit-vector leaves.

    With ``half_plane`` the leaves lie in the upper half plane (b > 0).
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    rng = derive_rng(seed, "unit-vector-tree")
    n_leaves = 2 ** (depth - 1)
    lo, hi = (0.0, math.pi) if half_plane else (-math.pi, math.pi)
    theta = rng.uniform(lo, hi, size=n_leaves)
    if half_plane:
        # b must be strictly positive
        theta = np.where(theta <= 0.0, np.nextafter(0.0, 1.0), theta)
    vecs = [np.array([math.cos(t), math.sin(t)]) for t in theta]
    parent = [None] * n_leaves
    children = [[] for _ in range(n_leaves)]

    arr = np.array(vecs)
    level = _angle_order(arr, list(range(n_leaves)))
    leaves = list(level)
    while len(level) > 1:
        nxt = []
        for k in range(0, len(level), 2):
            left, right = level[k], level[k + 1]
            mid = 0.5 * (vecs[left] + vecs[right])
            norm = np.linalg.norm(mid)
            if norm == 0.0:
                raise ArithmeticError("antipodal sibling vectors; midpoint undefined")
            vecs.append(mid / norm)
            new = len(vecs) - 1
            parent.append(None)
            children.append([left, right])
            parent[left] = parent[right] = new
            nxt.append(new)
        arr = np.array(vecs)
        level = _angle_order(arr, nxt)
    return UnitVectorTree(np.array(vecs), parent, children, leaves, level[0])


def _compact(vectors, parent, children, leaves, alive, root) -> UnitVectorTree:
    # breadth-first renumbering from the root
    order = [root]
    k = 0
    while k < len(order):
        order.extend(children[order[k]])
        k += 1
    order = [n for n in order if alive[n]]
    new_id = {old: i for i, old in enumerate(order)}
    return UnitVectorTree(
        vectors=np.array([vectors[o] for o in order]),
        parent=[None if parent[o] is None else new_id[parent[o]] for o in order],
        children=[[new_id[c] for c in children[o]] for o in order],
        leaves=[new_id[leaf] for leaf in leaves],
        root=0,
    )


def prune_tree(t: UnitVectorTree, target_leaves: int, seed: int) -> UnitVectorTree:
    """Remove uniformly chosen leaves until ``target_leaves`` remain.

    Internal nodes left with a single child are contracted: the child takes
    the parent's place. The returned tree is a new object.
    """
    if not 1 <= target_leaves <= t.n_leaves:
        raise ValueError(
            f"target_leaves must be in 1..{t.n_leaves}, got {target_leaves}"
        )
    rng = derive_rng(seed, "prune")
    parent = list(t.parent)
    children = [list(c) for c in t.children]
    alive = [True] * len(parent)
    leaves = list(t.leaves)
    root = t.root
    while len(leaves) > target_leaves:
        victim = leaves.pop(int(rng.integers(len(leaves))))
        alive[victim] = False
        p = parent[victim]
        if p is None:
            continue
        children[p].remove(victim)
        if len(children[p]) == 1:
            (only,) = children[p]
            gp = parent[p]
            parent[only] = gp
            alive[p] = False
            if gp is None:
                root = only
            else:
                children[gp][children[gp].index(p)] = only
    return _compact(t.vectors, parent, children, leaves, alive, root)


@dataclass
class DomainDataset:
    domain: int
    x: np.ndarray
    y: np.ndarray
    n_per_class: int

    def __len__(self):
        return len(self.y)


def class_mean(leaf_vector, theta: float, mean_scale: float = DEFAULT_MEAN_SCALE) -> np.ndarray:
    """Positive-class mean ``mean_scale * (theta / pi) * leaf_vector``."""
    return mean_scale * (theta / math.pi) * np.asarray(leaf_vector, dtype=float)


def sample_domain_data(
    leaf_vector,
    theta: float,
    u: int,
    n_per_class: int,
    seed: int,
    mean_scale: float = DEFAULT_MEAN_SCALE,
) -> DomainDataset:
    """Draw ``n_per_class`` points from N(mu, I) (label 1) and N(-mu, I) (label 0)."""
    if n_per_class < 0:
        raise ValueError("n_per_class must be non-negative")
    rng = derive_rng(seed, "domain", u)
    mu = class_mean(leaf_vector, theta, mean_scale)
    pos = rng.standard_normal((n_per_class, 2)) + mu
    neg = rng.standard_normal((n_per_class, 2)) - mu
    x = np.concatenate([pos, neg]).reshape(2 * n_per_class, 2)
    y = np.concatenate([np.ones(n_per_class, int), np.zeros(n_per_class, int)])
    return DomainDataset(u, x, y, n_per_class)


def select_source_domains(t: Taxonomy, k: int) -> tuple:
    """Pick ``k`` taxonomically close domains.

    Among subtrees holding at least ``k`` domains, take the smallest; ties go
    to the lexicographically first candidate set. The sources are that
    subtree's first ``k`` domains in leaf order.
    """
    if not 1 <= k < t.n_domains:
        raise ValueError(f"need 1 <= k < {t.n_domains}, got {k}")
    best = None
    for node in t.nodes:
        if node.is_leaf:
            continue
        doms = t.domains_under(node.node_id)
        if len(doms) < k:
            continue
        key = (len(doms), tuple(doms[:k]))
        if best is None or key < best:
            best = key
    return best[1]


@dataclass
class GaussBenchmark:
    name: str
    taxonomy: Taxonomy
    distances: np.ndarray
    domains: list
    source_domains: tuple
    seed: int
    leaf_vectors: np.ndarray
    leaf_angles: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def n_domains(self) -> int:
        return self.taxonomy.n_domains

    @property
    def target_domains(self) -> tuple:
        src = set(self.source_domains)
        return tuple(u for u in range(self.n_domains) if u not in src)

    @property
    def X(self) -> np.ndarray:
        return np.concatenate([d.x for d in self.domains])

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([d.y for d in self.domains])

    @property
    def u(self) -> np.ndarray:
        return np.concatenate([np.full(len(d), d.domain, dtype=int) for d in self.domains])

    @property
    def is_source(self) -> np.ndarray:
        return np.isin(self.u, self.source_domains)

    def training_labels(self) -> np.ndarray:
        """Labels with target rows masked to -1 (the unlabeled marker)."""
        return np.where(self.is_source, self.y, -1)

    def bayes_accuracy(self) -> np.ndarray:
        """Per-domain accuracy of the optimal classifier that knows the domain."""
        from scipy.stats import norm

        means = [
            class_mean(v, th, self.metadata.get("mean_scale", DEFAULT_MEAN_SCALE))
            for v, th in zip(self.leaf_vectors, self.leaf_angles)
        ]
        return np.array([norm.cdf(np.linalg.norm(m)) for m in means])


def make_benchmark(
    name: str,
    depth: int,
    n_leaves: int,
    n_sources: int,
    half_plane: bool,
    seed: int,
    n_per_class: int = 100,
    mean_scale: float = DEFAULT_MEAN_SCALE,
) -> GaussBenchmark:
    tree = prune_tree(generate_unit_vector_tree(depth, seed, half_plane), n_leaves, seed)
    tax = tree.to_taxonomy()
    angles = tree.leaf_angles()
    vectors = np.array([tree.vectors[leaf] for leaf in tree.leaves])
    domains = [
        sample_domain_data(vectors[u], angles[u], u, n_per_class, seed, mean_scale)
        for u in range(tax.n_domains)
    ]
    sources = select_source_domains(tax, n_sources)
    meta = {
        "name": name,
        "seed": seed,
        "depth": depth,
        "prune_target": n_leaves,
        "half_plane": half_plane,
        "n_per_class": n_per_class,
        "mean_scale": mean_scale,
        "source_domains": list(sources),
    }
    return GaussBenchmark(
        name, tax, distance_matrix(tax), domains, sources, seed, vectors, angles, meta
    )


def make_dt14(seed: int = 0, **kw) -> GaussBenchmark:
    return make_benchmark("dt14", 6, 14, 4, True, seed, **kw)


def make_dt40(seed: int = 0, **kw) -> GaussBenchmark:
    return make_benchmark("dt40", 7, 40, 6, False, seed, **kw)


def with_flat_taxonomy(bench: GaussBenchmark) -> GaussBenchmark:
    """Same data rows and sources, taxonomy replaced by the flat tree."""
    tax = flat_taxonomy(bench.n_domains)
    meta = dict(bench.metadata, name=bench.name + "-flat", taxonomy="flat")
    return replace(
        bench, name=bench.name + "-flat", taxonomy=tax, distances=distance_matrix(tax), metadata=meta
    )


def make_flat(seed: int = 0, **kw) -> GaussBenchmark:
    return with_flat_taxonomy(make_dt14(seed, **kw))


# ---------------------------------------------------------------- file I/O

CSV_COLUMNS = ("domain_index", "label", "x0", "x1", "is_source")


def benchmark_csv(bench: GaussBenchmark) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    src = set(bench.source_domains)
    for d in bench.domains:
        flag = int(d.domain in src)
        for (x0, x1), label in zip(d.x, d.y):
            w.writerow((d.domain, int(label), repr(float(x0)), repr(float(x1)), flag))
    return buf.getvalue()


def fingerprint(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_benchmark(bench: GaussBenchmark, out_dir: str) -> dict:
    """Write CSV, taxonomy JSON, distance CSV and metadata JSON; return paths."""
    os.makedirs(out_dir, exist_ok=True)
    data = benchmark_csv(bench)
    meta = dict(bench.metadata)
    meta["fingerprint"] = fingerprint(data)
    meta["leaf_vectors"] = [[repr(float(a)), repr(float(b))] for a, b in bench.leaf_vectors]
    meta["leaf_angles"] = [repr(float(t)) for t in bench.leaf_angles]
    files = {
        "data": ("benchmark.csv", data),
        "taxonomy": ("taxonomy.json", serialize_taxonomy(bench.taxonomy)),
        "distances": ("distances.csv", distance_matrix_to_csv(bench.distances)),
        "metadata": ("metadata.json", json.dumps(meta, indent=2, sort_keys=True) + "\n"),
    }
    paths = {}
    for key, (fname, text) in files.items():
        path = os.path.join(out_dir, fname)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        paths[key] = path
    return paths


def read_benchmark(path: str) -> GaussBenchmark:
    """Load a benchmark directory written by :func:`write_benchmark`."""
    def _read(name):
        with open(os.path.join(path, name), encoding="utf-8") as fh:
            return fh.read()

    data = _read("benchmark.csv")
    tax = parse_taxonomy(_read("taxonomy.json"))
    dist = distance_matrix_from_csv(_read("distances.csv"))
    meta = json.loads(_read("metadata.json"))
    if meta.get("fingerprint") not in (None, fingerprint(data)):
        raise ValueError(f"{path}: benchmark.csv does not match the recorded fingerprint")

    rows = list(csv.DictReader(io.StringIO(data)))
    n = tax.n_domains
    xs = [[] for _ in range(n)]
    ys = [[] for _ in range(n)]
    sources = set()
    for r in rows:
        u = int(r["domain_index"])
        xs[u].append((float(r["x0"]), float(r["x1"])))
        ys[u].append(int(r["label"]))
        if int(r["is_source"]):
            sources.add(u)
    domains = [
        DomainDataset(u, np.array(xs[u], dtype=float).reshape(-1, 2), np.array(ys[u], dtype=int),
                      len(ys[u]) // 2)
        for u in range(n)
    ]
    vectors = np.array([[float(a), float(b)] for a, b in meta.pop("leaf_vectors", [])]).reshape(-1, 2)
    angles = np.array([float(t) for t in meta.pop("leaf_angles", [])])
    meta.pop("fingerprint", None)
    return GaussBenchmark(
        meta.get("name", os.path.basename(path)), tax, dist, domains,
        tuple(sorted(sources)), int(meta.get("seed", 0)), vectors, angles, meta,
    )
