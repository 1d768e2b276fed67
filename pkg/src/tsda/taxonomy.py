"""Domain taxonomies as rooted trees and the leaf-to-leaf distance matrix.

A taxonomy's leaves are the domains ``0..N-1``; internal nodes group
domains into nested sets. The distance between two domains is the number
of edges on the tree path between their leaves.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


class TaxonomyError(ValueError):
    """Base class for invalid taxonomy structures or documents."""


class EmptyTaxonomyError(TaxonomyError):
    pass


class UnknownParentError(TaxonomyError):
    pass


class DuplicateNodeError(TaxonomyError):
    pass


class MultipleRootsError(TaxonomyError):
    pass


class CycleError(TaxonomyError):
    pass


class LeafWithoutDomainError(TaxonomyError):
    pass


class InternalNodeDomainError(TaxonomyError):
    pass


class DuplicateDomainError(TaxonomyError):
    pass


class DomainRangeError(TaxonomyError):
    pass


class SchemaError(TaxonomyError):
    """A taxonomy document does not match the expected JSON layout."""


@dataclass(frozen=True)
class TaxonomyNode:
    node_id: int
    parent: Optional[int] = None
    children: tuple = ()
    domain: Optional[int] = None

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class Taxonomy:
    """A validated taxonomy. Build it with :func:`build_taxonomy`."""

    nodes: tuple
    n_domains: int
    _index: dict = field(default=None, repr=False, compare=False)

    def node(self, node_id: int) -> TaxonomyNode:
        return self._index[node_id]

    @property
    def root(self) -> TaxonomyNode:
        return next(n for n in self.nodes if n.parent is None)

    def leaf_of(self, domain: int) -> TaxonomyNode:
        for n in self.nodes:
            if n.domain == domain:
                return n
        raise DomainRangeError(f"no leaf carries domain {domain}")

    def depth(self, node_id: int) -> int:
        d = 0
        node = self._index[node_id]
        while node.parent is not None:
            node = self._index[node.parent]
            d += 1
        return d

    def ancestors(self, node_id: int) -> list:
        """Node ids from ``node_id`` up to and including the root."""
        path = [node_id]
        node = self._index[node_id]
        while node.parent is not None:
            path.append(node.parent)
            node = self._index[node.parent]
        return path

    def domains_under(self, node_id: int) -> list:
        """Sorted domain indices of the leaves below ``node_id``."""
        out = []
        stack = [node_id]
        while stack:
            node = self._index[stack.pop()]
            if node.is_leaf:
                out.append(node.domain)
            else:
                stack.extend(node.children)
        return sorted(out)

    def structure(self) -> tuple:
        """Canonical form used for structural equality."""
        return tuple(
            sorted((n.node_id, n.parent, tuple(sorted(n.children)), n.domain) for n in self.nodes)
        )


def build_taxonomy(nodes: Iterable[TaxonomyNode]) -> Taxonomy:
    """Validate ``nodes`` and assemble a :class:`Taxonomy`.

    Children are derived from parent references; any ``children`` given on
    the input nodes must agree with them. Raises a :class:`TaxonomyError`
    subclass naming the offending node on the first violated invariant.
    """
    nodes = list(nodes)
    if not nodes:
        raise EmptyTaxonomyError("no nodes")

    by_id = {}
    for n in nodes:
        if n.node_id in by_id:
            raise DuplicateNodeError(f"node {n.node_id}: duplicate node id")
        by_id[n.node_id] = n

    children = {nid: [] for nid in by_id}
    for n in nodes:
        if n.parent is not None:
            if n.parent not in by_id:
                raise UnknownParentError(f"node {n.node_id}: unknown parent {n.parent}")
            if n.parent == n.node_id:
                raise CycleError(f"node {n.node_id}: cycle detected (node is its own parent)")
            children[n.parent].append(n.node_id)
    for n in nodes:
        if n.children and sorted(n.children) != sorted(children[n.node_id]):
            raise TaxonomyError(
                f"node {n.node_id}: declared children {sorted(n.children)} disagree "
                f"with parent references {sorted(children[n.node_id])}"
            )

    roots = [n.node_id for n in nodes if n.parent is None]
    if len(roots) > 1:
        raise MultipleRootsError(f"multiple roots: nodes {roots}")

    # every node must reach the root by following parents
    reaches_root = {}
    for n in nodes:
        seen = []
        cur = n.node_id
        while cur is not None and cur not in reaches_root:
            if cur in seen:
                raise CycleError(f"node {cur}: cycle detected")
            seen.append(cur)
            cur = by_id[cur].parent
        for s in seen:
            reaches_root[s] = True
    if not roots:
        raise CycleError(f"node {nodes[0].node_id}: cycle detected (no root)")

    seen_domains = {}
    for n in nodes:
        kids = children[n.node_id]
        if kids and n.domain is not None:
            raise InternalNodeDomainError(
                f"node {n.node_id}: non-leaf node carries domain index {n.domain}"
            )
        if not kids:
            if n.domain is None:
                raise LeafWithoutDomainError(f"node {n.node_id}: leaf without domain index")
            if n.domain in seen_domains:
                raise DuplicateDomainError(
                    f"node {n.node_id}: duplicate domain index {n.domain} "
                    f"(also on node {seen_domains[n.domain]})"
                )
            seen_domains[n.domain] = n.node_id

    n_domains = len(seen_domains)
    for d, nid in seen_domains.items():
        if not 0 <= d < n_domains:
            raise DomainRangeError(
                f"node {nid}: domain index {d} outside 0..{n_domains - 1}"
            )

    final = tuple(
        TaxonomyNode(n.node_id, n.parent, tuple(sorted(children[n.node_id])), n.domain)
        for n in sorted(nodes, key=lambda n: n.node_id)
    )
    return Taxonomy(final, n_domains, {n.node_id: n for n in final})


def from_parents(parents: Sequence[Optional[int]], domains: Sequence[Optional[int]]) -> Taxonomy:
    """Build a taxonomy from parallel ``parents``/``domains`` lists indexed by node id."""
    return build_taxonomy(
        TaxonomyNode(i, p, (), d) for i, (p, d) in enumerate(zip(parents, domains))
    )


def flat_taxonomy(n_domains: int) -> Taxonomy:
    """Root with ``n_domains`` leaf children; the non-informative taxonomy."""
    if n_domains < 1:
        raise ValueError("n_domains must be positive")
    if n_domains == 1:
        return build_taxonomy([TaxonomyNode(0, None, (), 0)])
    nodes = [TaxonomyNode(0, None, (), None)]
    nodes += [TaxonomyNode(u + 1, 0, (), u) for u in range(n_domains)]
    return build_taxonomy(nodes)


def distance_matrix(t: Taxonomy) -> np.ndarray:
    """Edge-count distances between domain leaves, as a read-only int array.

    Uses ``depth(i) + depth(j) - 2 * depth(lca(i, j))``.
    """
    n = t.n_domains
    leaves = [t.leaf_of(u).node_id for u in range(n)]
    paths = [t.ancestors(leaf) for leaf in leaves]
    depths = [len(p) - 1 for p in paths]
    a = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        anc_i = {node: len(paths[i]) - 1 - k for k, node in enumerate(paths[i])}
        for j in range(i + 1, n):
            lca_depth = next(
                anc_i[node] for node in paths[j] if node in anc_i
            )
            a[i, j] = a[j, i] = depths[i] + depths[j] - 2 * lca_depth
    a.setflags(write=False)
    return a


def is_non_informative(a) -> bool:
    """True iff all off-diagonal distances share one positive value.

    A single domain has no off-diagonal entries and counts as non-informative.
    """
    a = np.asarray(a)
    n = a.shape[0]
    if n <= 1:
        return True
    off = a[~np.eye(n, dtype=bool)]
    return bool(off[0] > 0 and np.all(off == off[0]))


def serialize_taxonomy(t: Taxonomy) -> str:
    doc = {
        "n_domains": t.n_domains,
        "nodes": [
            {"id": n.node_id, "parent": n.parent, "domain": n.domain} for n in t.nodes
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def _require_int(value, path, nullable):
    if value is None and nullable:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        kind = "integer or null" if nullable else "integer"
        raise SchemaError(f"{path}: expected {kind}, got {value!r}")
    return value


def parse_taxonomy(text: str) -> Taxonomy:
    """Parse a taxonomy JSON document; errors carry the JSON path."""
    if not text.strip():
        raise EmptyTaxonomyError("no nodes")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed document: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("$: expected an object")
    if "nodes" not in doc:
        raise SchemaError("$.nodes: missing")
    raw_nodes = doc["nodes"]
    if not isinstance(raw_nodes, list):
        raise SchemaError("$.nodes: expected a list")
    if not raw_nodes:
        raise EmptyTaxonomyError("no nodes")
    nodes = []
    for k, item in enumerate(raw_nodes):
        path = f"$.nodes[{k}]"
        if not isinstance(item, dict):
            raise SchemaError(f"{path}: expected an object")
        if "id" not in item:
            raise SchemaError(f"{path}.id: missing")
        nid = _require_int(item["id"], f"{path}.id", nullable=False)
        parent = _require_int(item.get("parent"), f"{path}.parent", nullable=True)
        domain = _require_int(item.get("domain"), f"{path}.domain", nullable=True)
        nodes.append(TaxonomyNode(nid, parent, (), domain))
    ids = {n.node_id for n in nodes}
    for k, n in enumerate(nodes):
        if n.parent is not None and n.parent not in ids:
            raise SchemaError(f"$.nodes[{k}].parent: unknown parent {n.parent}")
    t = build_taxonomy(nodes)
    if "n_domains" in doc:
        declared = _require_int(doc["n_domains"], "$.n_domains", nullable=False)
        if declared != t.n_domains:
            raise SchemaError(
                f"$.n_domains: declared {declared} but the tree has {t.n_domains} leaves"
            )
    return t


def distance_matrix_to_csv(a) -> str:
    buf = io.StringIO()
    np.savetxt(buf, np.asarray(a, dtype=np.int64), fmt="%d", delimiter=",")
    return buf.getvalue()


def distance_matrix_from_csv(text: str) -> np.ndarray:
    a = np.loadtxt(io.StringIO(text), delimiter=",", dtype=np.int64, ndmin=2)
    a.setflags(write=False)
    return a
