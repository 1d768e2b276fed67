import itertools
import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsda.taxonomy import (
    CycleError,
    DomainRangeError,
    DuplicateDomainError,
    DuplicateNodeError,
    EmptyTaxonomyError,
    InternalNodeDomainError,
    LeafWithoutDomainError,
    MultipleRootsError,
    SchemaError,
    TaxonomyError,
    TaxonomyNode,
    UnknownParentError,
    build_taxonomy,
    distance_matrix,
    distance_matrix_from_csv,
    distance_matrix_to_csv,
    flat_taxonomy,
    from_parents,
    is_non_informative,
    parse_taxonomy,
    serialize_taxonomy,
)


def abc_tree():
    # root(0) -> {A(1), P(2) -> {B(3), C(4)}}; domains A=0, B=1, C=2
    return from_parents([None, 0, 0, 2, 2], [None, 0, None, 1, 2])


def perfect_binary_depth2():
    return from_parents([None, 0, 0, 1, 1, 2, 2], [None, None, None, 0, 1, 2, 3])


# ------------------------------------------------------------- construction

def test_single_leaf_root():
    t = build_taxonomy([TaxonomyNode(0, None, (), 0)])
    assert t.n_domains == 1
    assert distance_matrix(t).tolist() == [[0]]


def test_three_domain_nesting():
    t = abc_tree()
    assert t.n_domains == 3
    assert t.node(2).children == (3, 4)
    assert t.domains_under(0) == [0, 1, 2]
    assert t.domains_under(2) == [1, 2]
    assert t.depth(3) == 2


def test_children_sets_partition_parent():
    t = perfect_binary_depth2()
    for node in t.nodes:
        if node.is_leaf:
            continue
        parts = [set(t.domains_under(c)) for c in node.children]
        assert set().union(*parts) == set(t.domains_under(node.node_id))
        assert sum(map(len, parts)) == len(t.domains_under(node.node_id))


@pytest.mark.parametrize(
    "nodes, exc, fragment",
    [
        ([], EmptyTaxonomyError, "no nodes"),
        ([TaxonomyNode(0, None, (), 0), TaxonomyNode(1, None, (), 1)], MultipleRootsError, "multiple roots"),
        ([TaxonomyNode(0, None), TaxonomyNode(1, 2, (), 0), TaxonomyNode(2, 1, (), None)], CycleError, "cycle"),
        ([TaxonomyNode(0, None), TaxonomyNode(1, 0, (), None)], LeafWithoutDomainError, "node 1"),
        ([TaxonomyNode(0, None), TaxonomyNode(1, 0, (), 0), TaxonomyNode(2, 0, (), 0)], DuplicateDomainError, "node 2"),
        ([TaxonomyNode(0, None, (), 5), TaxonomyNode(1, 0, (), 0)], InternalNodeDomainError, "node 0"),
        ([TaxonomyNode(0, None), TaxonomyNode(1, 0, (), 0), TaxonomyNode(2, 0, (), 7)], DomainRangeError, "node 2"),
        ([TaxonomyNode(0, None), TaxonomyNode(1, 9, (), 0)], UnknownParentError, "unknown parent 9"),
        ([TaxonomyNode(0, None), TaxonomyNode(0, None)], DuplicateNodeError, "node 0"),
    ],
)
def test_validation_errors(nodes, exc, fragment):
    with pytest.raises(exc, match=fragment):
        build_taxonomy(nodes)


def test_errors_share_a_base_class():
    with pytest.raises(TaxonomyError):
        build_taxonomy([])
    assert issubclass(TaxonomyError, ValueError)


def test_self_parent_is_a_cycle():
    with pytest.raises(CycleError):
        build_taxonomy([TaxonomyNode(0, None), TaxonomyNode(1, 1, (), 0)])


def test_declared_children_must_match():
    with pytest.raises(TaxonomyError, match="disagree"):
        build_taxonomy([TaxonomyNode(0, None, (1, 2)), TaxonomyNode(1, 0, (), 0)])


# ----------------------------------------------------------------- distances

def test_flat_distances():
    a = distance_matrix(flat_taxonomy(4))
    assert a.tolist() == [[0, 2, 2, 2], [2, 0, 2, 2], [2, 2, 0, 2], [2, 2, 2, 0]]


def test_abc_distances():
    a = distance_matrix(abc_tree())
    assert a[1, 2] == 2
    assert a[0, 1] == a[0, 2] == 3


def test_perfect_binary_distances():
    a = distance_matrix(perfect_binary_depth2())
    assert a[0, 1] == a[2, 3] == 2
    assert a[0, 2] == a[0, 3] == a[1, 2] == a[1, 3] == 4


def test_distance_matrix_is_read_only():
    a = distance_matrix(abc_tree())
    with pytest.raises(ValueError):
        a[0, 1] = 5


def test_non_informative_examples():
    assert is_non_informative(distance_matrix(flat_taxonomy(4)))
    assert not is_non_informative(distance_matrix(abc_tree()))
    assert is_non_informative(np.zeros((1, 1), dtype=int))


def test_equidistant_leaves_at_unequal_depths_are_non_informative():
    # root -> {a, p}; p -> {q1 -> b, q2 -> d}: leaf depths 1, 3, 3 but every distance is 4
    t = from_parents([None, 0, 0, 2, 2, 3, 4], [None, 0, None, None, None, 1, 2])
    a = distance_matrix(t)
    assert sorted({t.depth(t.leaf_of(u).node_id) for u in range(3)}) == [1, 3]
    assert is_non_informative(a)


# --------------------------------------------------------------- round trip

def test_round_trip_abc():
    t = abc_tree()
    assert parse_taxonomy(serialize_taxonomy(t)).structure() == t.structure()


def test_unknown_parent_reports_path():
    doc = {"n_domains": 1, "nodes": [{"id": 0, "parent": None, "domain": None},
                                     {"id": 1, "parent": 17, "domain": 0}]}
    with pytest.raises(SchemaError, match=r"\$\.nodes\[1\]\.parent: unknown parent 17"):
        parse_taxonomy(json.dumps(doc))


@pytest.mark.parametrize("text", ["", "   ", '{"nodes": []}'])
def test_empty_document(text):
    with pytest.raises(EmptyTaxonomyError, match="no nodes"):
        parse_taxonomy(text)


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[1, 2]", r"\$: expected an object"),
        ("{", "malformed"),
        ('{"nodes": [{"parent": null}]}', r"\$\.nodes\[0\]\.id: missing"),
        ('{"nodes": [{"id": "x"}]}', r"\$\.nodes\[0\]\.id: expected integer"),
        ('{"nodes": [{"id": 0, "domain": true}]}', r"\$\.nodes\[0\]\.domain"),
        ('{"n_domains": 3, "nodes": [{"id": 0, "domain": 0}]}', r"\$\.n_domains"),
    ],
)
def test_schema_errors(text, fragment):
    with pytest.raises(SchemaError, match=fragment):
        parse_taxonomy(text)


def test_distance_csv_round_trip():
    a = distance_matrix(perfect_binary_depth2())
    text = distance_matrix_to_csv(a)
    assert text.splitlines()[0] == "0,2,4,4"
    assert np.array_equal(distance_matrix_from_csv(text), a)


# ------------------------------------------------------- random-tree properties

@st.composite
def random_trees(draw, max_nodes=24):
    """Trees from random parent pointers (node k hangs below some node < k)."""
    n = draw(st.integers(1, max_nodes))
    parents = [None] + [draw(st.integers(0, k - 1)) for k in range(1, n)]
    has_child = {p for p in parents if p is not None}
    leaves = [k for k in range(n) if k not in has_child]
    order = draw(st.permutations(range(len(leaves))))
    domains = [None] * n
    for leaf, d in zip(leaves, order):
        domains[leaf] = d
    return from_parents(parents, domains)


def bfs_distances(t):
    g = nx.Graph()
    g.add_nodes_from(n.node_id for n in t.nodes)
    g.add_edges_from((n.node_id, n.parent) for n in t.nodes if n.parent is not None)
    leaves = [t.leaf_of(u).node_id for u in range(t.n_domains)]
    lengths = dict(nx.all_pairs_shortest_path_length(g))
    return np.array([[lengths[i][j] for j in leaves] for i in leaves]), g, leaves, lengths


@settings(max_examples=1000, deadline=None)
@given(random_trees())
def test_tree_metric_properties(t):
    a = distance_matrix(t).astype(int)
    n = t.n_domains
    assert np.array_equal(a, a.T)
    assert np.all(np.diag(a) == 0)
    assert np.all(a[~np.eye(n, dtype=bool)] > 0)
    # triangle inequality over all triples
    assert np.all(a[:, None, :] <= a[:, :, None] + a[None, :, :])
    # four-point condition: the largest of the three pair sums is attained twice
    if n >= 4:
        for i, j, k, l in itertools.combinations(range(n), 4):
            s = sorted([a[i, j] + a[k, l], a[i, k] + a[j, l], a[i, l] + a[j, k]])
            assert s[2] == s[1]


@settings(max_examples=300, deadline=None)
@given(random_trees())
def test_distances_match_breadth_first_search(t):
    expected, *_ = bfs_distances(t)
    assert np.array_equal(distance_matrix(t), expected)


@settings(max_examples=300, deadline=None)
@given(random_trees())
def test_round_trip_random(t):
    assert parse_taxonomy(serialize_taxonomy(t)).structure() == t.structure()


@settings(max_examples=300, deadline=None)
@given(random_trees())
def test_non_informative_iff_equidistant_centre(t):
    # for N >= 3 a tree metric is constant exactly when some node is equally far
    # from every leaf and every leaf-to-leaf path passes through it
    a, g, leaves, lengths = bfs_distances(t)
    n = len(leaves)
    if n < 3:
        assert is_non_informative(a)
        return
    centred = False
    for c in g.nodes:
        r = {lengths[c][x] for x in leaves}
        if len(r) == 1 and all(a[i, j] == 2 * lengths[c][leaves[i]]
                               for i in range(n) for j in range(n) if i != j):
            centred = True
            break
    assert is_non_informative(a) == centred


@pytest.mark.parametrize("n", [1, 2, 5, 14])
def test_flat_taxonomy_is_non_informative(n):
    assert is_non_informative(distance_matrix(flat_taxonomy(n)))
