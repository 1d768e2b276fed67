import math
import os

import numpy as np
import pytest
from scipy.stats import norm

from tsda.synthgen import (
    DEGREES,
    benchmark_csv,
    class_mean,
    generate_unit_vector_tree,
    make_benchmark,
    make_dt14,
    make_dt40,
    make_flat,
    prune_tree,
    read_benchmark,
    sample_domain_data,
    select_source_domains,
    write_benchmark,
)
from tsda.taxonomy import distance_matrix, from_parents, is_non_informative


def all_unit(tree):
    norms = np.linalg.norm(tree.vectors, axis=1)
    return np.max(np.abs(norms - 1.0))


@pytest.mark.parametrize("depth, leaves", [(1, 1), (2, 2), (6, 32), (7, 64)])
def test_unit_vector_tree_sizes(depth, leaves):
    t = generate_unit_vector_tree(depth, seed=3)
    assert t.n_leaves == leaves
    assert len(t.vectors) == 2 * leaves - 1
    assert all_unit(t) <= 1e-12


def test_depth_must_be_positive():
    with pytest.raises(ValueError):
        generate_unit_vector_tree(0, seed=0)


def test_leaf_angles_sorted_and_half_plane():
    t = generate_unit_vector_tree(6, seed=11, half_plane=True)
    ang = t.leaf_angles()
    assert np.all(np.diff(ang) >= 0)
    assert np.all(t.vectors[t.leaves][:, 1] > 0)
    full = generate_unit_vector_tree(7, seed=11, half_plane=False)
    assert np.any(full.vectors[full.leaves][:, 1] < 0)


def test_parent_is_renormalized_midpoint():
    t = generate_unit_vector_tree(5, seed=2)
    for node, kids in enumerate(t.children):
        if kids:
            mid = t.vectors[kids[0]] + t.vectors[kids[1]]
            assert np.allclose(t.vectors[node], mid / np.linalg.norm(mid), atol=1e-15)


@pytest.mark.parametrize("depth, target", [(6, 14), (7, 40), (4, 1), (3, 4)])
def test_prune_counts(depth, target):
    t = prune_tree(generate_unit_vector_tree(depth, seed=5), target, seed=5)
    assert t.n_leaves == target
    assert all_unit(t) <= 1e-12
    tax = t.to_taxonomy()
    assert tax.n_domains == target
    # no single-child internal nodes survive contraction
    assert all(len(k) in (0, 2) for k in t.children)
    assert np.all(np.diff(t.leaf_angles()) >= 0)


def test_prune_to_current_size_is_a_no_op():
    t = generate_unit_vector_tree(4, seed=1)
    p = prune_tree(t, t.n_leaves, seed=9)
    assert np.array_equal(p.vectors[p.leaves], t.vectors[t.leaves])
    assert np.array_equal(p.vectors[p.root], t.vectors[t.root])
    assert np.array_equal(distance_matrix(p.to_taxonomy()), distance_matrix(t.to_taxonomy()))


@pytest.mark.parametrize("target", [0, 9])
def test_prune_target_out_of_range(target):
    with pytest.raises(ValueError):
        prune_tree(generate_unit_vector_tree(4, seed=1), target, seed=0)


def test_sample_counts():
    v = np.array([0.6, 0.8])
    d = sample_domain_data(v, math.atan2(0.8, 0.6), 3, 100, seed=0)
    assert len(d) == 200 and d.x.shape == (200, 2)
    assert np.sum(d.y == 1) == np.sum(d.y == 0) == 100
    assert np.all(np.isfinite(d.x))
    empty = sample_domain_data(v, 1.0, 3, 0, seed=0)
    assert len(empty) == 0 and empty.x.shape == (0, 2)


@pytest.mark.parametrize("scale", [1.0, DEGREES])
def test_class_means_and_covariance_by_sampling(scale):
    v = np.array([math.cos(1.1), math.sin(1.1)])
    d = sample_domain_data(v, 1.1, 0, 100_000, seed=4, mean_scale=scale)
    mu = scale * (1.1 / math.pi) * v
    pos, neg = d.x[d.y == 1], d.x[d.y == 0]
    assert np.max(np.abs(pos.mean(axis=0) - mu)) < 0.02
    assert np.max(np.abs(neg.mean(axis=0) + mu)) < 0.02
    for part in (pos, neg):
        assert np.max(np.abs(np.cov(part.T) - np.eye(2))) < 0.05


def test_class_mean_formula():
    assert np.allclose(class_mean([0.0, 1.0], math.pi / 2, 1.0), [0.0, 0.5])
    assert np.allclose(class_mean([0.0, 1.0], math.pi / 2, DEGREES), [0.0, 90.0 / math.pi])


def test_domain_streams_are_independent_of_order():
    v = np.array([1.0, 0.0])
    a = sample_domain_data(v, 0.3, 7, 20, seed=1)
    sample_domain_data(v, 0.3, 2, 20, seed=1)
    b = sample_domain_data(v, 0.3, 7, 20, seed=1)
    assert np.array_equal(a.x, b.x)


def test_dt14_shape():
    b = make_dt14(0)
    assert b.n_domains == 14
    assert len(b.X) == 2800
    assert len(b.source_domains) == 4
    assert 0 < len(b.source_domains) < b.n_domains
    assert not is_non_informative(b.distances)


def test_dt40_shape():
    b = make_dt40(0)
    assert b.n_domains == 40
    assert len(b.X) == 8000
    assert len(b.source_domains) == 6
    assert not is_non_informative(b.distances)


@pytest.mark.parametrize("maker", [make_dt14, make_dt40, make_flat])
def test_generators_are_deterministic(maker):
    a, b = maker(12), maker(12)
    assert benchmark_csv(a) == benchmark_csv(b)
    assert np.array_equal(a.distances, b.distances)
    assert a.source_domains == b.source_domains
    assert benchmark_csv(maker(13)) != benchmark_csv(a)


def test_flat_clone_keeps_rows():
    b, f = make_dt14(7), make_flat(7)
    assert np.array_equal(b.X, f.X) and np.array_equal(b.y, f.y)
    assert f.source_domains == b.source_domains
    off = f.distances[~np.eye(14, dtype=bool)]
    assert np.all(off == 2)


def test_training_labels_mask_targets():
    b = make_dt14(0)
    yl = b.training_labels()
    assert np.all(yl[~b.is_source] == -1)
    assert np.array_equal(yl[b.is_source], b.y[b.is_source])


def test_bayes_accuracy():
    b = make_benchmark("lit", 6, 14, 4, True, seed=0, mean_scale=1.0)
    expected = norm.cdf(b.leaf_angles / math.pi)
    assert np.allclose(b.bayes_accuracy(), expected)
    assert np.all(b.bayes_accuracy() <= norm.cdf(1.0))


def test_source_selection_picks_smallest_subtree():
    # root -> {P -> {0, 1, 2}, Q -> {3, R -> {4, 5}}}
    t = from_parents([None, 0, 0, 1, 1, 1, 2, 2, 7, 7],
                     [None, None, None, 0, 1, 2, 3, None, 4, 5])
    assert select_source_domains(t, 2) == (4, 5)
    assert select_source_domains(t, 3) == (0, 1, 2)
    assert select_source_domains(t, 5) == (0, 1, 2, 3, 4)
    with pytest.raises(ValueError):
        select_source_domains(t, 6)


def test_sources_are_taxonomically_close():
    b = make_dt14(0)
    src = list(b.source_domains)
    within = b.distances[np.ix_(src, src)].max()
    assert within < b.distances.max()


def test_write_read_round_trip(tmp_path):
    b = make_dt14(3)
    paths = write_benchmark(b, str(tmp_path))
    assert sorted(os.path.basename(p) for p in paths.values()) == [
        "benchmark.csv", "distances.csv", "metadata.json", "taxonomy.json"]
    header = open(paths["data"]).readline().strip()
    assert header == "domain_index,label,x0,x1,is_source"
    r = read_benchmark(str(tmp_path))
    assert np.array_equal(r.X, b.X) and np.array_equal(r.y, b.y) and np.array_equal(r.u, b.u)
    assert np.array_equal(r.distances, b.distances)
    assert r.source_domains == b.source_domains
    assert np.array_equal(r.leaf_vectors, b.leaf_vectors)
    assert r.taxonomy.structure() == b.taxonomy.structure()
    assert benchmark_csv(r) == benchmark_csv(b)


def test_read_rejects_tampered_data(tmp_path):
    write_benchmark(make_dt14(3), str(tmp_path))
    p = tmp_path / "benchmark.csv"
    p.write_text(p.read_text().replace("\n1,", "\n0,", 1))
    with pytest.raises(ValueError, match="fingerprint"):
        read_benchmark(str(tmp_path))


def test_taxonomy_of_pruned_tree_matches_distances():
    b = make_dt14(5)
    assert np.array_equal(b.distances, distance_matrix(b.taxonomy))
