import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tsda.estimators import (
    DANNClassifier,
    DomainEmbedder,
    PairwiseDANNClassifier,
    SourceOnlyClassifier,
    TSDAClassifier,
)
from tsda.model import pretrain_domain_embeddings
from tsda.validation import (
    check_distance_matrix,
    check_domains,
    check_features,
    check_semi_supervised_targets,
)

CHAIN = [[0, 1, 2], [1, 0, 1], [2, 1, 0]]
SMALL = dict(epochs=3, pretrain_epochs=50, hidden=8, batch_size=16)


def data(seed=0):
    rng = np.random.default_rng(seed)
    u = np.repeat([0, 1, 2], 20)
    labels = np.array(["neg", "pos"])[rng.integers(0, 2, 60)]
    X = rng.normal(size=(60, 2)) + (labels == "pos")[:, None]
    y = labels.astype(object)
    y[u != 0] = -1
    return X, y, u, labels


# ---------------------------------------------------------------- validation

@pytest.mark.parametrize("a, fragment", [
    ([[0, 1, 2], [1, 0, 1]], "square"),
    ([[0, -1], [-1, 0]], "negative"),
    ([[1, 1], [1, 0]], "zero diagonal"),
    ([[0, 1], [2, 0]], "symmetric"),
    ([[0, 0], [0, 0]], "zero off-diagonal"),
    ([[0, np.nan], [np.nan, 0]], "NaN"),
])
def test_distance_matrix_checks(a, fragment):
    with pytest.raises(ValueError, match=fragment):
        check_distance_matrix(a)


def test_distance_matrix_accepts_integers():
    a = check_distance_matrix(CHAIN)
    assert a.dtype == np.float64 and a.shape == (3, 3)


@pytest.mark.parametrize("domains, n, n_dom, fragment", [
    ([0, 1], 3, None, "2 entries"),
    ([0.5, 1.0], 2, None, "integers"),
    (["a", "b"], 2, None, "integers"),
    ([0, -1], 2, None, "non-negative"),
    ([0, 3], 2, 3, "out of range"),
])
def test_domain_checks(domains, n, n_dom, fragment):
    with pytest.raises(ValueError, match=fragment):
        check_domains(domains, n, n_dom)


def test_domain_floats_that_are_integers():
    assert check_domains([0.0, 2.0], 2).tolist() == [0, 2]


def test_semi_supervised_targets():
    classes, enc = check_semi_supervised_targets([5, -1, 3, 5], 4)
    assert classes.tolist() == [3, 5] and enc.tolist() == [1, -1, 0, 1]
    with pytest.raises(ValueError, match="no labelled"):
        check_semi_supervised_targets([-1, -1], 2)


def test_feature_checks():
    with pytest.raises(ValueError, match="expected 2"):
        check_features(np.ones((3, 3)), 2)
    with pytest.raises(ValueError):
        check_features([[np.inf, 0.0]])


# ---------------------------------------------------------------- estimators

@pytest.mark.parametrize("cls", [TSDAClassifier, DANNClassifier, SourceOnlyClassifier,
                                 PairwiseDANNClassifier])
def test_fit_predict_shapes_and_labels(cls):
    X, y, u, labels = data()
    est = cls(distances=CHAIN, **SMALL).fit(X, y, u)
    assert est.classes_.tolist() == ["neg", "pos"]
    assert est.n_domains_ == 3 and est.n_features_in_ == 2
    assert set(est.predict(X, u)) <= {"neg", "pos"}
    p = est.predict_proba(X, u)
    assert p.shape == (60, 2) and np.allclose(p.sum(axis=1), 1.0)
    assert est.transform(X, u).shape == (60, 2)
    assert 0.0 <= est.score(X, labels, u) <= 1.0
    assert len(est.history_) == 3


def test_get_params_and_clone():
    est = TSDAClassifier(lambda_t=4.0, epochs=7)
    params = est.get_params()
    assert params["lambda_t"] == 4.0 and params["epochs"] == 7
    c = clone(est)
    assert c.get_params() == params and c is not est
    assert PairwiseDANNClassifier(weights="uniform").get_params()["weights"] == "uniform"


def test_estimator_is_deterministic_and_clone_reproduces():
    X, y, u, _ = data()
    a = TSDAClassifier(distances=CHAIN, **SMALL).fit(X, y, u)
    b = clone(a).fit(X, y, u)
    assert np.array_equal(a.transform(X, u), b.transform(X, u))
    c = TSDAClassifier(distances=CHAIN, random_state=1, **SMALL).fit(X, y, u)
    assert not np.array_equal(a.transform(X, u), c.transform(X, u))


def test_flat_default_taxonomy():
    X, y, u, _ = data()
    est = TSDAClassifier(**SMALL).fit(X, y, u)
    assert est.distances_.tolist() == [[0, 2, 2], [2, 0, 2], [2, 2, 0]]


def test_fit_transform_matches_transform():
    X, y, u, _ = data()
    est = TSDAClassifier(distances=CHAIN, **SMALL)
    assert np.array_equal(est.fit_transform(X, y, u), est.transform(X, u))


def test_predict_errors():
    X, y, u, _ = data()
    with pytest.raises(NotFittedError):
        TSDAClassifier().predict(X, u)
    est = TSDAClassifier(distances=CHAIN, **SMALL).fit(X, y, u)
    with pytest.raises(ValueError, match="out of range"):
        est.predict(X[:2], [0, 3])
    with pytest.raises(ValueError, match="features"):
        est.predict(np.ones((2, 3)), [0, 1])
    with pytest.raises(ValueError, match="out of range"):
        TSDAClassifier(distances=[[0, 1], [1, 0]], **SMALL).fit(X, y, u)


# ------------------------------------------------------------------ embedder

def test_domain_embedder():
    emb = DomainEmbedder(epochs=200).fit(CHAIN)
    direct = pretrain_domain_embeddings(np.array(CHAIN, float), 8, 200, 0)
    assert np.array_equal(emb.embeddings_, direct.z)
    assert emb.loss_ == direct.final_loss
    out = emb.transform([2, 0, 2])
    assert out.shape == (3, 8) and np.array_equal(out[0], out[2])
    assert np.array_equal(DomainEmbedder(epochs=200).fit_transform(CHAIN), direct.z)
    with pytest.raises(ValueError):
        emb.transform([3])
