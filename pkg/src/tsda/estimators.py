"""scikit-learn style wrappers around the training drivers.

All classifiers take the domain index of every row as a third argument:
``fit(X, y, domains)``, ``predict(X, domains)``. Rows of target domains
are marked unlabelled with ``y = -1``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .model import encode, pretrain_domain_embeddings
from .neuralcore import softmax
from .taxonomy import distance_matrix, flat_taxonomy
from .training import TrainConfig, fit_arrays, predict_logits
from .validation import (
    check_distance_matrix,
    check_domains,
    check_features,
    check_semi_supervised_targets,
)


class TSDAClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Taxonomy-structured adversarial domain adaptation.

    Parameters mirror :class:`~tsda.training.TrainConfig`. ``distances`` is
    the domain distance matrix; when ``None`` a flat taxonomy over the
    domains seen in ``fit`` is used. ``transform`` returns the learned
    encodings.
    """

    _method = "tsda"

    def __init__(self, distances=None, lambda_e=0.5, lambda_d=0.25, lambda_t=2.0, lr_d=1e-4,
                 lr_etf=1e-4, batch_size=64, epochs=500, hidden=64, encoding_dim=2,
                 embedding_dim=8, pretrain_epochs=3000, warn_on_lambda=True, random_state=0):
        self.distances = distances
        self.lambda_e = lambda_e
        self.lambda_d = lambda_d
        self.lambda_t = lambda_t
        self.lr_d = lr_d
        self.lr_etf = lr_etf
        self.batch_size = batch_size
        self.epochs = epochs
        self.hidden = hidden
        self.encoding_dim = encoding_dim
        self.embedding_dim = embedding_dim
        self.pretrain_epochs = pretrain_epochs
        self.warn_on_lambda = warn_on_lambda
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            lambda_e=self.lambda_e, lambda_d=self.lambda_d, lambda_t=self.lambda_t,
            lr_d=self.lr_d, lr_etf=self.lr_etf, batch_size=self.batch_size,
            epochs=self.epochs, seed=int(self.random_state or 0),
            warn_on_lambda=self.warn_on_lambda, hidden=self.hidden,
            encoding_dim=self.encoding_dim, embedding_dim=self.embedding_dim,
            pretrain_epochs=self.pretrain_epochs,
            **self._extra_config(),
        )

    def _extra_config(self) -> dict:
        return {}

    def _fit_kwargs(self) -> dict:
        return {}

    def _resolve_distances(self, u) -> np.ndarray:
        if self.distances is None:
            return distance_matrix(flat_taxonomy(int(u.max()) + 1)).astype(float)
        a = check_distance_matrix(self.distances)
        if u.max() >= a.shape[0]:
            raise ValueError(f"domain index {u.max()} out of range for {a.shape[0]} domains")
        return a

    def fit(self, X, y, domains):
        X = check_features(X)
        u = check_domains(domains, X.shape[0])
        a = self._resolve_distances(u)
        classes, yy = check_semi_supervised_targets(y, X.shape[0])
        res = fit_arrays(X, yy, u, a, self._config(), method=self._method,
                         **self._fit_kwargs())
        self.model_ = res.model
        self.history_ = res.history
        self.classes_ = classes
        self.distances_ = a
        self.n_domains_ = a.shape[0]
        self.n_features_in_ = X.shape[1]
        return self

    def _checked(self, X, domains):
        check_is_fitted(self, "model_")
        X = check_features(X, self.n_features_in_)
        return X, check_domains(domains, X.shape[0], self.n_domains_)

    def decision_function(self, X, domains):
        X, u = self._checked(X, domains)
        return predict_logits(self.model_, X, u)[:, :len(self.classes_)]

    def predict_proba(self, X, domains):
        return softmax(self.decision_function(X, domains))

    def predict(self, X, domains):
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.decision_function(X, domains), axis=1)]

    def transform(self, X, domains):
        X, u = self._checked(X, domains)
        return encode(self.model_, X, u)

    def fit_transform(self, X, y, domains):
        return self.fit(X, y, domains).transform(X, domains)

    def score(self, X, y, domains):
        """Mean accuracy over the given rows."""
        return float(np.mean(self.predict(X, domains) == np.asarray(y)))


class DANNClassifier(TSDAClassifier):
    """Domain-adversarial training without a taxonomist (``lambda_t`` is ignored)."""

    _method = "dann"

    def __init__(self, distances=None, lambda_e=0.5, lambda_d=0.25, lambda_t=0.0, lr_d=1e-4,
                 lr_etf=1e-4, batch_size=64, epochs=500, hidden=64, encoding_dim=2,
                 embedding_dim=8, pretrain_epochs=3000, warn_on_lambda=True, random_state=0):
        super().__init__(distances, lambda_e, lambda_d, lambda_t, lr_d, lr_etf, batch_size,
                         epochs, hidden, encoding_dim, embedding_dim, pretrain_epochs,
                         warn_on_lambda, random_state)


class SourceOnlyClassifier(TSDAClassifier):
    """Supervised training on labelled rows only; all lambdas are ignored."""

    _method = "source-only"


class PairwiseDANNClassifier(TSDAClassifier):
    """One weighted binary discriminator per domain pair.

    ``weights`` is ``"inverse-distance"``, ``"uniform"`` or an explicit
    symmetric non-negative matrix.
    """

    _method = "pairwise-dann"

    def __init__(self, distances=None, weights="inverse-distance", lambda_e=0.5, lambda_d=0.25,
                 lr_d=1e-4, lr_etf=1e-4, batch_size=64, epochs=500, hidden=64, pair_hidden=32,
                 encoding_dim=2, embedding_dim=8, pretrain_epochs=3000, random_state=0):
        super().__init__(distances=distances, lambda_e=lambda_e, lambda_d=lambda_d,
                         lambda_t=0.0, lr_d=lr_d, lr_etf=lr_etf, batch_size=batch_size,
                         epochs=epochs, hidden=hidden, encoding_dim=encoding_dim,
                         embedding_dim=embedding_dim, pretrain_epochs=pretrain_epochs,
                         random_state=random_state)
        self.weights = weights
        self.pair_hidden = pair_hidden

    def _extra_config(self) -> dict:
        return {"pair_hidden": self.pair_hidden}

    def _fit_kwargs(self) -> dict:
        return {"weights": self.weights}


class DomainEmbedder(TransformerMixin, BaseEstimator):
    """Pretrained domain embeddings: ``fit(distances)``, ``transform(domains)``."""

    def __init__(self, embedding_dim=8, epochs=3000, learning_rate=1e-2, random_state=0):
        self.embedding_dim = embedding_dim
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, distances, y=None):
        a = check_distance_matrix(distances)
        emb = pretrain_domain_embeddings(a, self.embedding_dim, self.epochs,
                                         int(self.random_state or 0), lr=self.learning_rate)
        self.embeddings_ = emb.z
        self.loss_ = emb.final_loss
        self.n_domains_ = a.shape[0]
        return self

    def transform(self, domains):
        check_is_fitted(self, "embeddings_")
        d = np.asarray(domains)
        u = check_domains(d, d.shape[0], self.n_domains_)
        return self.embeddings_[u].copy()

    def fit_transform(self, distances, y=None):
        self.fit(distances)
        return self.embeddings_.copy()
