"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, column_or_1d


def check_distance_matrix(a, name: str = "distances") -> np.ndarray:
    """Square, finite, symmetric, non-negative, zero diagonal; returned as float."""
    a = check_array(a, dtype=np.float64, ensure_min_samples=1, ensure_min_features=1,
                    input_name=name)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got {a.shape}")
    if np.any(a < 0):
        raise ValueError(f"{name} has negative entries")
    if np.any(np.diag(a) != 0):
        raise ValueError(f"{name} must have a zero diagonal")
    if not np.array_equal(a, a.T):
        raise ValueError(f"{name} must be symmetric")
    n = a.shape[0]
    if n > 1 and np.any(a[~np.eye(n, dtype=bool)] == 0):
        raise ValueError(f"{name} has zero off-diagonal entries (two domains at distance 0)")
    return a


def check_domains(domains, n_samples: int, n_domains: int = None) -> np.ndarray:
    """Integer domain indices of length ``n_samples`` inside ``[0, n_domains)``."""
    u = column_or_1d(np.asarray(domains), warn=False)
    if len(u) != n_samples:
        raise ValueError(f"domains has {len(u)} entries for {n_samples} samples")
    if u.dtype.kind == "f":
        if not np.all(np.isfinite(u)) or np.any(u != np.round(u)):
            raise ValueError("domain indices must be integers")
    elif u.dtype.kind not in "iu":
        raise ValueError(f"domain indices must be integers, got dtype {u.dtype}")
    u = u.astype(int)
    if n_samples and u.min() < 0:
        raise ValueError("domain indices must be non-negative")
    if n_domains is not None and n_samples and u.max() >= n_domains:
        raise ValueError(f"domain index {u.max()} out of range for {n_domains} domains")
    return u


def check_semi_supervised_targets(y, n_samples: int):
    """Split labels into ``(classes, encoded)``; ``-1`` marks unlabelled rows.

    ``encoded`` holds class positions in ``classes`` and ``-1`` where the row
    is unlabelled.
    """
    y = column_or_1d(np.asarray(y), warn=False)
    if len(y) != n_samples:
        raise ValueError(f"y has {len(y)} entries for {n_samples} samples")
    unlabelled = y == -1
    if unlabelled.all():
        raise ValueError("y has no labelled rows (all entries are -1)")
    classes = np.unique(y[~unlabelled])
    encoded = np.full(n_samples, -1, dtype=int)
    encoded[~unlabelled] = np.searchsorted(classes, y[~unlabelled])
    return classes, encoded


def check_features(X, n_features: int = None) -> np.ndarray:
    X = check_array(X, dtype=np.float64)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_features}")
    return X
