"""Scoring utilities: 1-NN classification, density-peak K-means, AC / NMI,
reconstruction error and principal angles."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist, squareform


@dataclass(frozen=True)
class FeatureSet:
    """Row-major flattened features, one row per sample."""

    vectors: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        V = np.asarray(self.vectors, dtype=np.float64)
        if V.ndim == 1:
            V = V[:, None]
        elif V.ndim > 2:
            V = V.reshape(V.shape[0], -1)
        if not np.all(np.isfinite(V)):
            raise ValueError("features contain non-finite entries")
        object.__setattr__(self, "vectors", V)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (V.shape[0],):
                raise ValueError("labels must have one entry per vector")
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.vectors.shape[0]


@dataclass(frozen=True)
class ClusteringResult:
    assignments: np.ndarray
    centers: np.ndarray
    ac: float | None = None
    nmi: float | None = None
    n_iter: int = 0
    distortion: float = 0.0


def _features(x) -> FeatureSet:
    return x if isinstance(x, FeatureSet) else FeatureSet(x)


# ---------------------------------------------------------------- 1-NN


def knn1_predict(train: FeatureSet, queries) -> np.ndarray:
    """Labels of the Euclidean-nearest training vectors (lowest index wins ties)."""
    train = _features(train)
    if len(train) == 0:
        raise ValueError("empty training set")
    if train.labels is None:
        raise ValueError("training features are unlabeled")
    Q = np.asarray(queries, dtype=float)
    Q = Q.reshape(len(Q), -1)
    if Q.shape[1] != train.vectors.shape[1]:
        raise ValueError(f"query length {Q.shape[1]} != training length {train.vectors.shape[1]}")
    d = cdist(Q, train.vectors, "sqeuclidean")
    return train.labels[np.argmin(d, axis=1)]


def knn1_classify(train: FeatureSet, query):
    q = np.asarray(query, dtype=float).ravel()
    return knn1_predict(train, q[None])[0]


# ---------------------------------------------------------- clustering


def density_peaks_init(features, k: int, percentile: float = 2.0, return_indices: bool = False):
    """Pick ``k`` initial centers with the density-peaks rule.

    ``rho_i = sum_{j != i} exp(-(d_ij / d_c)**2)`` with ``d_c`` the given
    percentile of pairwise distances; ``delta_i`` is the distance to the
    nearest point of higher density (points of equal density are ordered by
    index); the ``k`` largest ``rho * delta`` are returned in decreasing
    order.
    """
    V = _features(features).vectors
    N = len(V)
    if k < 1 or k > N:
        raise ValueError(f"k={k} must be in [1, {N}]")
    if N == 1:
        idx = np.array([0])
        return (V[idx], idx) if return_indices else V[idx]
    D = squareform(pdist(V))
    pair = D[np.triu_indices(N, 1)]
    if np.all(pair == 0):
        warnings.warn("all points coincide; density peaks are degenerate", RuntimeWarning, stacklevel=2)
        idx = np.arange(k)
        return (V[idx], idx) if return_indices else V[idx]
    dc = max(float(np.percentile(pair, percentile)), 1e-12)
    rho = np.exp(-((D / dc) ** 2)).sum(axis=1) - 1.0
    order = np.lexsort((np.arange(N), -rho))  # by density desc, then index
    delta = np.empty(N)
    delta[order[0]] = D[order[0]].max()
    for pos in range(1, N):
        i = order[pos]
        delta[i] = D[i, order[:pos]].min()
    gamma = rho * delta
    idx = np.argsort(-gamma, kind="stable")[:k]
    return (V[idx], idx) if return_indices else V[idx]


def kmeans(features, k: int, init_centers, max_iter: int = 300) -> ClusteringResult:
    """Lloyd iterations from the given centers until the assignment stops changing.

    An emptied cluster takes over the point farthest from its current center.
    AC and NMI are filled in when ``features`` carries labels.
    """
    fs = _features(features)
    V = fs.vectors
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(V) < k:
        raise ValueError(f"{len(V)} samples cannot form {k} clusters")
    C = np.array(init_centers, dtype=float).reshape(k, -1)
    if C.shape[1] != V.shape[1]:
        raise ValueError("initial centers have the wrong dimension")
    assign = None
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d = cdist(V, C, "sqeuclidean")
        new = np.argmin(d, axis=1)
        for c in range(k):
            if not np.any(new == c):
                far = np.argmax(d[np.arange(len(V)), new])
                new[far] = c
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        C = np.array([V[assign == c].mean(axis=0) for c in range(k)])
    distortion = float(np.sum((V - C[assign]) ** 2))
    ac = nm = None
    if fs.labels is not None:
        ac = clustering_accuracy(fs.labels, assign)
        nm = nmi(fs.labels, assign)
    return ClusteringResult(assign, C, ac, nm, n_iter, distortion)


# -------------------------------------------------------------- metrics


def _contingency(truth, predicted):
    truth = np.asarray(truth)
    predicted = np.asarray(predicted)
    if truth.shape != predicted.shape or truth.ndim != 1:
        raise ValueError("label vectors must be 1-D and of equal length")
    if truth.size == 0:
        raise ValueError("empty label vectors")
    _, t = np.unique(truth, return_inverse=True)
    _, p = np.unique(predicted, return_inverse=True)
    table = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def clustering_accuracy(truth, predicted) -> float:
    """Best fraction of agreement over one-to-one cluster-to-label matchings."""
    table = _contingency(truth, predicted)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / table.sum())


def nmi(truth, predicted) -> float:
    """Normalized mutual information, ``I(U;V) / sqrt(H(U) H(V))`` with natural logs."""
    table = _contingency(truth, predicted).astype(float)
    n = table.sum()
    pj = table / n
    # marginals from integer counts, so a single cluster has exactly zero entropy
    pp = table.sum(axis=1) / n
    pt = table.sum(axis=0) / n
    h_p = -np.sum(pp * np.log(pp))
    h_t = -np.sum(pt * np.log(pt))
    if h_p == 0 and h_t == 0:
        return 1.0
    if h_p == 0 or h_t == 0:
        return 0.0
    nz = pj > 0
    mi = np.sum(pj[nz] * np.log(pj[nz] / np.outer(pp, pt)[nz]))
    return float(min(max(mi / np.sqrt(h_p * h_t), 0.0), 1.0))


def reconstruction_error(originals, reconstructions, exclude=()) -> float:
    """Mean squared Frobenius distance over the samples not in ``exclude``."""
    A = np.asarray(getattr(originals, "samples", originals), dtype=float)
    B = np.asarray(getattr(reconstructions, "samples", reconstructions), dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    keep = np.ones(len(A), dtype=bool)
    keep[np.asarray(list(exclude), dtype=int)] = False
    if not keep.any():
        raise ValueError("every sample is excluded")
    diff = (A - B)[keep].reshape(keep.sum(), -1)
    return float(np.mean(np.sum(diff * diff, axis=1)))


def principal_angles(A, B, atol: float = 1e-6) -> np.ndarray:
    """Principal angles (radians, ascending) between the column spans of orthonormal ``A`` and ``B``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    for M in (A, B):
        if np.linalg.norm(M.T @ M - np.eye(M.shape[1])) > atol:
            raise ValueError("inputs must have orthonormal columns")
    s = np.linalg.svd(A.T @ B, compute_uv=False)
    return np.sort(np.arccos(np.clip(s, 0.0, 1.0)))
