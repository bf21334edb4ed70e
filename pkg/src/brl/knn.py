"""Balanced k-nearest-neighbour classification.

The regression estimate at a query x is the positive fraction among the
k nearest training points, with ties on the k-th distance broken by
ascending (distance, original index) and the neighbour set truncated to
exactly k.  The balanced classifier thresholds that estimate at the
training positive frequency p_hat instead of 1/2, which targets the
arithmetic mean of the two class-conditional error rates.

Two query routes are provided: a brute-force reference and a kd-tree
route.  The tree is only used to propose candidate neighbours; their
distances are recomputed with the same numpy expression the brute route
uses, and any query whose candidate window cannot be certified complete
falls back to the reference scan.  The two routes therefore return
identical results, not merely close ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .measures import DegenerateClassError, LabeledDataset, MCEstimate

_TREE_PAD = 8
# relative guard separating the certified window from the k-th distance;
# generous against the few-ulp disagreement between tree and numpy metrics
_SAFETY_RTOL = 1e-12
_BRUTE_CHUNK = 256


def _dist_block(train: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Euclidean distances, queries x train, via the shared expression."""
    diff = queries[:, None, :] - train[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _dist_gather(train: np.ndarray, queries: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Distances to an index-gathered candidate block, same expression."""
    diff = queries[:, None, :] - train[idx]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def knn_radius(train_features: np.ndarray, x: np.ndarray, k: int) -> float:
    """Distance to the k-th nearest training point (brute force)."""
    train = np.asarray(train_features, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if not 1 <= k <= train.shape[0]:
        raise ValueError(f"k must lie in [1, {train.shape[0]}], got {k}")
    dists = _dist_block(train, x[None, :])[0]
    return float(np.partition(dists, k - 1)[k - 1])


@dataclass
class KnnModel:
    """Fitted balanced k-NN classifier.

    ``p_hat`` is the positive frequency of the training split and is the
    classification threshold.  ``method`` is the resolved query route.
    The instance is read-only after fit_knn builds it.
    """

    train: LabeledDataset
    k: int
    p_hat: float
    method: str
    _tree: Optional[cKDTree] = field(default=None, repr=False)


def fit_knn(train: LabeledDataset, k: int, method: str = "auto") -> KnnModel:
    """Validate inputs and build the query structure.

    Both classes must be present: with a one-class training split the
    threshold p_hat is 0 or 1 and every query degenerates to a constant.
    """
    if not 1 <= k <= train.n:
        raise ValueError(f"k must lie in [1, {train.n}], got {k}")
    n_pos, n_neg = train.class_counts()
    if n_pos == 0 or n_neg == 0:
        raise DegenerateClassError(
            f"k-NN training needs both classes (counts: +1 -> {n_pos}, -1 -> {n_neg})"
        )
    if method == "auto":
        method = "kdtree"
    if method not in ("kdtree", "brute"):
        raise ValueError(f"method must be auto, kdtree or brute, got {method!r}")
    tree = cKDTree(train.features) if method == "kdtree" else None
    return KnnModel(train=train, k=k, p_hat=n_pos / train.n, method=method, _tree=tree)


def _positive_count_single(
    train: np.ndarray, pos_mask: np.ndarray, x: np.ndarray, k: int
) -> tuple[int, float]:
    """Reference selection at one query: k smallest by (distance, index)."""
    dists = _dist_block(train, x[None, :])[0]
    order = np.argsort(dists, kind="stable")[:k]
    return int(np.count_nonzero(pos_mask[order])), float(dists[order[-1]])


def _resolve_ties(
    cand_dists: np.ndarray,
    cand_idx: Optional[np.ndarray],
    pos_mask: np.ndarray,
    k: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Count positives among the k smallest by (distance, original index).

    ``cand_dists`` is (m, c); ``cand_idx`` maps columns to original
    training indices ((m, c) array, or None meaning columns 0..c-1 for
    every row).  Returns (positive counts, k-th distances).
    """
    m = cand_dists.shape[0]
    kth = np.partition(cand_dists, k - 1, axis=1)[:, k - 1]
    below = cand_dists < kth[:, None]
    at = cand_dists == kth[:, None]
    if cand_idx is None:
        pos_cols = pos_mask[None, :]
    else:
        pos_cols = pos_mask[cand_idx]
    counts = np.sum(below & pos_cols, axis=1)
    need = k - np.sum(below, axis=1)
    n_at = np.sum(at, axis=1)
    whole = n_at == need
    counts = counts + np.where(whole, np.sum(at & pos_cols, axis=1), 0)
    for i in np.flatnonzero(~whole):
        cols = np.flatnonzero(at[i])
        orig = cols if cand_idx is None else cand_idx[i, cols]
        order = np.argsort(orig, kind="stable")[: need[i]]
        counts[i] += int(np.count_nonzero(pos_mask[orig[order]]))
    return counts.astype(np.int64), kth


def _query_brute(model: KnnModel, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    train = model.train.features
    pos_mask = np.asarray(model.train.positive_mask)
    counts = np.empty(queries.shape[0], dtype=np.int64)
    radii = np.empty(queries.shape[0])
    for lo in range(0, queries.shape[0], _BRUTE_CHUNK):
        block = queries[lo : lo + _BRUTE_CHUNK]
        dists = _dist_block(train, block)
        c, r = _resolve_ties(dists, None, pos_mask, model.k)
        counts[lo : lo + _BRUTE_CHUNK] = c
        radii[lo : lo + _BRUTE_CHUNK] = r
    return counts, radii


def _query_kdtree(model: KnnModel, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    train = model.train.features
    pos_mask = np.asarray(model.train.positive_mask)
    n, k = model.train.n, model.k
    kq = min(k + _TREE_PAD, n)
    tree_d, tree_i = model._tree.query(queries, k=kq)
    tree_d = np.atleast_2d(tree_d)
    tree_i = np.atleast_2d(tree_i)
    cand_d = _dist_gather(train, queries, tree_i)
    counts, radii = _resolve_ties(cand_d, tree_i, pos_mask, k)
    if kq < n:
        # certify that no point outside the candidate window can reach
        # or tie the k-th distance; otherwise rescan that query exactly
        window = tree_d[:, -1]
        unsafe = window <= radii * (1.0 + _SAFETY_RTOL) + np.finfo(np.float64).tiny
        for i in np.flatnonzero(unsafe):
            counts[i], radii[i] = _positive_count_single(train, pos_mask, queries[i], k)
    return counts, radii


def _query(model: KnnModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    queries = np.atleast_2d(X)
    if queries.shape[1] != model.train.dim:
        raise ValueError(
            f"queries have dimension {queries.shape[1]}, train has {model.train.dim}"
        )
    if model.method == "brute":
        counts, radii = _query_brute(model, queries)
    else:
        counts, radii = _query_kdtree(model, queries)
    return counts, radii, single


def knn_eta(model: KnnModel, X: np.ndarray) -> np.ndarray | float:
    """Positive fraction among the k nearest neighbours, in [0, 1]."""
    counts, _, single = _query(model, X)
    eta = counts / model.k
    return float(eta[0]) if single else eta


def knn_eta_radius(model: KnnModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batch (eta, k-th distance) pairs for the rows of X."""
    counts, radii, single = _query(model, X)
    eta = counts / model.k
    if single:
        return float(eta[0]), float(radii[0])
    return eta, radii


def knn_classify(model: KnnModel, X: np.ndarray) -> np.ndarray | int:
    """Balanced plug-in label: +1 iff the neighbour positive fraction
    reaches the training positive frequency."""
    counts, _, single = _query(model, X)
    labels = np.where(counts / model.k >= model.p_hat, 1, -1).astype(np.int8)
    return int(labels[0]) if single else labels


@dataclass(frozen=True)
class KnnClassifierFn:
    """Picklable classifier callable for a fitted model."""

    model: KnnModel

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return knn_classify(self.model, X)


@dataclass(frozen=True)
class BayesOracle:
    """True regression function eta with the positive-class mass p."""

    eta: Callable[[np.ndarray], np.ndarray]
    p: float

    def __post_init__(self) -> None:
        if not (0.0 < self.p < 1.0):
            raise ValueError(f"p must lie in (0, 1), got {self.p}")


def bayes_balanced_classify(oracle: BayesOracle, X: np.ndarray) -> np.ndarray:
    """Balanced Bayes rule: +1 iff eta(x) >= p."""
    eta = np.asarray(oracle.eta(np.atleast_2d(np.asarray(X, dtype=np.float64))))
    return np.where(eta >= oracle.p, 1, -1).astype(np.int8)


@dataclass(frozen=True)
class BayesClassifierFn:
    """Picklable classifier callable for a Bayes oracle."""

    oracle: BayesOracle

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return bayes_balanced_classify(self.oracle, X)


@dataclass(frozen=True)
class ConstantClassifier:
    """Classifier that outputs one fixed label."""

    label: int

    def __post_init__(self) -> None:
        if self.label not in (-1, 1):
            raise ValueError(f"label must be -1 or +1, got {self.label}")

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(X).shape[0], self.label, dtype=np.int8)


_IDENTITY_CHUNK = 65536


def excess_am_risk_identity(
    oracle: BayesOracle,
    classifier: Callable[[np.ndarray], np.ndarray],
    marginal_sampler: Callable[[int, np.random.Generator], np.ndarray],
    draws: int,
    seed: int = 0,
) -> MCEstimate:
    """Monte Carlo evaluation of the excess-risk identity.

    For any classifier g, the excess of the summed class-conditional
    error rate err_pos(g) + err_neg(g) over that of the balanced Bayes
    rule equals E[ 1{g(X) != g*(X)} |eta(X) - p| ] / (p (1 - p)), the
    expectation running over the feature marginal.  Note the sum
    convention: the quantity is twice the excess of the averaged (AM)
    error rate.  Draws come from fixed-size substreams keyed by
    (seed, chunk), so the estimate is reproducible.
    """
    if draws < 2:
        raise ValueError("draws must be at least 2")
    p = oracle.p
    total = 0.0
    total_sq = 0.0
    n_chunks = (draws + _IDENTITY_CHUNK - 1) // _IDENTITY_CHUNK
    streams = np.random.SeedSequence(seed).spawn(n_chunks)
    for j in range(n_chunks):
        size = min(_IDENTITY_CHUNK, draws - j * _IDENTITY_CHUNK)
        rng = np.random.default_rng(streams[j])
        X = marginal_sampler(size, rng)
        eta = np.asarray(oracle.eta(X), dtype=np.float64)
        disagree = np.asarray(classifier(X)) != bayes_balanced_classify(oracle, X)
        vals = disagree * np.abs(eta - p) / (p * (1.0 - p))
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
    mean = total / draws
    var = max(total_sq / draws - mean * mean, 0.0) * draws / (draws - 1)
    return MCEstimate(mean, float(np.sqrt(var / draws)), draws)
