"""Class-weighted and balanced empirical measures for labeled samples.

For a sample (x_i, y_i), y_i in {-1, +1}, the empirical measure applied
to a function f of (x, y) is P_n(f) = (1/n) sum_i f(x_i, y_i).  The
class-weighted measure reweights the two label slices,

    P_{n,q}(f) = ( P_n(f 1{y=+1}) / q  +  P_n(f 1{y=-1}) / (1-q) ) / 2,

and the balanced measure takes q equal to the empirical positive-class
frequency p_hat, in which case P_{n,q}(f) is the average of the two
within-class means.  Risks are these measures applied to a margin loss
of a score, and the arithmetic-mean (AM) zero-one risk is the average of
the two class-conditional error rates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .scoring import LinearScore, LossSpec


class EmptyDatasetError(ValueError):
    """Raised when an operation needs at least one sample."""


class DegenerateClassError(ValueError):
    """Raised when an operation needs both classes to be present."""


@dataclass
class LabeledDataset:
    """Feature matrix with labels in {-1, +1}.

    ``features`` is coerced to a float64 array of shape (n, d) and
    ``labels`` to an int8 array of shape (n,).  Rows are validated to be
    finite and labels to lie in {-1, +1}.  Instances are treated as
    read-only after construction.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {features.shape}")
        if labels.ndim != 1:
            raise ValueError(f"labels must be 1-D, got shape {labels.shape}")
        if features.shape[0] != labels.shape[0]:
            raise ValueError(
                f"length mismatch: {features.shape[0]} feature rows, "
                f"{labels.shape[0]} labels"
            )
        if not np.all(np.isfinite(features)):
            raise ValueError("features must be finite")
        if labels.size and not np.all(np.isin(labels, (-1, 1))):
            raise ValueError("labels must take values in {-1, +1}")
        self.features = features
        self.labels = labels.astype(np.int8)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def positive_mask(self) -> np.ndarray:
        return self.labels == 1

    def class_counts(self) -> tuple[int, int]:
        """Return (n_positive, n_negative)."""
        n_pos = int(np.count_nonzero(self.labels == 1))
        return n_pos, self.n - n_pos


class MCEstimate(NamedTuple):
    """Monte Carlo estimate with its standard error."""

    value: float
    stderr: float
    draws: int


# f maps (features, labels) to one real per row
MeasurableFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

# draws `size` feature rows conditional on `label`, using the supplied rng
ClassSampler = Callable[[int, int, np.random.Generator], np.ndarray]


def estimate_class_prob(data: LabeledDataset) -> float:
    """Empirical positive-class frequency p_hat; 0.0 on an empty sample."""
    if data.n == 0:
        return 0.0
    return int(np.count_nonzero(data.labels == 1)) / data.n


def _eval_rows(data: LabeledDataset, f: MeasurableFn) -> np.ndarray:
    vals = np.asarray(f(data.features, data.labels), dtype=np.float64)
    if vals.shape != (data.n,):
        raise ValueError(
            f"f must return one value per row, got shape {vals.shape} "
            f"for n={data.n}"
        )
    return vals


def empirical_mean(data: LabeledDataset, f: MeasurableFn) -> float:
    """Plain empirical mean P_n(f)."""
    if data.n == 0:
        raise EmptyDatasetError("empirical_mean needs at least one sample")
    return float(_eval_rows(data, f).mean())


def _resolve_q(data: LabeledDataset, q: Optional[float]) -> tuple[float, bool]:
    """Return (q, balanced_flag); balanced means q == p_hat by construction."""
    if q is None:
        return estimate_class_prob(data), True
    q = float(q)
    if not (0.0 < q < 1.0):
        raise ValueError(f"q must lie in (0, 1), got {q}")
    return q, False


def weighted_empirical(
    data: LabeledDataset, f: MeasurableFn, q: Optional[float] = None
) -> float:
    """Class-weighted empirical mean P_{n,q}(f).

    With ``q=None`` the balanced convention applies: q is the empirical
    positive frequency and an empty class contributes 0 to its term, so
    the result is the average of the available within-class means.  An
    explicit q must lie strictly in (0, 1).
    """
    if data.n == 0:
        raise EmptyDatasetError("weighted_empirical needs at least one sample")
    vals = _eval_rows(data, f)
    q, balanced = _resolve_q(data, q)
    pos = data.positive_mask
    slice_pos = float(vals[pos].sum()) / data.n
    slice_neg = float(vals[~pos].sum()) / data.n
    if balanced:
        term_pos = slice_pos / q if q > 0.0 else 0.0
        term_neg = slice_neg / (1.0 - q) if q < 1.0 else 0.0
    else:
        term_pos = slice_pos / q
        term_neg = slice_neg / (1.0 - q)
    return 0.5 * (term_pos + term_neg)


def balanced_empirical_risk(
    data: LabeledDataset,
    score: LinearScore,
    loss: LossSpec,
    q: Optional[float] = None,
) -> float:
    """Weighted empirical risk P_{n,q}(phi(y * beta.x)).

    In balanced mode (``q=None``) both classes must be present: with an
    empty class the balanced risk degenerates to half the remaining
    class-conditional risk and is not comparable across samples.
    """
    if data.n == 0:
        raise EmptyDatasetError("balanced_empirical_risk needs samples")
    if q is None:
        n_pos, n_neg = data.class_counts()
        if n_pos == 0 or n_neg == 0:
            raise DegenerateClassError(
                "balanced risk needs both classes present "
                f"(counts: +1 -> {n_pos}, -1 -> {n_neg})"
            )
    margins = data.labels * score(data.features)
    return weighted_empirical(data, lambda X, y: loss.phi(margins), q=q)


def zero_one_am_risk(
    data: LabeledDataset, classifier: Callable[[np.ndarray], np.ndarray]
) -> float:
    """Average of the two class-conditional error rates.

    ``classifier`` maps an (m, d) feature block to m labels in {-1, +1}.
    """
    n_pos, n_neg = data.class_counts()
    if n_pos == 0 or n_neg == 0:
        raise DegenerateClassError(
            "AM risk needs both classes present "
            f"(counts: +1 -> {n_pos}, -1 -> {n_neg})"
        )
    preds = np.asarray(classifier(data.features))
    if preds.shape != (data.n,):
        raise ValueError(
            f"classifier must return one label per row, got shape {preds.shape}"
        )
    if not np.all(np.isin(preds, (-1, 1))):
        raise ValueError("classifier must return labels in {-1, +1}")
    pos = data.positive_mask
    err_pos = float(np.count_nonzero(preds[pos] == -1)) / n_pos
    err_neg = float(np.count_nonzero(preds[~pos] == 1)) / n_neg
    return 0.5 * (err_pos + err_neg)


def _class_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    pos = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    neg = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    return pos, neg


def _class_weights(p: float, q: Optional[float]) -> tuple[float, float]:
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if q is None:
        return 1.0, 1.0
    q = float(q)
    if not (0.0 < q < 1.0):
        raise ValueError(f"q must lie in (0, 1), got {q}")
    return p / q, (1.0 - p) / (1.0 - q)


def mc_weighted_risk(
    sampler: ClassSampler,
    score: LinearScore,
    loss: LossSpec,
    p: float,
    draws_per_class: int,
    seed: int = 0,
    q: Optional[float] = None,
) -> MCEstimate:
    """Monte Carlo estimate of the weighted population risk R_q.

    With ``q=None`` this is the balanced risk, the average of the two
    class-conditional expected losses.  An explicit q reweights the
    class terms by p/q and (1-p)/(1-q), matching the population measure
    that averages the label slices scaled by 1/q and 1/(1-q).

    Draws are generated from two fixed substreams keyed by (seed, class),
    so the result is reproducible and independent of any outer threading.
    """
    if draws_per_class < 2:
        raise ValueError("draws_per_class must be at least 2")
    w_pos, w_neg = _class_weights(p, q)
    rng_pos, rng_neg = _class_rngs(seed)
    losses_pos = loss.phi(sampler(1, draws_per_class, rng_pos) @ score.beta)
    losses_neg = loss.phi(-(sampler(-1, draws_per_class, rng_neg) @ score.beta))
    value = 0.5 * (w_pos * float(losses_pos.mean()) + w_neg * float(losses_neg.mean()))
    var = (
        w_pos**2 * float(losses_pos.var(ddof=1))
        + w_neg**2 * float(losses_neg.var(ddof=1))
    ) / draws_per_class
    return MCEstimate(value, 0.5 * float(np.sqrt(var)), 2 * draws_per_class)


def mc_weighted_excess(
    sampler: ClassSampler,
    score: LinearScore,
    ref_score: LinearScore,
    loss: LossSpec,
    p: float,
    draws_per_class: int,
    seed: int = 0,
    q: Optional[float] = None,
) -> MCEstimate:
    """Paired Monte Carlo estimate of R_q(score) - R_q(ref_score).

    Both risks are evaluated on the same draws, so the loss difference
    is averaged directly.  On heavy-tailed feature distributions the
    individual losses may have infinite variance while the difference,
    being Lipschitz in the score, does not; pairing is then essential.
    """
    if draws_per_class < 2:
        raise ValueError("draws_per_class must be at least 2")
    w_pos, w_neg = _class_weights(p, q)
    rng_pos, rng_neg = _class_rngs(seed)
    X_pos = sampler(1, draws_per_class, rng_pos)
    X_neg = sampler(-1, draws_per_class, rng_neg)
    diff_pos = loss.phi(X_pos @ score.beta) - loss.phi(X_pos @ ref_score.beta)
    diff_neg = loss.phi(-(X_neg @ score.beta)) - loss.phi(-(X_neg @ ref_score.beta))
    value = 0.5 * (w_pos * float(diff_pos.mean()) + w_neg * float(diff_neg.mean()))
    var = (
        w_pos**2 * float(diff_pos.var(ddof=1))
        + w_neg**2 * float(diff_neg.var(ddof=1))
    ) / draws_per_class
    return MCEstimate(value, 0.5 * float(np.sqrt(var)), 2 * draws_per_class)
