"""Constrained balanced empirical risk minimization for linear scores.

The estimator minimizes the class-weighted empirical margin risk

    R_{n,q}(beta) = (1/2n) sum_i w_i phi(y_i beta.x_i),
    w_i = 1/q for y_i = +1 and 1/(1-q) for y_i = -1,

over the Euclidean ball |beta| <= u, by projected gradient descent with
Armijo backtracking.  In balanced mode q is the empirical positive
frequency.  The solver is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .bounds import bernstein_constant_linear
from .measures import (
    ClassSampler,
    DegenerateClassError,
    LabeledDataset,
    estimate_class_prob,
)
from .scoring import LinearScore, LossSpec, project_ball

_ARMIJO_C = 1e-4
_MAX_HALVINGS = 60


@dataclass(frozen=True)
class OptimizerConfig:
    """Projected-gradient settings.

    ``step_rule`` is "backtracking" (Armijo with halving from 1/L) or
    "fixed" (constant 1/L).  The stop test is on the projected-gradient
    norm at scale 1/L: stop when it falls below tol_grad * (1 + |obj|).
    """

    max_iters: int = 10000
    step_rule: str = "backtracking"
    tol_grad: float = 1e-8

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.step_rule not in ("backtracking", "fixed"):
            raise ValueError(f"unknown step_rule {self.step_rule!r}")
        if not (self.tol_grad > 0):
            raise ValueError("tol_grad must be positive")


@dataclass
class FitResult:
    """Fitted score with solver diagnostics."""

    score: LinearScore
    objective: float
    grad_norm: float
    iterations: int
    converged: bool
    reason: str
    q: float


def _class_weights_vector(labels: np.ndarray, q: float) -> np.ndarray:
    return np.where(labels == 1, 1.0 / q, 1.0 / (1.0 - q))


def _resolve_fit_q(data: LabeledDataset, q: Optional[float]) -> float:
    n_pos, n_neg = data.class_counts()
    if n_pos == 0 or n_neg == 0:
        raise DegenerateClassError(
            "constrained balanced fitting needs both classes "
            f"(counts: +1 -> {n_pos}, -1 -> {n_neg})"
        )
    if q is None:
        return estimate_class_prob(data)
    q = float(q)
    if not (0.0 < q < 1.0):
        raise ValueError(f"q must lie in (0, 1), got {q}")
    return q


def balanced_risk_gradient(
    data: LabeledDataset,
    score: LinearScore,
    loss: LossSpec,
    q: Optional[float] = None,
) -> np.ndarray:
    """Gradient of R_{n,q} at the score: (1/2n) sum w_i phi'(m_i) y_i x_i."""
    q = _resolve_fit_q(data, q)
    xy = data.features * data.labels[:, None].astype(np.float64)
    margins = xy @ score.beta
    w = _class_weights_vector(data.labels, q)
    return (xy.T @ (w * loss.phi_prime(margins))) * (0.5 / data.n)


def _curvature_sup(loss: LossSpec, margin_bound: float) -> float:
    # the grid contains 0 and both endpoints, where each supported loss
    # attains its curvature supremum
    grid = np.linspace(-margin_bound, margin_bound, 4097)
    return float(loss.phi_curvature(grid).max())


def _lipschitz_bound(
    data: LabeledDataset, loss: LossSpec, u: float, w: np.ndarray
) -> float:
    xy = data.features * data.labels[:, None].astype(np.float64)
    quad = (xy * w[:, None]).T @ xy / (2.0 * data.n)
    lam = float(np.linalg.eigvalsh(quad)[-1])
    row_norms = np.linalg.norm(data.features, axis=1)
    margin_bound = u * float(row_norms.max()) if data.n else 0.0
    curv = _curvature_sup(loss, max(margin_bound, 1e-12))
    lip = curv * lam
    return lip if lip > 0 else 1.0


def fit_constrained_balanced_erm(
    data: LabeledDataset,
    loss: LossSpec,
    u: float,
    q: Optional[float] = None,
    config: Optional[OptimizerConfig] = None,
) -> FitResult:
    """Minimize the class-weighted empirical risk over |beta| <= u.

    Projected gradient from beta = 0 with Armijo backtracking (halving,
    c = 1e-4).  The first trial step is 1/L with L the exact largest
    eigenvalue of the curvature-bound matrix
    sup(phi'') * (1/2n) sum w_i x_i x_i^T; later iterations open with
    the Barzilai-Borwein spectral step, which adapts to the local
    curvature (a lone heavy-tailed training point can make the global
    1/L absurdly small and the landscape badly conditioned).  Stops
    when the projected-gradient norm at scale 1/L falls below
    tol_grad * (1 + |objective|).
    """
    if not (u > 0 and np.isfinite(u)):
        raise ValueError(f"u must be positive and finite, got {u}")
    config = config or OptimizerConfig()
    q = _resolve_fit_q(data, q)
    w = _class_weights_vector(data.labels, q)
    xy = data.features * data.labels[:, None].astype(np.float64)
    half_w = 0.5 * w / data.n

    def objective(beta: np.ndarray) -> float:
        return float(half_w @ loss.phi(xy @ beta))

    def gradient(beta: np.ndarray) -> np.ndarray:
        return xy.T @ (half_w * loss.phi_prime(xy @ beta))

    step0 = 1.0 / _lipschitz_bound(data, loss, u, w)
    beta = np.zeros(data.dim)
    f = objective(beta)
    step_open = step0
    prev_beta: Optional[np.ndarray] = None
    prev_grad: Optional[np.ndarray] = None
    iterations = 0
    reason = "max_iters"
    converged = False
    grad_norm = float("inf")
    for iterations in range(1, config.max_iters + 1):
        g = gradient(beta)
        base_cand = project_ball(beta - step0 * g, u)
        grad_norm = float(np.linalg.norm(beta - base_cand)) / step0
        if grad_norm <= config.tol_grad * (1.0 + abs(f)):
            iterations -= 1
            reason = "projected_gradient"
            converged = True
            break
        if config.step_rule == "fixed":
            beta = base_cand
            f = objective(beta)
            continue
        if prev_beta is not None:
            diff_b = beta - prev_beta
            diff_g = g - prev_grad
            curv = float(diff_b @ diff_g)
            if curv > 0:
                step_open = float(diff_b @ diff_b) / curv
        step = step_open
        accepted = False
        for _ in range(_MAX_HALVINGS):
            cand = project_ball(beta - step * g, u)
            f_cand = objective(cand)
            if f_cand <= f + _ARMIJO_C * float(g @ (cand - beta)):
                prev_beta, prev_grad = beta, g
                beta, f = cand, f_cand
                step_open = 2.0 * step
                accepted = True
                break
            step *= 0.5
        if not accepted:
            reason = "line_search_stalled"
            break
    return FitResult(
        score=LinearScore(beta, norm_cap=u),
        objective=f,
        grad_norm=grad_norm,
        iterations=iterations,
        converged=converged,
        reason=reason,
        q=q,
    )


def _child_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence((seed, tag)).generate_state(1)[0])


def build_class_conditional_sample(
    sampler: ClassSampler, p: float, draws: int, seed: int
) -> LabeledDataset:
    """Draw a labeled sample with deterministic class counts round(draws*p).

    Both counts are clamped to at least 1 so the balanced machinery is
    always applicable.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if draws < 2:
        raise ValueError("draws must be at least 2")
    n_pos = min(max(int(round(draws * p)), 1), draws - 1)
    n_neg = draws - n_pos
    rng_pos = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    rng_neg = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    features = np.vstack([sampler(1, n_pos, rng_pos), sampler(-1, n_neg, rng_neg)])
    labels = np.concatenate([np.ones(n_pos, dtype=np.int8), -np.ones(n_neg, dtype=np.int8)])
    return LabeledDataset(features, labels)


def estimate_oracle_score(
    sampler: ClassSampler,
    loss: LossSpec,
    u: float,
    p: float,
    draws: int,
    seed: int = 0,
    q: Optional[float] = None,
    config: Optional[OptimizerConfig] = None,
) -> LinearScore:
    """Fit the population minimizer surrogate on a large fresh sample.

    The sample has class counts fixed to round(draws * p), so balanced
    fitting on it weights by (essentially) the true p rather than a
    noisy empirical frequency.
    """
    sample = build_class_conditional_sample(sampler, p, draws, seed)
    return fit_constrained_balanced_erm(sample, loss, u, q=q, config=config).score


@dataclass
class BernsteinCheck:
    """Empirical second-moment-to-mean ratios against the analytic bound."""

    ratios: np.ndarray
    stderrs: np.ndarray
    analytic_bound: float
    sigma_max: float
    sigma_min: float
    skipped: int

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max()) if self.ratios.size else float("nan")


def _sample_in_ball(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    return direction * radius * rng.random() ** (1.0 / dim)


def bernstein_empirical_check(
    sampler: ClassSampler,
    loss: LossSpec,
    u: float,
    p: float,
    q: float,
    num_scores: int,
    draws: int,
    seed: int = 0,
    ref_score: Optional[LinearScore] = None,
    oracle_draws: int = 100_000,
    mean_floor: float = 1e-6,
) -> BernsteinCheck:
    """Estimate sup P h^2 / P h over random feasible scores.

    h is the weighted excess loss h(x, y) = (1-q) dl on positives and
    q dl on negatives, dl being the loss gap to the reference score.
    The analytic bound is D^2 sigma_max^2 / (mu sigma_min^2) with D and
    mu the loss derivative and curvature constants and sigma the extreme
    singular values of the class second-moment matrices, here estimated
    from the same evaluation draws.  Scores whose mean P h falls below
    ``mean_floor`` are skipped: the ratio is then pure noise.
    """
    if not (0.0 < q < 1.0):
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if ref_score is None:
        ref_score = estimate_oracle_score(
            sampler, loss, u, p, oracle_draws, seed=_child_seed(seed, 3), q=q
        )
    rng_pos = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    rng_neg = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    X_pos = sampler(1, draws, rng_pos)
    X_neg = sampler(-1, draws, rng_neg)
    dim = X_pos.shape[1]

    second_pos = X_pos.T @ X_pos / draws
    second_neg = X_neg.T @ X_neg / draws
    eigs = np.concatenate(
        [np.linalg.eigvalsh(second_pos), np.linalg.eigvalsh(second_neg)]
    )
    sigma_max = float(np.sqrt(eigs.max()))
    sigma_min = float(np.sqrt(eigs.min()))
    analytic = bernstein_constant_linear(
        loss.deriv_bound, loss.curvature_min, sigma_max, sigma_min
    )

    ref_pos = loss.phi(X_pos @ ref_score.beta)
    ref_neg = loss.phi(-(X_neg @ ref_score.beta))
    rng_scores = np.random.default_rng(np.random.SeedSequence((seed, 2)))
    ratios: list[float] = []
    stderrs: list[float] = []
    skipped = 0
    for _ in range(num_scores):
        beta = _sample_in_ball(rng_scores, dim, u)
        h_pos = (1.0 - q) * (loss.phi(X_pos @ beta) - ref_pos)
        h_neg = q * (loss.phi(-(X_neg @ beta)) - ref_neg)
        mean_h = p * float(h_pos.mean()) + (1.0 - p) * float(h_neg.mean())
        if mean_h < mean_floor:
            skipped += 1
            continue
        sq_pos = h_pos * h_pos
        sq_neg = h_neg * h_neg
        mean_sq = p * float(sq_pos.mean()) + (1.0 - p) * float(sq_neg.mean())
        ratio = mean_sq / mean_h
        var_a = (
            p**2 * float(sq_pos.var(ddof=1)) + (1 - p) ** 2 * float(sq_neg.var(ddof=1))
        ) / draws
        var_b = (
            p**2 * float(h_pos.var(ddof=1)) + (1 - p) ** 2 * float(h_neg.var(ddof=1))
        ) / draws
        cov = (
            p**2 * float(np.cov(sq_pos, h_pos, ddof=1)[0, 1])
            + (1 - p) ** 2 * float(np.cov(sq_neg, h_neg, ddof=1)[0, 1])
        ) / draws
        var_ratio = max(var_a - 2 * ratio * cov + ratio**2 * var_b, 0.0) / mean_h**2
        ratios.append(ratio)
        stderrs.append(float(np.sqrt(var_ratio)))
    return BernsteinCheck(
        ratios=np.asarray(ratios),
        stderrs=np.asarray(stderrs),
        analytic_bound=analytic,
        sigma_max=sigma_max,
        sigma_min=sigma_min,
        skipped=skipped,
    )
