"""Linear scores and margin losses.

A linear score is x -> beta . x and a margin loss is a convex decreasing
phi applied to the margin y * (beta . x).  Each loss carries the interval
constants used by the deviation bounds: on margins confined to [-M, M],
``deriv_bound`` is a bound on |phi'| and ``curvature_min`` is a lower
bound on phi'' (zero when the loss is not strongly convex there).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class LinearScore:
    """Linear scoring rule x -> beta . x.

    ``norm_cap``, when given, records the constraint radius the score
    was fitted under; construction checks ||beta|| <= norm_cap with
    1e-9 absolute slack.
    """

    beta: np.ndarray
    norm_cap: float | None = None

    def __post_init__(self) -> None:
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1:
            raise ValueError(f"beta must be 1-D, got shape {beta.shape}")
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta must be finite")
        self.beta = beta
        if self.norm_cap is not None:
            cap = float(self.norm_cap)
            if not (cap > 0):
                raise ValueError(f"norm_cap must be positive, got {cap}")
            if float(np.linalg.norm(beta)) > cap + 1e-9:
                raise ValueError(
                    f"||beta|| = {np.linalg.norm(beta):.6g} exceeds norm_cap {cap:.6g}"
                )
            self.norm_cap = cap

    @property
    def dim(self) -> int:
        return self.beta.shape[0]

    def __call__(self, features: np.ndarray) -> np.ndarray:
        """Evaluate beta . x row-wise; accepts (d,) or (m, d)."""
        features = np.asarray(features, dtype=np.float64)
        return features @ self.beta


@dataclass(frozen=True)
class LossSpec:
    """Margin loss phi with derivative and interval constants.

    ``phi`` and ``phi_prime`` are vectorized callables of the margin.
    ``phi_curvature`` is the pointwise second derivative (one-sided at
    kinks).  ``interval_bound`` is the margin radius M the constants
    refer to: ``deriv_bound`` >= sup_{|t|<=M} |phi'(t)| and
    ``curvature_min`` <= inf_{|t|<=M} phi''(t).
    """

    name: str
    phi: Callable[[np.ndarray], np.ndarray]
    phi_prime: Callable[[np.ndarray], np.ndarray]
    phi_curvature: Callable[[np.ndarray], np.ndarray]
    interval_bound: float
    deriv_bound: float
    curvature_min: float


def _logistic_phi(t: np.ndarray) -> np.ndarray:
    # log(1 + e^-t) evaluated without overflow on either tail
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = np.log1p(np.exp(-t[pos]))
    out[~pos] = -t[~pos] + np.log1p(np.exp(t[~pos]))
    return out


def _logistic_phi_prime(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    e = np.exp(-t[pos])
    out[pos] = -e / (1.0 + e)
    e = np.exp(t[~pos])
    out[~pos] = -1.0 / (1.0 + e)
    return out


def _logistic_phi_curvature(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    e = np.exp(-np.abs(t))
    return e / (1.0 + e) ** 2


def _exponential_phi(t: np.ndarray) -> np.ndarray:
    # overflow to inf is meaningful here (the risk really is that large)
    with np.errstate(over="ignore"):
        return np.exp(-np.asarray(t, dtype=np.float64))


def _exponential_phi_prime(t: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return -np.exp(-np.asarray(t, dtype=np.float64))


def _squared_phi(t: np.ndarray) -> np.ndarray:
    return (1.0 - np.asarray(t, dtype=np.float64)) ** 2


def _squared_phi_prime(t: np.ndarray) -> np.ndarray:
    return 2.0 * (np.asarray(t, dtype=np.float64) - 1.0)


def _squared_phi_curvature(t: np.ndarray) -> np.ndarray:
    return np.full_like(np.asarray(t, dtype=np.float64), 2.0)


def _squared_hinge_phi(t: np.ndarray) -> np.ndarray:
    return np.maximum(1.0 - np.asarray(t, dtype=np.float64), 0.0) ** 2


def _squared_hinge_phi_prime(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return -2.0 * np.maximum(1.0 - t, 0.0)


def _squared_hinge_phi_curvature(t: np.ndarray) -> np.ndarray:
    # left second derivative at the kink t = 1
    t = np.asarray(t, dtype=np.float64)
    return np.where(t <= 1.0, 2.0, 0.0)


LOSS_NAMES = ("logistic", "exponential", "squared", "squared_hinge")


def make_loss(name: str, interval_bound: float = 1.0) -> LossSpec:
    """Build a LossSpec with constants valid on margins in [-M, M].

    For the logistic loss |phi'| <= 1/(1+e^-M) and phi'' >= phi''(M);
    for the exponential loss the bounds are e^M and e^-M; the squared
    loss has |phi'| <= 2(1+M) and phi'' = 2; the squared hinge shares
    the derivative bound but is flat for t > 1, so curvature_min = 0
    once M > 1.
    """
    M = float(interval_bound)
    if not (M > 0 and math.isfinite(M)):
        raise ValueError(f"interval_bound must be positive and finite, got {M}")
    if name == "logistic":
        sig = 1.0 / (1.0 + math.exp(-M))
        return LossSpec(
            name=name,
            phi=_logistic_phi,
            phi_prime=_logistic_phi_prime,
            phi_curvature=_logistic_phi_curvature,
            interval_bound=M,
            deriv_bound=sig,
            curvature_min=sig * (1.0 - sig),
        )
    if name == "exponential":
        return LossSpec(
            name=name,
            phi=_exponential_phi,
            phi_prime=_exponential_phi_prime,
            phi_curvature=_exponential_phi,
            interval_bound=M,
            deriv_bound=math.exp(M),
            curvature_min=math.exp(-M),
        )
    if name == "squared":
        return LossSpec(
            name=name,
            phi=_squared_phi,
            phi_prime=_squared_phi_prime,
            phi_curvature=_squared_phi_curvature,
            interval_bound=M,
            deriv_bound=2.0 * (1.0 + M),
            curvature_min=2.0,
        )
    if name == "squared_hinge":
        return LossSpec(
            name=name,
            phi=_squared_hinge_phi,
            phi_prime=_squared_hinge_phi_prime,
            phi_curvature=_squared_hinge_phi_curvature,
            interval_bound=M,
            deriv_bound=2.0 * (1.0 + M),
            curvature_min=2.0 if M < 1.0 else 0.0,
        )
    raise ValueError(f"unknown loss {name!r}; expected one of {LOSS_NAMES}")


def project_ball(beta: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of beta onto the ball of the given radius."""
    if not (radius > 0):
        raise ValueError(f"radius must be positive, got {radius}")
    beta = np.asarray(beta, dtype=np.float64)
    norm = float(np.linalg.norm(beta))
    if norm <= radius:
        return beta.copy()
    return beta * (radius / norm)
